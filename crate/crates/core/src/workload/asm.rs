//! A minimal assembler: raw encodings, labels, rel32 fixups, and a running
//! execution multiplicity attached to every emitted instruction.

use std::collections::HashMap;

use crate::decode::{InsnClass, MemAccess};

use super::{EncodedInsn, MemOperand, WorkloadError};

pub(crate) struct Asm {
    base: u64,
    code: Vec<u8>,
    insns: Vec<EncodedInsn>,
    labels: HashMap<&'static str, u64>,
    fixups: Vec<Fixup>,
    mult: u64,
}

struct Fixup {
    offset: usize,
    next_ip: u64,
    label: &'static str,
}

pub(crate) const OP_JZ: u8 = 0x84;
pub(crate) const OP_JNZ: u8 = 0x85;

impl Asm {
    pub fn new(base: u64) -> Self {
        Asm { base, code: Vec::new(), insns: Vec::new(), labels: HashMap::new(), fixups: Vec::new(), mult: 1 }
    }

    pub fn here(&self) -> u64 {
        self.base + self.code.len() as u64
    }

    /// Executions per window of instructions emitted from now on.
    pub fn times(&mut self, mult: u64) -> &mut Self {
        self.mult = mult;
        self
    }

    /// Advance to `addr`, filling the gap with `int3`.
    pub fn org(&mut self, addr: u64) -> Result<(), WorkloadError> {
        if addr < self.here() {
            return Err(WorkloadError::Layout(format!(
                "code overruns {addr:#x} (cursor at {:#x})",
                self.here()
            )));
        }
        let gap = (addr - self.here()) as usize;
        self.code.resize(self.code.len() + gap, 0xCC);
        Ok(())
    }

    pub fn label(&mut self, name: &'static str) -> u64 {
        let at = self.here();
        self.labels.insert(name, at);
        at
    }

    pub fn emit(&mut self, bytes: &[u8], class: InsnClass, mem: Option<MemOperand>) -> u64 {
        let addr = self.here();
        self.code.extend_from_slice(bytes);
        self.insns.push(EncodedInsn { addr, len: bytes.len() as u8, class, count: self.mult, mem });
        addr
    }

    pub fn other(&mut self, bytes: &[u8]) -> u64 {
        self.emit(bytes, InsnClass::Other, None)
    }

    pub fn jmp(&mut self, label: &'static str) {
        self.rel32(&[0xE9], label);
    }

    pub fn jcc(&mut self, op: u8, label: &'static str) {
        self.rel32(&[0x0F, op], label);
    }

    fn rel32(&mut self, opcode: &[u8], label: &'static str) {
        let mut bytes = opcode.to_vec();
        bytes.extend_from_slice(&[0; 4]);
        let addr = self.emit(&bytes, InsnClass::Branch, None);
        self.fixups.push(Fixup {
            offset: (addr - self.base) as usize + opcode.len(),
            next_ip: addr + bytes.len() as u64,
            label,
        });
    }

    /// `mov rcx, imm64`
    pub fn mov_rcx(&mut self, value: u64) {
        let mut b = vec![0x48, 0xB9];
        b.extend_from_slice(&value.to_le_bytes());
        self.other(&b);
    }

    /// `mov <reg64>, [abs32]` where `modrm_reg` selects the destination.
    pub fn load_abs(&mut self, modrm_reg: u8, addr: u64) {
        let mut b = vec![0x48, 0x8B, (modrm_reg << 3) | 0x04, 0x25];
        b.extend_from_slice(&(addr as u32).to_le_bytes());
        self.emit(&b, InsnClass::Load, Some(MemOperand::Fixed { addr, size: 8, access: MemAccess::Read }));
    }

    /// `mov [abs32], <reg64>`
    pub fn store_abs(&mut self, modrm_reg: u8, addr: u64) {
        let mut b = vec![0x48, 0x89, (modrm_reg << 3) | 0x04, 0x25];
        b.extend_from_slice(&(addr as u32).to_le_bytes());
        self.emit(&b, InsnClass::Store, Some(MemOperand::Fixed { addr, size: 8, access: MemAccess::Write }));
    }

    pub fn label_addr(&self, name: &str) -> Option<u64> {
        self.labels.get(name).copied()
    }

    pub fn finish(mut self) -> Result<(Vec<u8>, Vec<EncodedInsn>), WorkloadError> {
        for f in &self.fixups {
            let target = *self
                .labels
                .get(f.label)
                .ok_or_else(|| WorkloadError::Layout(format!("undefined label {}", f.label)))?;
            let rel = target as i64 - f.next_ip as i64;
            let rel = i32::try_from(rel).map_err(|_| WorkloadError::Layout(format!("{} out of rel32 range", f.label)))?;
            self.code[f.offset..f.offset + 4].copy_from_slice(&rel.to_le_bytes());
        }
        Ok((self.code, self.insns))
    }
}
