//! x86-64 instruction length decoding.
//!
//! This is a table-driven length decoder for the legacy one-byte and `0F`
//! two/three-byte opcode maps in 64-bit mode. It reports the encoded length,
//! a coarse class (used for instruction-type filtering and probe planning),
//! whether the instruction carries a RIP-relative operand, and a best-effort
//! memory access direction. VEX/EVEX/XOP, 3DNow! and PadLock encodings are reported as
//! unsupported rather than guessed.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Architectural upper bound on instruction length.
pub const MAX_INSN_LEN: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsnClass {
    /// Direct or indirect jumps, conditional jumps and loop instructions.
    Branch,
    Call,
    Ret,
    Syscall,
    /// Instructions that raise an exception by design (`int3`, `ud2`, `hlt`, ...).
    Trap,
    Nop,
    /// Reads memory and does not write it.
    Load,
    /// Writes memory (including read-modify-write forms).
    Store,
    Other,
}

impl InsnClass {
    pub fn is_control_transfer(self) -> bool {
        matches!(self, InsnClass::Branch | InsnClass::Call | InsnClass::Ret)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InsnClass::Branch => "branch",
            InsnClass::Call => "call",
            InsnClass::Ret => "ret",
            InsnClass::Syscall => "syscall",
            InsnClass::Trap => "trap",
            InsnClass::Nop => "nop",
            InsnClass::Load => "load",
            InsnClass::Store => "store",
            InsnClass::Other => "other",
        }
    }
}

impl fmt::Display for InsnClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for InsnClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "branch" => InsnClass::Branch,
            "call" => InsnClass::Call,
            "ret" => InsnClass::Ret,
            "syscall" => InsnClass::Syscall,
            "trap" => InsnClass::Trap,
            "nop" => InsnClass::Nop,
            "load" => InsnClass::Load,
            "store" => InsnClass::Store,
            "other" => InsnClass::Other,
            _ => return Err(format!("unknown instruction class `{s}`")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemAccess {
    Read,
    Write,
    ReadWrite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decoded {
    pub len: usize,
    pub class: InsnClass,
    pub mem: Option<MemAccess>,
    pub rip_relative: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("instruction bytes end before the instruction does")]
    Truncated,
    #[error("invalid opcode {0:#04x} in 64-bit mode")]
    Invalid(u8),
    #[error("unsupported encoding (opcode {0:#04x})")]
    Unsupported(u8),
    #[error("instruction exceeds 15 bytes")]
    TooLong,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Imm {
    None,
    B1,
    B2,
    /// 16 or 32 bits depending on operand size.
    Z,
    /// `enter`: imm16 + imm8.
    B3,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn next(&mut self) -> Result<u8, DecodeError> {
        if self.pos >= MAX_INSN_LEN {
            return Err(DecodeError::TooLong);
        }
        let b = *self.bytes.get(self.pos).ok_or(DecodeError::Truncated)?;
        self.pos += 1;
        Ok(b)
    }

    fn peek(&self) -> Result<u8, DecodeError> {
        self.bytes.get(self.pos).copied().ok_or(DecodeError::Truncated)
    }

    fn skip(&mut self, n: usize) -> Result<(), DecodeError> {
        let end = self.pos + n;
        if end > MAX_INSN_LEN {
            return Err(DecodeError::TooLong);
        }
        if end > self.bytes.len() {
            return Err(DecodeError::Truncated);
        }
        self.pos = end;
        Ok(())
    }
}

struct ModRm {
    md: u8,
    reg: u8,
    rip_relative: bool,
}

impl ModRm {
    fn is_mem(&self) -> bool {
        self.md != 3
    }
}

fn read_modrm(c: &mut Cursor<'_>) -> Result<ModRm, DecodeError> {
    let m = c.next()?;
    let md = m >> 6;
    let reg = (m >> 3) & 7;
    let rm = m & 7;
    let mut rip_relative = false;
    if md != 3 {
        if rm == 4 {
            let sib = c.next()?;
            if md == 0 && sib & 7 == 5 {
                c.skip(4)?;
            }
        } else if md == 0 && rm == 5 {
            rip_relative = true;
            c.skip(4)?;
        }
        match md {
            1 => c.skip(1)?,
            2 => c.skip(4)?,
            _ => {}
        }
    }
    Ok(ModRm { md, reg, rip_relative })
}

/// Decode the instruction at the start of `bytes`.
pub fn decode(bytes: &[u8]) -> Result<Decoded, DecodeError> {
    let mut c = Cursor { bytes, pos: 0 };
    let mut opsize16 = false;
    let mut addr32 = false;
    let mut rep = false;
    let mut last_rep = 0u8;
    let mut rex_w = false;

    let mut op = loop {
        let b = c.next()?;
        match b {
            0x66 => opsize16 = true,
            0x67 => addr32 = true,
            0xF2 | 0xF3 => {
                rep = true;
                last_rep = b;
            }
            0xF0 | 0x2E | 0x36 | 0x3E | 0x26 | 0x64 | 0x65 => {}
            0x40..=0x4F => {
                // REX only counts when it immediately precedes the opcode.
                let next = c.peek()?;
                if is_legacy_prefix(next) || (0x40..=0x4F).contains(&next) {
                    continue;
                }
                rex_w = b & 0x08 != 0;
            }
            _ => break b,
        }
    };

    let immz = if opsize16 && !rex_w { Imm::B2 } else { Imm::Z };
    let z_len = |imm: Imm| match imm {
        Imm::Z => 4,
        Imm::B2 => 2,
        Imm::B1 => 1,
        Imm::B3 => 3,
        Imm::None => 0,
    };

    if op == 0x0F {
        op = c.next()?;
        // extrq/insertq carry two immediates; plain 0F 78 is vmread
        let sse4a = op == 0x78 && (opsize16 || last_rep == 0xF2);
        return decode_0f(&mut c, op, rep, sse4a);
    }

    let mut class = InsnClass::Other;
    let mut mem = None;
    let mut rip_relative = false;
    let mut imm = Imm::None;

    let modrm_access = |m: &ModRm, a: MemAccess| if m.is_mem() { Some(a) } else { None };

    match op {
        0x00..=0x3F if op & 7 < 4 => {
            let m = read_modrm(&mut c)?;
            rip_relative = m.rip_relative;
            let access = match (op & 0x38 == 0x38, op & 2 != 0) {
                // cmp never writes
                (true, _) => MemAccess::Read,
                (false, true) => MemAccess::Read,
                (false, false) => MemAccess::ReadWrite,
            };
            mem = modrm_access(&m, access);
        }
        0x00..=0x3F => match op & 7 {
            4 => imm = Imm::B1,
            5 => imm = immz,
            _ => return Err(DecodeError::Invalid(op)),
        },
        0x50..=0x5F => {}
        0x60 | 0x61 | 0x82 | 0x9A | 0xC4 | 0xC5 | 0xCE | 0xD4 | 0xD5 | 0xD6 | 0xEA => {
            return Err(if matches!(op, 0xC4 | 0xC5) {
                DecodeError::Unsupported(op)
            } else {
                DecodeError::Invalid(op)
            });
        }
        0x62 => return Err(DecodeError::Unsupported(op)),
        0x63 => {
            let m = read_modrm(&mut c)?;
            rip_relative = m.rip_relative;
            mem = modrm_access(&m, MemAccess::Read);
        }
        0x68 => imm = immz,
        0x69 | 0x6B => {
            let m = read_modrm(&mut c)?;
            rip_relative = m.rip_relative;
            mem = modrm_access(&m, MemAccess::Read);
            imm = if op == 0x69 { immz } else { Imm::B1 };
        }
        0x6A => imm = Imm::B1,
        0x6C..=0x6F => {}
        0x70..=0x7F => {
            class = InsnClass::Branch;
            imm = Imm::B1;
        }
        0x80 | 0x81 | 0x83 => {
            let m = read_modrm(&mut c)?;
            rip_relative = m.rip_relative;
            let a = if m.reg == 7 { MemAccess::Read } else { MemAccess::ReadWrite };
            mem = modrm_access(&m, a);
            imm = if op == 0x81 { immz } else { Imm::B1 };
        }
        0x8F if c.peek()? & 0x38 != 0 => return Err(DecodeError::Unsupported(op)),
        0x84..=0x8F => {
            let m = read_modrm(&mut c)?;
            rip_relative = m.rip_relative;
            let a = match op {
                0x84 | 0x85 | 0x8A | 0x8B | 0x8E => Some(MemAccess::Read),
                0x86 | 0x87 => Some(MemAccess::ReadWrite),
                0x88 | 0x89 | 0x8C | 0x8F => Some(MemAccess::Write),
                _ => None, // lea
            };
            mem = a.and_then(|a| modrm_access(&m, a));
        }
        0x90 => {
            if !rep {
                class = InsnClass::Nop;
            }
        }
        0x91..=0x99 | 0x9B..=0x9F => {}
        0xA0..=0xA3 => {
            // moffs: absolute address, not RIP-relative
            c.skip(if addr32 { 4 } else { 8 })?;
            mem = Some(if op < 0xA2 { MemAccess::Read } else { MemAccess::Write });
        }
        0xA4 | 0xA5 => mem = Some(MemAccess::ReadWrite),
        0xA6 | 0xA7 | 0xAC..=0xAF => mem = Some(MemAccess::Read),
        0xAA | 0xAB => mem = Some(MemAccess::Write),
        0xA8 => imm = Imm::B1,
        0xA9 => imm = immz,
        0xB0..=0xB7 => imm = Imm::B1,
        0xB8..=0xBF => {
            if rex_w {
                c.skip(8)?;
            } else {
                imm = immz;
            }
        }
        0xC0 | 0xC1 | 0xD0..=0xD3 => {
            let m = read_modrm(&mut c)?;
            rip_relative = m.rip_relative;
            mem = modrm_access(&m, MemAccess::ReadWrite);
            if op < 0xD0 {
                imm = Imm::B1;
            }
        }
        0xC2 | 0xCA => {
            class = InsnClass::Ret;
            imm = Imm::B2;
        }
        0xC3 | 0xCB | 0xCF => class = InsnClass::Ret,
        0xC6 | 0xC7 => {
            let m = read_modrm(&mut c)?;
            rip_relative = m.rip_relative;
            if m.md == 3 && m.reg == 7 {
                // xabort / xbegin
                if op == 0xC7 {
                    class = InsnClass::Branch;
                    imm = immz;
                } else {
                    imm = Imm::B1;
                }
            } else {
                mem = modrm_access(&m, MemAccess::Write);
                imm = if op == 0xC6 { Imm::B1 } else { immz };
            }
        }
        0xC8 => imm = Imm::B3,
        0xC9 => {}
        0xCC | 0xF1 | 0xF4 => class = InsnClass::Trap,
        0xCD => {
            class = InsnClass::Trap;
            imm = Imm::B1;
        }
        0xD7 => mem = Some(MemAccess::Read),
        0xD8..=0xDF => {
            let m = read_modrm(&mut c)?;
            rip_relative = m.rip_relative;
            mem = modrm_access(&m, MemAccess::Read);
        }
        0xE0..=0xE3 | 0xEB => {
            class = InsnClass::Branch;
            imm = Imm::B1;
        }
        0xE4..=0xE7 => imm = Imm::B1,
        0xE8 => {
            class = InsnClass::Call;
            imm = Imm::Z;
        }
        0xE9 => {
            class = InsnClass::Branch;
            imm = Imm::Z;
        }
        0xEC..=0xEF | 0xF5 | 0xF8..=0xFD => {}
        0xF6 | 0xF7 => {
            let m = read_modrm(&mut c)?;
            rip_relative = m.rip_relative;
            let a = if matches!(m.reg, 2 | 3) { MemAccess::ReadWrite } else { MemAccess::Read };
            mem = modrm_access(&m, a);
            if m.reg < 2 {
                imm = if op == 0xF6 { Imm::B1 } else { immz };
            }
        }
        0xFE | 0xFF => {
            let m = read_modrm(&mut c)?;
            rip_relative = m.rip_relative;
            match (op, m.reg) {
                (_, 0) | (_, 1) => mem = modrm_access(&m, MemAccess::ReadWrite),
                (0xFF, 2) | (0xFF, 3) => {
                    class = InsnClass::Call;
                    mem = modrm_access(&m, MemAccess::Read);
                }
                (0xFF, 4) | (0xFF, 5) => {
                    class = InsnClass::Branch;
                    mem = modrm_access(&m, MemAccess::Read);
                }
                (0xFF, 6) => mem = modrm_access(&m, MemAccess::Read),
                _ => return Err(DecodeError::Invalid(op)),
            }
        }
        _ => return Err(DecodeError::Invalid(op)),
    }

    c.skip(z_len(imm))?;
    Ok(finish(c.pos, class, mem, rip_relative))
}

fn decode_0f(c: &mut Cursor<'_>, op: u8, rep: bool, sse4a: bool) -> Result<Decoded, DecodeError> {
    let mut class = InsnClass::Other;
    let mut mem = None;
    let mut rip_relative = false;
    let mut imm_len = 0;

    let invalid = matches!(
        op,
        0x04 | 0x0A | 0x0C | 0x24..=0x27 | 0x36 | 0x39 | 0x3B..=0x3F | 0x7A | 0x7B
    );
    if invalid {
        return Err(DecodeError::Invalid(op));
    }
    // 3DNow! and VIA PadLock
    if matches!(op, 0x0F | 0xA6 | 0xA7) {
        return Err(DecodeError::Unsupported(op));
    }

    let no_modrm = matches!(
        op,
        0x05..=0x09 | 0x0B | 0x0E | 0x30..=0x35 | 0x37 | 0x77 | 0x80..=0x8F | 0xA0..=0xA2 | 0xA8..=0xAA | 0xC8..=0xCF
    );

    if no_modrm {
        match op {
            0x05 | 0x07 | 0x34 | 0x35 => class = InsnClass::Syscall,
            0x0B => class = InsnClass::Trap,
            0x80..=0x8F => {
                // rel32 regardless of an operand-size prefix in 64-bit mode
                class = InsnClass::Branch;
                imm_len = 4;
            }
            _ => {}
        }
        c.skip(imm_len)?;
        return Ok(finish(c.pos, class, mem, rip_relative));
    }

    if op == 0x38 || op == 0x3A {
        let op3 = c.next()?;
        let m = read_modrm(c)?;
        rip_relative = m.rip_relative;
        let store = op == 0x3A && matches!(op3, 0x14..=0x17);
        mem = m.is_mem().then_some(if store { MemAccess::Write } else { MemAccess::Read });
        if op == 0x3A {
            c.skip(1)?;
        }
        return Ok(finish(c.pos, class, mem, rip_relative));
    }

    if matches!(op, 0x20..=0x23) {
        // mov to/from control and debug registers: mod is ignored
        c.next()?;
        return Ok(finish(c.pos, class, mem, rip_relative));
    }

    let m = read_modrm(c)?;
    rip_relative = m.rip_relative;

    let access = match op {
        0x0D | 0x18..=0x1F => {
            if op == 0x1F || (0x19..=0x1E).contains(&op) {
                class = InsnClass::Nop;
            }
            None
        }
        0x01 | 0x00 => Some(MemAccess::Read),
        0x11 | 0x13 | 0x17 | 0x29 | 0x2B | 0x7E | 0x7F | 0xC3 | 0xD6 | 0xE7 | 0x90..=0x9F => {
            // movss/movsd/movups (F3/F2/none 0F 11) are stores; 0F 7E without F3 stores to r/m
            if op == 0x7E && rep {
                Some(MemAccess::Read)
            } else {
                Some(MemAccess::Write)
            }
        }
        0xA3 => Some(MemAccess::Read),
        0xA4 | 0xA5 | 0xAB | 0xAC | 0xAD | 0xB0 | 0xB1 | 0xB3 | 0xBB | 0xC0 | 0xC1 | 0xC7 => {
            Some(MemAccess::ReadWrite)
        }
        0xBA => Some(if m.reg >= 5 { MemAccess::ReadWrite } else { MemAccess::Read }),
        0xAE => Some(match m.reg {
            0 | 3 | 4 | 6 => MemAccess::Write,
            _ => MemAccess::Read,
        }),
        0xB9 | 0xFF => {
            class = InsnClass::Trap;
            None
        }
        _ => Some(MemAccess::Read),
    };
    if m.is_mem() {
        mem = access;
    }

    if matches!(op, 0x70..=0x73 | 0xA4 | 0xAC | 0xBA | 0xC2 | 0xC4..=0xC6) {
        imm_len = 1;
    } else if sse4a {
        imm_len = 2;
    }
    c.skip(imm_len)?;
    Ok(finish(c.pos, class, mem, rip_relative))
}

fn finish(len: usize, class: InsnClass, mem: Option<MemAccess>, rip_relative: bool) -> Decoded {
    let class = match (class, mem) {
        (InsnClass::Other, Some(MemAccess::Read)) => InsnClass::Load,
        (InsnClass::Other, Some(_)) => InsnClass::Store,
        (c, _) => c,
    };
    Decoded { len, class, mem, rip_relative }
}

fn is_legacy_prefix(b: u8) -> bool {
    matches!(b, 0x66 | 0x67 | 0xF0 | 0xF2 | 0xF3 | 0x2E | 0x36 | 0x3E | 0x26 | 0x64 | 0x65)
}

/// Classify from a short opcode prefix (e.g. the word fetched at a stop).
///
/// Falls back to [`InsnClass::Other`] when the bytes are too short or not
/// decodable.
pub fn classify(bytes: &[u8]) -> InsnClass {
    decode(bytes).map(|d| d.class).unwrap_or(InsnClass::Other)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn len(bytes: &[u8]) -> usize {
        decode(bytes).unwrap().len
    }

    #[test]
    fn common_lengths() {
        assert_eq!(len(&[0x90]), 1);
        assert_eq!(len(&[0x31, 0xC0]), 2);
        assert_eq!(len(&[0x48, 0xFF, 0xC9]), 3);
        assert_eq!(len(&[0x48, 0x8D, 0x44, 0x20, 0x01]), 5);
        assert_eq!(len(&[0x48, 0xB9, 1, 2, 3, 4, 5, 6, 7, 8]), 10);
        assert_eq!(len(&[0x48, 0x8B, 0x1C, 0x25, 0, 0x50, 0x40, 0]), 8);
        assert_eq!(len(&[0x0F, 0x85, 0, 0, 0, 0]), 6);
        assert_eq!(len(&[0x0F, 0xB6, 0x80, 0, 0, 0, 0]), 7);
        assert_eq!(len(&[0x66, 0x0F, 0x1F, 0x44, 0x00, 0x00]), 6);
        assert_eq!(len(&[0x0F, 0x1F, 0x80, 0, 0, 0, 0]), 7);
        assert_eq!(len(&[0x66, 0x05, 0x34, 0x12]), 4);
        assert_eq!(len(&[0xC8, 0x10, 0x00, 0x01]), 4);
    }

    #[test]
    fn rip_relative_detected() {
        // mov rax, [rip+0x10]
        let d = decode(&[0x48, 0x8B, 0x05, 0x10, 0, 0, 0]).unwrap();
        assert!(d.rip_relative);
        assert_eq!(d.len, 7);
        assert_eq!(d.class, InsnClass::Load);
        // absolute disp32 through SIB is not RIP-relative
        let d = decode(&[0x48, 0x8B, 0x04, 0x25, 0x10, 0, 0, 0]).unwrap();
        assert!(!d.rip_relative);
    }

    #[test]
    fn classes() {
        assert_eq!(classify(&[0xE9, 0, 0, 0, 0]), InsnClass::Branch);
        assert_eq!(classify(&[0x75, 0x02]), InsnClass::Branch);
        assert_eq!(classify(&[0xE8, 0, 0, 0, 0]), InsnClass::Call);
        assert_eq!(classify(&[0xC3]), InsnClass::Ret);
        assert_eq!(classify(&[0x0F, 0x05]), InsnClass::Syscall);
        assert_eq!(classify(&[0xCC]), InsnClass::Trap);
        assert_eq!(classify(&[0x48, 0x89, 0x14, 0x25, 0, 0, 0, 0]), InsnClass::Store);
        assert_eq!(classify(&[0x48, 0x01, 0xDA]), InsnClass::Other);
        assert_eq!(classify(&[0xFF, 0xE0]), InsnClass::Branch);
    }

    #[test]
    fn errors() {
        assert_eq!(decode(&[]), Err(DecodeError::Truncated));
        assert_eq!(decode(&[0x48, 0xB8, 0]), Err(DecodeError::Truncated));
        assert_eq!(decode(&[0x06]), Err(DecodeError::Invalid(0x06)));
        assert_eq!(decode(&[0xC5, 0xF8, 0x77]), Err(DecodeError::Unsupported(0xC5)));
        assert_eq!(decode(&[0x66; 16]), Err(DecodeError::TooLong));
    }
}
