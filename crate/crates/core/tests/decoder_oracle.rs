//! The length decoder checked against iced-x86 on real machine code.

use goblin::elf::Elf;
use iced_x86::{Decoder, DecoderOptions, FlowControl, Instruction, Mnemonic};
use proptest::prelude::*;
use trapbench::decode::{decode, DecodeError};
use trapbench::workload::{emit_workload, Pattern, WorkloadParams};
use trapbench::InsnClass;

fn iced_one(bytes: &[u8]) -> Option<Instruction> {
    let mut d = Decoder::new(64, bytes, DecoderOptions::NONE);
    let insn = d.decode();
    (!insn.is_invalid()).then_some(insn)
}

fn flow_class(i: &Instruction) -> Option<InsnClass> {
    // Kernel-transition instructions get their own class here.
    if matches!(i.mnemonic(), Mnemonic::Syscall | Mnemonic::Sysenter | Mnemonic::Sysret | Mnemonic::Sysexit) {
        return Some(InsnClass::Syscall);
    }
    match i.flow_control() {
        FlowControl::UnconditionalBranch | FlowControl::ConditionalBranch | FlowControl::IndirectBranch => {
            Some(InsnClass::Branch)
        }
        FlowControl::Call | FlowControl::IndirectCall => Some(InsnClass::Call),
        FlowControl::Return => Some(InsnClass::Ret),
        _ => None,
    }
}

fn check_against_iced(bytes: &[u8]) -> Result<Option<usize>, String> {
    let Some(want) = iced_one(bytes) else { return Ok(None) };
    match decode(bytes) {
        Ok(got) => {
            if got.len != want.len() {
                return Err(format!("{:02x?}: len {} vs iced {} ({want})", &bytes[..want.len()], got.len, want.len()));
            }
            if got.rip_relative != want.is_ip_rel_memory_operand() {
                return Err(format!("{:02x?}: rip_relative {} ({want})", &bytes[..want.len()], got.rip_relative));
            }
            if let Some(c) = flow_class(&want) {
                if got.class != c {
                    return Err(format!("{:02x?}: class {:?} vs {c:?} ({want})", &bytes[..want.len()], got.class));
                }
            }
            Ok(Some(got.len))
        }
        Err(DecodeError::Unsupported(_)) => Ok(None),
        Err(e) => Err(format!("{:02x?}: {e} but iced decodes {want}", &bytes[..want.len().min(bytes.len())])),
    }
}

fn text_section(path: &str) -> Option<Vec<u8>> {
    let file = std::fs::read(path).ok()?;
    let elf = Elf::parse(&file).ok()?;
    let sh = elf.section_headers.iter().find(|s| elf.shdr_strtab.get_at(s.sh_name) == Some(".text"))?;
    Some(file[sh.sh_offset as usize..(sh.sh_offset + sh.sh_size) as usize].to_vec())
}

#[test]
fn workload_encodings_match_iced() {
    for pattern in Pattern::ALL {
        let (image, meta) = emit_workload(&WorkloadParams::new(77, 13, 50_000, pattern)).unwrap();
        for insn in &meta.encoding_table {
            let off = (insn.addr - 0x40_0000) as usize;
            let bytes = &image[off..off + 16];
            let want = iced_one(bytes).unwrap_or_else(|| panic!("iced rejects {:#x}", insn.addr));
            assert_eq!(want.len(), insn.len as usize, "{:#x}: {want}", insn.addr);
            let got = decode(bytes).unwrap();
            assert_eq!(got.len, insn.len as usize, "{:#x}", insn.addr);
            assert_eq!(got.class, insn.class, "{:#x}: {want}", insn.addr);
        }
    }
}

/// Linear sweep over system binaries: wherever both decoders accept an
/// instruction, they must agree on its length and control-flow class.
#[test]
fn system_code_matches_iced() {
    let mut agreed = 0usize;
    let mut skipped = 0usize;
    for path in ["/bin/ls", "/bin/sh", "/usr/bin/env", "/lib/x86_64-linux-gnu/libc.so.6"] {
        let Some(text) = text_section(path) else { continue };
        let mut d = Decoder::new(64, &text, DecoderOptions::NONE);
        let mut insn = Instruction::default();
        while d.can_decode() {
            let pos = d.position();
            d.decode_out(&mut insn);
            if insn.is_invalid() {
                continue;
            }
            let end = (pos + 15).min(text.len());
            match check_against_iced(&text[pos..end]) {
                Ok(Some(_)) => agreed += 1,
                Ok(None) => skipped += 1,
                Err(e) => panic!("{path}+{pos:#x}: {e}"),
            }
        }
    }
    if agreed + skipped > 0 {
        let coverage = agreed as f64 / (agreed + skipped) as f64;
        assert!(coverage > 0.95, "decoded {agreed}, unsupported {skipped}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20_000))]

    #[test]
    fn random_bytes_match_iced(bytes in prop::array::uniform16(any::<u8>())) {
        check_against_iced(&bytes).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn truncation_is_reported(bytes in prop::array::uniform16(any::<u8>())) {
        if let Some(want) = iced_one(&bytes) {
            if let Ok(got) = decode(&bytes) {
                prop_assert_eq!(got.len, want.len());
                if want.len() > 1 {
                    prop_assert_eq!(decode(&bytes[..want.len() - 1]).err(), Some(DecodeError::Truncated));
                }
            }
        }
    }
}
