use serde::{Deserialize, Serialize};

use crate::target::TargetProcess;

use super::{Result, TrapError};

pub const HW_SLOTS: usize = 4;
const DR7: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HwKind {
    Exec,
    Write,
    ReadWrite,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HwSlot {
    pub index: usize,
    pub addr: u64,
    pub kind: HwKind,
    pub len: u8,
    pub hit_count: u64,
}

/// DR7 bits for slot `index`: local enable, RW field and LEN field.
pub fn dr7_bits(index: usize, kind: HwKind, len: u8) -> u64 {
    let rw: u64 = match kind {
        HwKind::Exec => 0b00,
        HwKind::Write => 0b01,
        HwKind::ReadWrite => 0b11,
    };
    let ln: u64 = match len {
        1 => 0b00,
        2 => 0b01,
        8 => 0b10,
        _ => 0b11,
    };
    (1 << (2 * index)) | (rw << (16 + 4 * index)) | (ln << (18 + 4 * index))
}

fn dr7_mask(index: usize) -> u64 {
    (0b11 << (2 * index)) | (0b1111 << (16 + 4 * index))
}

pub fn arm_hw_slot(t: &mut TargetProcess, addr: u64, kind: HwKind, len: u8) -> Result<HwSlot> {
    if !matches!(len, 1 | 2 | 4 | 8) || (kind == HwKind::Exec && len != 1) {
        return Err(TrapError::BadLength { kind, len });
    }
    if !addr.is_multiple_of(len as u64) {
        return Err(TrapError::BadAlignment { addr, len });
    }
    let index = t.occupancy().hw_slots.iter().position(|used| !used).ok_or(TrapError::NoFreeSlot)?;
    let dr7 = (t.occupancy().dr7 & !dr7_mask(index)) | dr7_bits(index, kind, len);
    t.write_debug_reg(index, addr)?;
    t.write_debug_reg(DR7, dr7)?;
    let occ = t.occupancy_mut();
    occ.hw_slots[index] = true;
    occ.dr7 = dr7;
    Ok(HwSlot { index, addr, kind, len, hit_count: 0 })
}

pub fn clear_hw_slot(t: &mut TargetProcess, slot: &HwSlot) -> Result<()> {
    let dr7 = t.occupancy().dr7 & !dr7_mask(slot.index);
    t.write_debug_reg(DR7, dr7)?;
    t.write_debug_reg(slot.index, 0)?;
    let occ = t.occupancy_mut();
    occ.hw_slots[slot.index] = false;
    occ.dr7 = dr7;
    Ok(())
}

/// Credits each slot whose bit is set in `hits` (DR6 B0..B3).
pub fn record_hits(slots: &mut [HwSlot], hits: u8) -> u32 {
    let mut n = 0;
    for s in slots.iter_mut().filter(|s| hits & (1 << s.index) != 0) {
        s.hit_count += 1;
        n += 1;
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dr7_encoding() {
        assert_eq!(dr7_bits(0, HwKind::Exec, 1), 0b1);
        assert_eq!(dr7_bits(1, HwKind::Write, 4), (1 << 2) | (0b01 << 20) | (0b11 << 22));
        assert_eq!(dr7_bits(3, HwKind::ReadWrite, 8), (1 << 6) | (0b11 << 28) | (0b10 << 30));
        assert_eq!(dr7_bits(2, HwKind::ReadWrite, 2) & !dr7_mask(2), 0);
    }
}
