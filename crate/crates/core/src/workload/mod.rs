//! Synthetic workload generator.
//!
//! Emits small static x86-64 executables whose dynamic behaviour is known
//! exactly: the hot instruction runs `k_exec` times, the hot data cell is read
//! `k_read` and written `k_write` times, and filler pads the main→exit window
//! to exactly `total_instr` instructions.
//!
//! Address map (fixed, no relocation):
//!
//! ```text
//! 0x401000  _start, main, loops, checksum printer, prog_exit
//! 0x402ffb  hot_insn  (5 bytes, the only instruction on page 0x402000)
//! 0x403000  hot loop tail
//! 0x404000  out_buf, hex table
//! 0x405000  hot_cell; second_cell at +0x800; strided cells every 512 bytes
//! ```

mod asm;
mod elf;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::decode::{InsnClass, MemAccess};
use crate::primitives::Primitive;

use asm::{Asm, OP_JNZ, OP_JZ};
use elf::{ElfSymbol, Image, Section, STT_FUNC, STT_NOTYPE, STT_OBJECT};

pub const CODE_BASE: u64 = 0x40_1000;
pub const HOT_PAGE: u64 = 0x40_2000;
pub const HOT_INSN_ADDR: u64 = 0x40_2FFB;
pub const TAIL_PAGE: u64 = 0x40_3000;
pub const DATA_BASE: u64 = 0x40_4000;
pub const CELL_PAGE: u64 = 0x40_5000;
pub const HOT_CELL_ADDR: u64 = CELL_PAGE;
pub const SECOND_CELL_ADDR: u64 = CELL_PAGE + 0x800;
pub const STRIDE: u64 = 512;
pub const STRIDED_CELLS: u64 = 8;

const OUT_BUF: u64 = DATA_BASE;
const HEX_TABLE: u64 = DATA_BASE + 0x40;
const DATA_LEN: usize = 0x2000;
const OUT_PREFIX: &[u8] = b"checksum=";
const OUT_LEN: u64 = 26;

const HOT_CELL_INIT: u64 = 0x0123_4567_89AB_CDEF;
const SECOND_CELL_INIT: u64 = 0x0F1E_2D3C_4B5A_6978;

const REG_RBX: u8 = 3;
const REG_RDX: u8 = 2;
const REG_RSI: u8 = 6;

#[derive(Debug, thiserror::Error)]
pub enum WorkloadError {
    #[error("invalid parameters: {0}")]
    Param(String),
    #[error("layout: {0}")]
    Layout(String),
    #[error("primitive target not present in workload: {0}")]
    UnknownTarget(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("metadata: {0}")]
    Metadata(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Pattern {
    #[default]
    TightLoop,
    Strided,
    TwoCellsOnePage,
}

impl Pattern {
    pub const ALL: [Pattern; 3] = [Pattern::TightLoop, Pattern::Strided, Pattern::TwoCellsOnePage];

    pub fn as_str(self) -> &'static str {
        match self {
            Pattern::TightLoop => "tight-loop",
            Pattern::Strided => "strided",
            Pattern::TwoCellsOnePage => "two-cells-one-page",
        }
    }

    /// Data cells touched by every loop iteration.
    fn read_cells(self) -> Vec<u64> {
        match self {
            Pattern::TightLoop => vec![HOT_CELL_ADDR],
            Pattern::TwoCellsOnePage => vec![HOT_CELL_ADDR, SECOND_CELL_ADDR],
            Pattern::Strided => (0..STRIDED_CELLS).map(|j| HOT_CELL_ADDR + j * STRIDE).collect(),
        }
    }

    fn write_cells(self) -> Vec<u64> {
        match self {
            Pattern::TwoCellsOnePage => vec![HOT_CELL_ADDR, SECOND_CELL_ADDR],
            _ => vec![HOT_CELL_ADDR],
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pattern {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('_', "-").as_str() {
            "tight-loop" | "tight" => Ok(Pattern::TightLoop),
            "strided" => Ok(Pattern::Strided),
            "two-cells-one-page" | "two-cells" => Ok(Pattern::TwoCellsOnePage),
            _ => Err(WorkloadError::Param(format!("unknown pattern `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadParams {
    pub k_exec: u64,
    /// Loop iterations that read the hot cell.
    pub k_read: u64,
    /// Loop iterations that write the hot cell.
    pub k_write: u64,
    pub total_instr: u64,
    pub pattern: Pattern,
}

impl WorkloadParams {
    /// Splits `k_mem` into reads (the larger half) and writes.
    pub fn new(k_exec: u64, k_mem: u64, total_instr: u64, pattern: Pattern) -> Self {
        WorkloadParams { k_exec, k_read: k_mem - k_mem / 2, k_write: k_mem / 2, total_instr, pattern }
    }

    pub fn k_mem(&self) -> u64 {
        self.k_read + self.k_write
    }

    /// The smallest `total_instr` these event counts fit in.
    pub fn min_total_instr(&self) -> Result<u64, WorkloadError> {
        let fixed = Layout::build(self, 0, 0)?.fixed_instr;
        Ok(fixed)
    }
}

/// Frequency in events per 100M instructions for `k` events in `total_instr`.
pub fn events_per_100m(k: u64, total_instr: u64) -> f64 {
    k as f64 * 1e8 / total_instr as f64
}

/// Event count realizing frequency `f` (events per 100M) at `total_instr`.
pub fn k_for_frequency(f: f64, total_instr: u64) -> u64 {
    (f * total_instr as f64 / 1e8).round() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MemOperand {
    Fixed { addr: u64, size: u8, access: MemAccess },
    /// Register-indexed access somewhere inside `[lo, hi)`.
    Variable { lo: u64, hi: u64, access: MemAccess },
}

impl MemOperand {
    fn overlaps(&self, lo: u64, hi: u64) -> bool {
        let (a, b) = match *self {
            MemOperand::Fixed { addr, size, .. } => (addr, addr + size as u64),
            MemOperand::Variable { lo, hi, .. } => (lo, hi),
        };
        a < hi && lo < b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedInsn {
    pub addr: u64,
    pub len: u8,
    pub class: InsnClass,
    /// Executions inside the main→exit window.
    pub count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mem: Option<MemOperand>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyticCounts {
    pub total_instr: u64,
    pub hot_exec: u64,
    pub hot_cell_reads: u64,
    pub hot_cell_writes: u64,
    pub cell_page_accesses: u64,
    pub by_class: BTreeMap<InsnClass, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadMetadata {
    pub params: WorkloadParams,
    pub entry_addr: u64,
    pub main_addr: u64,
    /// The exit syscall; it is the first instruction outside the window.
    pub exit_addr: u64,
    pub hot_insn_addr: u64,
    pub hot_cell_addr: u64,
    pub second_cell_addr: Option<u64>,
    pub hot_page: u64,
    pub cell_page: u64,
    pub symbols: BTreeMap<String, u64>,
    pub analytic: AnalyticCounts,
    pub expected_stdout: String,
    pub encoding_table: Vec<EncodedInsn>,
}

impl WorkloadMetadata {
    pub fn load(path: &Path) -> Result<Self, WorkloadError> {
        let text = std::fs::read_to_string(path).map_err(|source| WorkloadError::Io { path: path.into(), source })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn insn_at(&self, addr: u64) -> Option<&EncodedInsn> {
        self.encoding_table
            .binary_search_by_key(&addr, |i| i.addr)
            .ok()
            .map(|i| &self.encoding_table[i])
    }

    /// Instructions executed at least once inside the window.
    pub fn window_insns(&self) -> impl Iterator<Item = &EncodedInsn> {
        self.encoding_table.iter().filter(|i| i.count > 0)
    }
}

struct Layout {
    code: Vec<u8>,
    insns: Vec<EncodedInsn>,
    fixed_instr: u64,
    main: u64,
    exit: u64,
}

impl Layout {
    /// Assembles the program with `fill` filler iterations and `pad` trailing
    /// nops. `fixed_instr` counts every window instruction except those two.
    fn build(p: &WorkloadParams, fill: u64, pad: u64) -> Result<Self, WorkloadError> {
        let mut a = Asm::new(CODE_BASE);
        let mut fixed: u128 = 0;
        let mut tally = |n: u128, times: u64| fixed += n * times as u128;

        a.times(0);
        a.label("_start");
        a.other(&[0x31, 0xED]); // xor ebp, ebp

        a.times(1);
        let main = a.label("main");
        a.other(&[0x31, 0xC0]); // xor eax, eax
        a.other(&[0x31, 0xD2]); // xor edx, edx
        a.other(&[0x45, 0x31, 0xC0]); // xor r8d, r8d
        tally(3, 1);

        // hot_insn loop: body lives on pages HOT_PAGE / TAIL_PAGE
        a.mov_rcx(p.k_exec);
        a.other(&[0x48, 0x85, 0xC9]); // test rcx, rcx
        a.jcc(OP_JZ, "after_hot");
        tally(3, 1);
        a.times(p.k_exec);
        a.label("hot_loop");
        a.other(&[0x48, 0xFF, 0xC9]); // dec rcx
        a.jmp("hot_insn");
        tally(2 + 2, p.k_exec); // + hot_insn, jnz
        tally(1, p.k_exec.min(1)); // jmp after_hot

        a.times(1);
        a.label("after_hot");

        // read loop
        let reads = p.pattern.read_cells();
        a.mov_rcx(p.k_read);
        a.other(&[0x48, 0x85, 0xC9]);
        a.jcc(OP_JZ, "after_read");
        tally(3, 1);
        a.times(p.k_read);
        a.label("read_loop");
        for (i, &cell) in reads.iter().enumerate() {
            if i % 2 == 0 {
                a.load_abs(REG_RBX, cell);
                a.other(&[0x48, 0x01, 0xDA]); // add rdx, rbx
            } else {
                a.load_abs(REG_RSI, cell);
                a.other(&[0x48, 0x01, 0xF2]); // add rdx, rsi
            }
        }
        a.other(&[0x48, 0xFF, 0xC9]); // dec rcx
        a.jcc(OP_JNZ, "read_loop");
        tally(2 * reads.len() as u128 + 2, p.k_read);

        a.times(1);
        a.label("after_read");

        // write loop
        let writes = p.pattern.write_cells();
        a.mov_rcx(p.k_write);
        a.other(&[0x48, 0x85, 0xC9]);
        a.jcc(OP_JZ, "after_write");
        tally(3, 1);
        a.times(p.k_write);
        a.label("write_loop");
        for &cell in &writes {
            a.store_abs(REG_RDX, cell);
        }
        a.other(&[0x48, 0x01, 0xCA]); // add rdx, rcx
        a.other(&[0x48, 0xFF, 0xC9]); // dec rcx
        a.jcc(OP_JNZ, "write_loop");
        tally(writes.len() as u128 + 3, p.k_write);

        a.times(1);
        a.label("after_write");

        // filler
        a.mov_rcx(fill);
        a.other(&[0x48, 0x85, 0xC9]);
        a.jcc(OP_JZ, "after_fill");
        tally(3, 1);
        a.times(fill);
        a.label("fill_loop");
        a.other(&[0x49, 0x01, 0xC8]); // add r8, rcx
        a.other(&[0x48, 0xFF, 0xC9]); // dec rcx
        a.jcc(OP_JNZ, "fill_loop");
        a.times(1);
        a.label("after_fill");
        for _ in 0..pad {
            a.emit(&[0x90], InsnClass::Nop, None);
        }

        // checksum = (r8 + rax) ^ rdx, printed as 16 hex digits
        a.other(&[0x49, 0x01, 0xC0]); // add r8, rax
        a.other(&[0x49, 0x31, 0xD0]); // xor r8, rdx
        let mut b = vec![0xBF]; // mov edi, out_buf + 9
        b.extend_from_slice(&((OUT_BUF + OUT_PREFIX.len() as u64) as u32).to_le_bytes());
        a.other(&b);
        a.other(&[0xB9, 16, 0, 0, 0]); // mov ecx, 16
        tally(4, 1);
        a.times(16);
        a.label("hex_loop");
        a.other(&[0x49, 0xC1, 0xC0, 0x04]); // rol r8, 4
        a.other(&[0x44, 0x89, 0xC0]); // mov eax, r8d
        a.other(&[0x83, 0xE0, 0x0F]); // and eax, 15
        let mut b = vec![0x0F, 0xB6, 0x80]; // movzx eax, byte [rax + table]
        b.extend_from_slice(&(HEX_TABLE as u32).to_le_bytes());
        a.emit(
            &b,
            InsnClass::Load,
            Some(MemOperand::Variable { lo: HEX_TABLE, hi: HEX_TABLE + 16, access: MemAccess::Read }),
        );
        let digits = OUT_BUF + OUT_PREFIX.len() as u64;
        a.emit(
            &[0x88, 0x07], // mov [rdi], al
            InsnClass::Store,
            Some(MemOperand::Variable { lo: digits, hi: digits + 16, access: MemAccess::Write }),
        );
        a.other(&[0x48, 0xFF, 0xC7]); // inc rdi
        a.other(&[0xFF, 0xC9]); // dec ecx
        a.jcc(OP_JNZ, "hex_loop");
        tally(8, 16);

        a.times(1);
        let mov32 = |a: &mut Asm, op: u8, v: u64| {
            let mut b = vec![op];
            b.extend_from_slice(&(v as u32).to_le_bytes());
            a.other(&b);
        };
        mov32(&mut a, 0xB8, 1); // mov eax, SYS_write
        mov32(&mut a, 0xBF, 1); // mov edi, 1
        mov32(&mut a, 0xBE, OUT_BUF); // mov esi, out_buf
        mov32(&mut a, 0xBA, OUT_LEN); // mov edx, len
        a.emit(&[0x0F, 0x05], InsnClass::Syscall, None);
        mov32(&mut a, 0xB8, 60); // mov eax, SYS_exit
        a.other(&[0x31, 0xFF]); // xor edi, edi
        tally(7, 1);
        a.times(0);
        let exit = a.label("prog_exit");
        a.emit(&[0x0F, 0x05], InsnClass::Syscall, None);

        a.org(HOT_INSN_ADDR)?;
        a.times(p.k_exec);
        a.label("hot_insn");
        a.other(&[0x48, 0x8D, 0x44, 0x20, 0x01]); // lea rax, [rax + 1]
        a.jcc(OP_JNZ, "hot_loop");
        a.times(p.k_exec.min(1));
        a.jmp("after_hot");
        debug_assert_eq!(a.label_addr("hot_insn"), Some(HOT_INSN_ADDR));

        let (code, insns) = a.finish()?;
        let fixed_instr =
            u64::try_from(fixed).map_err(|_| WorkloadError::Param("instruction count exceeds 64 bits".into()))?;
        Ok(Layout { code, insns, fixed_instr, main, exit })
    }
}

fn checksum(p: &WorkloadParams) -> u64 {
    let rax = p.k_exec;
    let cell_sum = p.pattern.read_cells().iter().fold(0u64, |s, &c| s.wrapping_add(initial_cell(c)));
    let mut rdx = cell_sum.wrapping_mul(p.k_read);
    rdx = rdx.wrapping_add(triangular(p.k_write));
    let fill = fill_iterations(p).map(|(n, _)| n).unwrap_or(0);
    let r8 = triangular(fill).wrapping_add(rax);
    r8 ^ rdx
}

fn triangular(n: u64) -> u64 {
    ((n as u128 * (n as u128 + 1) / 2) & u64::MAX as u128) as u64
}

fn initial_cell(addr: u64) -> u64 {
    match addr {
        HOT_CELL_ADDR => HOT_CELL_INIT,
        SECOND_CELL_ADDR => SECOND_CELL_INIT,
        a => 0x1000 + (a - CELL_PAGE),
    }
}

/// Filler iterations (3 instructions each) plus trailing nops.
fn fill_iterations(p: &WorkloadParams) -> Result<(u64, u64), WorkloadError> {
    let fixed = Layout::build(p, 0, 0)?.fixed_instr;
    if p.total_instr < fixed {
        return Err(WorkloadError::Param(format!(
            "total_instr {} is below the {} instructions these counts require",
            p.total_instr, fixed
        )));
    }
    let spare = p.total_instr - fixed;
    Ok((spare / 3, spare % 3))
}

fn data_image(p: &WorkloadParams) -> Vec<u8> {
    let mut data = vec![0u8; DATA_LEN];
    let out = (OUT_BUF - DATA_BASE) as usize;
    data[out..out + OUT_PREFIX.len()].copy_from_slice(OUT_PREFIX);
    data[out + OUT_PREFIX.len()..out + 25].fill(b'0');
    data[out + 25] = b'\n';
    let table = (HEX_TABLE - DATA_BASE) as usize;
    data[table..table + 16].copy_from_slice(b"0123456789abcdef");
    let mut cells = p.pattern.read_cells();
    cells.extend(p.pattern.write_cells());
    for c in cells {
        let off = (c - DATA_BASE) as usize;
        data[off..off + 8].copy_from_slice(&initial_cell(c).to_le_bytes());
    }
    data
}

/// Generates the executable image and its metadata.
pub fn emit_workload(p: &WorkloadParams) -> Result<(Vec<u8>, WorkloadMetadata), WorkloadError> {
    let (fill, pad) = fill_iterations(p)?;
    let layout = Layout::build(p, fill, pad)?;
    debug_assert_eq!(
        layout.insns.iter().map(|i| i.count as u128).sum::<u128>(),
        p.total_instr as u128
    );

    let data = data_image(p);
    let second = (p.pattern == Pattern::TwoCellsOnePage).then_some(SECOND_CELL_ADDR);
    let mut syms = vec![
        ElfSymbol { name: "_start", addr: CODE_BASE, size: 0, kind: STT_FUNC, section: Section::Text },
        ElfSymbol { name: "main", addr: layout.main, size: layout.exit + 2 - layout.main, kind: STT_FUNC, section: Section::Text },
        ElfSymbol { name: "prog_exit", addr: layout.exit, size: 2, kind: STT_NOTYPE, section: Section::Text },
        ElfSymbol { name: "hot_insn", addr: HOT_INSN_ADDR, size: 5, kind: STT_NOTYPE, section: Section::Text },
        ElfSymbol { name: "hot_cell", addr: HOT_CELL_ADDR, size: 8, kind: STT_OBJECT, section: Section::Data },
        ElfSymbol { name: "out_buf", addr: OUT_BUF, size: OUT_LEN, kind: STT_OBJECT, section: Section::Data },
    ];
    if let Some(addr) = second {
        syms.push(ElfSymbol { name: "second_cell", addr, size: 8, kind: STT_OBJECT, section: Section::Data });
    }
    let bytes = elf::write(&Image {
        entry: CODE_BASE,
        code_vaddr: CODE_BASE,
        code: &layout.code,
        data_vaddr: DATA_BASE,
        data: &data,
        symbols: &syms,
    });

    let mut by_class = BTreeMap::new();
    for i in layout.insns.iter().filter(|i| i.count > 0) {
        *by_class.entry(i.class).or_insert(0) += i.count;
    }
    let mut encoding_table = layout.insns;
    encoding_table.sort_by_key(|i| i.addr);

    let mut meta = WorkloadMetadata {
        params: *p,
        entry_addr: CODE_BASE,
        main_addr: layout.main,
        exit_addr: layout.exit,
        hot_insn_addr: HOT_INSN_ADDR,
        hot_cell_addr: HOT_CELL_ADDR,
        second_cell_addr: second,
        hot_page: HOT_PAGE,
        cell_page: CELL_PAGE,
        symbols: syms.iter().map(|s| (s.name.to_owned(), s.addr)).collect(),
        analytic: AnalyticCounts {
            total_instr: p.total_instr,
            hot_exec: p.k_exec,
            hot_cell_reads: p.k_read,
            hot_cell_writes: p.k_write,
            cell_page_accesses: 0,
            by_class,
        },
        expected_stdout: format!("checksum={:016x}\n", checksum(p)),
        encoding_table,
    };
    meta.analytic.cell_page_accesses = expected_counts(&meta, &Primitive::RwRange(CELL_PAGE..CELL_PAGE + 0x1000))?;
    Ok((bytes, meta))
}

/// Writes `workload` (mode 0755) and `workload.json` into `dir`.
pub fn write_workload(dir: &Path, p: &WorkloadParams) -> Result<(PathBuf, WorkloadMetadata), WorkloadError> {
    use std::os::unix::fs::PermissionsExt;

    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| WorkloadError::Io { path, source }
    };
    let (bytes, meta) = emit_workload(p)?;
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let exe = dir.join("workload");
    std::fs::write(&exe, &bytes).map_err(io(&exe))?;
    std::fs::set_permissions(&exe, std::fs::Permissions::from_mode(0o755)).map_err(io(&exe))?;
    let json = dir.join("workload.json");
    std::fs::write(&json, serde_json::to_vec_pretty(&meta)?).map_err(io(&json))?;
    Ok((exe, meta))
}

/// Exact event count `prim` should report over the main→exit window.
pub fn expected_counts(m: &WorkloadMetadata, prim: &Primitive) -> Result<u64, WorkloadError> {
    let window = || m.window_insns();
    match prim {
        Primitive::ExecSingle(addr) => m
            .insn_at(*addr)
            .map(|i| i.count)
            .ok_or_else(|| WorkloadError::UnknownTarget(format!("no instruction starts at {addr:#x}"))),
        Primitive::ExecRange(r) => {
            if !m.encoding_table.iter().any(|i| r.contains(&i.addr)) {
                return Err(WorkloadError::UnknownTarget(format!("no code in {:#x}..{:#x}", r.start, r.end)));
            }
            Ok(window().filter(|i| r.contains(&i.addr)).map(|i| i.count).sum())
        }
        Primitive::ExecAll => Ok(m.params.total_instr),
        Primitive::ExecType(class) => Ok(m.analytic.by_class.get(class).copied().unwrap_or(0)),
        Primitive::RwSingle(addr) => mem_accesses(m, *addr, *addr + 1),
        Primitive::RwRange(r) => mem_accesses(m, r.start, r.end),
    }
}

fn mem_accesses(m: &WorkloadMetadata, lo: u64, hi: u64) -> Result<u64, WorkloadError> {
    let in_data = lo < DATA_BASE + DATA_LEN as u64 && DATA_BASE < hi;
    if !in_data {
        return Err(WorkloadError::UnknownTarget(format!("{lo:#x}..{hi:#x} is outside the data segment")));
    }
    let mut total = 0;
    for i in m.window_insns() {
        match i.mem {
            Some(op @ MemOperand::Fixed { .. }) if op.overlaps(lo, hi) => total += i.count,
            Some(op @ MemOperand::Variable { lo: a, hi: b, .. }) if op.overlaps(lo, hi) => {
                return Err(WorkloadError::UnknownTarget(format!(
                    "{lo:#x}..{hi:#x} overlaps data-dependent accesses in {a:#x}..{b:#x}"
                )))
            }
            _ => {}
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::decode;

    fn params(k: u64, mem: u64, total: u64, pattern: Pattern) -> WorkloadParams {
        WorkloadParams::new(k, mem, total, pattern)
    }

    #[test]
    fn table_counts_sum_to_total() {
        for pattern in Pattern::ALL {
            for total in [1000, 1001, 1002, 123_457] {
                let (_, m) = emit_workload(&params(7, 9, total, pattern)).unwrap();
                let sum: u64 = m.encoding_table.iter().map(|i| i.count).sum();
                assert_eq!(sum, total, "{pattern}");
            }
        }
    }

    #[test]
    fn table_matches_decoder() {
        for pattern in Pattern::ALL {
            let (bytes, m) = emit_workload(&params(3, 4, 5000, pattern)).unwrap();
            for i in &m.encoding_table {
                let off = (i.addr - elf::LOAD_BASE) as usize;
                let d = decode(&bytes[off..off + 15.min(bytes.len() - off)]).unwrap();
                assert_eq!((d.len, d.class), (i.len as usize, i.class), "at {:#x}", i.addr);
            }
        }
    }

    #[test]
    fn hot_insn_alone_on_its_page() {
        let (_, m) = emit_workload(&params(1, 0, 1000, Pattern::TightLoop)).unwrap();
        let on_page: Vec<_> = m.encoding_table.iter().filter(|i| i.addr & !0xFFF == HOT_PAGE).collect();
        assert_eq!(on_page.len(), 1);
        assert_eq!(on_page[0].addr + on_page[0].len as u64, HOT_PAGE + 0x1000);
    }

    #[test]
    fn too_small_total_rejected() {
        let p = params(1000, 0, 100, Pattern::TightLoop);
        assert!(matches!(emit_workload(&p), Err(WorkloadError::Param(_))));
        let min = p.min_total_instr().unwrap();
        assert!(emit_workload(&WorkloadParams { total_instr: min, ..p }).is_ok());
    }

    #[test]
    fn expected_counts_by_primitive() {
        let (_, m) = emit_workload(&params(10, 6, 10_000, Pattern::TwoCellsOnePage)).unwrap();
        assert_eq!(expected_counts(&m, &Primitive::ExecSingle(HOT_INSN_ADDR)).unwrap(), 10);
        assert_eq!(expected_counts(&m, &Primitive::ExecAll).unwrap(), 10_000);
        assert_eq!(expected_counts(&m, &Primitive::RwSingle(HOT_CELL_ADDR)).unwrap(), 6);
        assert_eq!(expected_counts(&m, &Primitive::RwRange(CELL_PAGE..CELL_PAGE + 0x1000)).unwrap(), 12);
        assert_eq!(expected_counts(&m, &Primitive::ExecRange(HOT_PAGE..HOT_PAGE + 0x1000)).unwrap(), 10);
        assert!(expected_counts(&m, &Primitive::ExecSingle(HOT_INSN_ADDR + 1)).is_err());
        assert!(expected_counts(&m, &Primitive::RwRange(OUT_BUF..OUT_BUF + 32)).is_err());
    }

    #[test]
    fn metadata_roundtrips_json() {
        let (_, m) = emit_workload(&params(2, 2, 2000, Pattern::Strided)).unwrap();
        let back: WorkloadMetadata = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
