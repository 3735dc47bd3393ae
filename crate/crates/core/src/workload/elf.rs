//! Minimal ELF64 writer for non-relocatable x86-64 executables.
//!
//! File layout (offsets equal `vaddr - LOAD_BASE` for everything loaded):
//!
//! ```text
//! 0x0000  ELF header, two program headers
//! 0x1000  code            -> PT_LOAD r-x, vaddr 0x400000 (covers headers + code)
//! 0x4000  data (2 pages)  -> PT_LOAD rw-, vaddr 0x404000
//! ....    .symtab .strtab .shstrtab, then section headers (not loaded)
//! ```

pub(crate) const LOAD_BASE: u64 = 0x40_0000;

const EHDR_SIZE: u64 = 64;
const PHDR_SIZE: u64 = 56;
const SHDR_SIZE: u64 = 64;
const SYM_SIZE: u64 = 24;

const PF_X: u32 = 1;
const PF_W: u32 = 2;
const PF_R: u32 = 4;

const SHT_PROGBITS: u32 = 1;
const SHT_SYMTAB: u32 = 2;
const SHT_STRTAB: u32 = 3;
const SHF_WRITE: u64 = 1;
const SHF_ALLOC: u64 = 2;
const SHF_EXECINSTR: u64 = 4;

pub(crate) const STT_NOTYPE: u8 = 0;
pub(crate) const STT_OBJECT: u8 = 1;
pub(crate) const STT_FUNC: u8 = 2;
const STB_GLOBAL: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Section {
    Text,
    Data,
}

pub(crate) struct ElfSymbol<'a> {
    pub name: &'a str,
    pub addr: u64,
    pub size: u64,
    pub kind: u8,
    pub section: Section,
}

pub(crate) struct Image<'a> {
    pub entry: u64,
    pub code_vaddr: u64,
    pub code: &'a [u8],
    pub data_vaddr: u64,
    pub data: &'a [u8],
    pub symbols: &'a [ElfSymbol<'a>],
}

#[derive(Default)]
struct Out(Vec<u8>);

impl Out {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn pad_to(&mut self, off: u64) {
        assert!(self.0.len() as u64 <= off, "ELF layout overlap at {off:#x}");
        self.0.resize(off as usize, 0);
    }
    fn len(&self) -> u64 {
        self.0.len() as u64
    }
}

fn strtab<'a>(names: impl Iterator<Item = &'a str>) -> (Vec<u8>, Vec<u32>) {
    let mut tab = vec![0u8];
    let mut offs = Vec::new();
    for n in names {
        offs.push(tab.len() as u32);
        tab.extend_from_slice(n.as_bytes());
        tab.push(0);
    }
    (tab, offs)
}

pub(crate) fn write(img: &Image<'_>) -> Vec<u8> {
    let code_off = img.code_vaddr - LOAD_BASE;
    let data_off = img.data_vaddr - LOAD_BASE;
    let text_end = code_off + img.code.len() as u64;
    assert!(text_end <= data_off, "code overlaps data");

    let (sym_strtab, sym_name_offs) = strtab(img.symbols.iter().map(|s| s.name));
    let (shstrtab, sh_name_offs) = strtab([".text", ".data", ".symtab", ".strtab", ".shstrtab"].into_iter());

    let symtab_off = data_off + img.data.len() as u64;
    let symtab_size = SYM_SIZE * (img.symbols.len() as u64 + 1);
    let strtab_off = symtab_off + symtab_size;
    let shstrtab_off = strtab_off + sym_strtab.len() as u64;
    let shdr_off = (shstrtab_off + shstrtab.len() as u64 + 7) & !7;

    let mut o = Out::default();

    // ELF header
    o.0.extend_from_slice(&[0x7F, b'E', b'L', b'F', 2, 1, 1, 0]);
    o.0.extend_from_slice(&[0; 8]);
    o.u16(2); // ET_EXEC
    o.u16(62); // EM_X86_64
    o.u32(1);
    o.u64(img.entry);
    o.u64(EHDR_SIZE);
    o.u64(shdr_off);
    o.u32(0);
    o.u16(EHDR_SIZE as u16);
    o.u16(PHDR_SIZE as u16);
    o.u16(2);
    o.u16(SHDR_SIZE as u16);
    o.u16(6);
    o.u16(5);

    let phdr = |o: &mut Out, flags: u32, off: u64, vaddr: u64, size: u64| {
        o.u32(1); // PT_LOAD
        o.u32(flags);
        o.u64(off);
        o.u64(vaddr);
        o.u64(vaddr);
        o.u64(size);
        o.u64(size);
        o.u64(0x1000);
    };
    phdr(&mut o, PF_R | PF_X, 0, LOAD_BASE, text_end);
    phdr(&mut o, PF_R | PF_W, data_off, img.data_vaddr, img.data.len() as u64);

    o.pad_to(code_off);
    o.0.extend_from_slice(img.code);
    o.pad_to(data_off);
    o.0.extend_from_slice(img.data);

    // .symtab: null symbol, then globals
    o.0.extend_from_slice(&[0; SYM_SIZE as usize]);
    for (sym, name_off) in img.symbols.iter().zip(&sym_name_offs) {
        o.u32(*name_off);
        o.u8((STB_GLOBAL << 4) | sym.kind);
        o.u8(0);
        o.u16(match sym.section {
            Section::Text => 1,
            Section::Data => 2,
        });
        o.u64(sym.addr);
        o.u64(sym.size);
    }
    o.0.extend_from_slice(&sym_strtab);
    o.0.extend_from_slice(&shstrtab);
    o.pad_to(shdr_off);

    let shdr = |o: &mut Out, name: u32, ty: u32, flags: u64, addr: u64, off: u64, size: u64, link: u32, info: u32, align: u64, entsize: u64| {
        o.u32(name);
        o.u32(ty);
        o.u64(flags);
        o.u64(addr);
        o.u64(off);
        o.u64(size);
        o.u32(link);
        o.u32(info);
        o.u64(align);
        o.u64(entsize);
    };
    o.0.extend_from_slice(&[0; SHDR_SIZE as usize]);
    shdr(&mut o, sh_name_offs[0], SHT_PROGBITS, SHF_ALLOC | SHF_EXECINSTR, img.code_vaddr, code_off, img.code.len() as u64, 0, 0, 16, 0);
    shdr(&mut o, sh_name_offs[1], SHT_PROGBITS, SHF_ALLOC | SHF_WRITE, img.data_vaddr, data_off, img.data.len() as u64, 0, 0, 8, 0);
    shdr(&mut o, sh_name_offs[2], SHT_SYMTAB, 0, 0, symtab_off, symtab_size, 4, 1, 8, SYM_SIZE);
    shdr(&mut o, sh_name_offs[3], SHT_STRTAB, 0, 0, strtab_off, sym_strtab.len() as u64, 0, 0, 1, 0);
    shdr(&mut o, sh_name_offs[4], SHT_STRTAB, 0, 0, shstrtab_off, shstrtab.len() as u64, 0, 0, 1, 0);
    debug_assert_eq!(o.len(), shdr_off + 6 * SHDR_SIZE);
    o.0
}
