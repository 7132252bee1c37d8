"""Minimal ELF64 (x86-64, little-endian) reader for the patcher.

Parses just what patching needs: program headers, section headers, symbol
tables, and the executable regions to sweep. Regions come from allocated
executable sections when section headers exist, otherwise from PF_X segments.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ElfFormatError

EI_NIDENT = 16
ELFCLASS64 = 2
ELFDATA2LSB = 1
EM_X86_64 = 62
ET_EXEC = 2
ET_DYN = 3

PT_LOAD = 1
PT_PHDR = 6

SHT_SYMTAB = 2
SHT_STRTAB = 3
SHT_NOBITS = 8
SHT_DYNSYM = 11

SHF_ALLOC = 0x2
SHF_EXECINSTR = 0x4

STT_FUNC = 2

EHDR_FMT = "<16sHHIQQQIHHHHHH"
PHDR_FMT = "<IIQQQQQQ"
PHDR_SIZE = 56
SHDR_FMT = "<IIQQQQIIQQ"
SYM_FMT = "<IBBHQQ"
SYM_SIZE = 24


@dataclass(frozen=True)
class ProgramHeader:
    type: int
    flags: int
    offset: int
    vaddr: int
    paddr: int
    filesz: int
    memsz: int
    align: int

    def pack(self) -> bytes:
        return struct.pack(
            PHDR_FMT,
            self.type,
            self.flags,
            self.offset,
            self.vaddr,
            self.paddr,
            self.filesz,
            self.memsz,
            self.align,
        )


@dataclass(frozen=True)
class SectionHeader:
    name: str
    name_off: int
    type: int
    flags: int
    addr: int
    offset: int
    size: int
    link: int
    info: int
    addralign: int
    entsize: int


@dataclass(frozen=True)
class Symbol:
    name: str
    value: int
    size: int
    info: int
    shndx: int

    @property
    def type(self) -> int:
        return self.info & 0xF


@dataclass(frozen=True)
class ExecRegion:
    name: str
    offset: int  # file offset
    vaddr: int
    size: int

    @property
    def vend(self) -> int:
        return self.vaddr + self.size


@dataclass
class ElfImage:
    raw: bytes
    e_type: int
    e_entry: int
    e_phoff: int
    e_shoff: int
    e_phentsize: int
    e_phnum: int
    e_shentsize: int
    e_shnum: int
    e_shstrndx: int
    phdrs: list[ProgramHeader] = field(default_factory=list)
    shdrs: list[SectionHeader] = field(default_factory=list)
    symbols: list[Symbol] = field(default_factory=list)
    exec_regions: list[ExecRegion] = field(default_factory=list)

    def region_bytes(self, region: ExecRegion) -> bytes:
        return self.raw[region.offset : region.offset + region.size]

    def loadable(self) -> list[ProgramHeader]:
        return [ph for ph in self.phdrs if ph.type == PT_LOAD]

    def vaddr_to_offset(self, vaddr: int) -> int:
        for ph in self.loadable():
            if ph.vaddr <= vaddr < ph.vaddr + ph.filesz:
                return vaddr - ph.vaddr + ph.offset
        raise ElfFormatError(f"vaddr {vaddr:#x} not mapped by any loadable segment")

    def func_anchors(self, region: ExecRegion) -> list[int]:
        """Sweep anchors for a region: function-symbol offsets, else start."""
        anchors = {
            sym.value - region.vaddr
            for sym in self.symbols
            if sym.type == STT_FUNC and region.vaddr <= sym.value < region.vend
        }
        return sorted(anchors) if anchors else [0]


def _need(raw: bytes, count: int, what: str):
    if len(raw) < count:
        raise ElfFormatError(f"truncated file: {what} needs {count} bytes, have {len(raw)}")


def load_elf(source) -> ElfImage:
    """Parse an ELF64 x86-64 executable or shared object.

    source: path or raw bytes. Raises ElfFormatError naming the offending
    field on anything that is not a well-formed little-endian ELF64 for
    x86-64.
    """
    if isinstance(source, (str, Path)):
        raw = Path(source).read_bytes()
    else:
        raw = bytes(source)

    _need(raw, 64, "ELF header")
    (
        ident,
        e_type,
        e_machine,
        _e_version,
        e_entry,
        e_phoff,
        e_shoff,
        _e_flags,
        _e_ehsize,
        e_phentsize,
        e_phnum,
        e_shentsize,
        e_shnum,
        e_shstrndx,
    ) = struct.unpack_from(EHDR_FMT, raw, 0)

    if ident[:4] != b"\x7fELF":
        raise ElfFormatError("e_ident: not an ELF file (bad magic)")
    if ident[4] != ELFCLASS64:
        raise ElfFormatError(f"e_ident[EI_CLASS]: expected ELF64, got class {ident[4]}")
    if ident[5] != ELFDATA2LSB:
        raise ElfFormatError(f"e_ident[EI_DATA]: expected little-endian, got {ident[5]}")
    if e_machine != EM_X86_64:
        raise ElfFormatError(f"e_machine: expected x86-64 ({EM_X86_64}), got {e_machine}")
    if e_type not in (ET_EXEC, ET_DYN):
        raise ElfFormatError(f"e_type: expected executable (2) or shared object (3), got {e_type}")
    if e_phentsize != PHDR_SIZE and e_phnum > 0:
        raise ElfFormatError(f"e_phentsize: expected {PHDR_SIZE}, got {e_phentsize}")

    img = ElfImage(
        raw=raw,
        e_type=e_type,
        e_entry=e_entry,
        e_phoff=e_phoff,
        e_shoff=e_shoff,
        e_phentsize=e_phentsize,
        e_phnum=e_phnum,
        e_shentsize=e_shentsize,
        e_shnum=e_shnum,
        e_shstrndx=e_shstrndx,
    )

    _need(raw, e_phoff + e_phnum * PHDR_SIZE, "program header table")
    for i in range(e_phnum):
        img.phdrs.append(
            ProgramHeader(*struct.unpack_from(PHDR_FMT, raw, e_phoff + i * PHDR_SIZE))
        )

    if e_shnum and e_shentsize:
        if e_shentsize != 64:
            raise ElfFormatError(f"e_shentsize: expected 64, got {e_shentsize}")
        _need(raw, e_shoff + e_shnum * e_shentsize, "section header table")
        rows = [
            struct.unpack_from(SHDR_FMT, raw, e_shoff + i * e_shentsize) for i in range(e_shnum)
        ]
        if e_shstrndx >= e_shnum:
            raise ElfFormatError(f"e_shstrndx: index {e_shstrndx} out of range")
        str_off, str_size = rows[e_shstrndx][4], rows[e_shstrndx][5]
        _need(raw, str_off + str_size, "section string table")

        def sh_name(off: int) -> str:
            end = raw.index(b"\x00", str_off + off, str_off + str_size)
            return raw[str_off + off : end].decode("latin-1")

        for row in rows:
            (name_off, s_type, s_flags, s_addr, s_off, s_size, s_link, s_info, s_align, s_ent) = (
                row
            )
            img.shdrs.append(
                SectionHeader(
                    name=sh_name(name_off),
                    name_off=name_off,
                    type=s_type,
                    flags=s_flags,
                    addr=s_addr,
                    offset=s_off,
                    size=s_size,
                    link=s_link,
                    info=s_info,
                    addralign=s_align,
                    entsize=s_ent,
                )
            )
        _parse_symbols(img)

    _find_exec_regions(img)
    return img


def _parse_symbols(img: ElfImage):
    raw = img.raw
    for sh in img.shdrs:
        if sh.type not in (SHT_SYMTAB, SHT_DYNSYM):
            continue
        if sh.link >= len(img.shdrs):
            raise ElfFormatError(f"section {sh.name}: bad strtab link {sh.link}")
        strtab = img.shdrs[sh.link]
        _need(raw, sh.offset + sh.size, f"symbol table {sh.name}")
        _need(raw, strtab.offset + strtab.size, f"string table {strtab.name}")
        count = sh.size // SYM_SIZE
        for i in range(count):
            name_off, info, _other, shndx, value, size = struct.unpack_from(
                SYM_FMT, raw, sh.offset + i * SYM_SIZE
            )
            if name_off:
                end = raw.index(b"\x00", strtab.offset + name_off, strtab.offset + strtab.size)
                name = raw[strtab.offset + name_off : end].decode("latin-1")
            else:
                name = ""
            img.symbols.append(Symbol(name=name, value=value, size=size, info=info, shndx=shndx))


def _find_exec_regions(img: ElfImage):
    regions = []
    if img.shdrs:
        for sh in img.shdrs:
            if (
                sh.flags & SHF_EXECINSTR
                and sh.flags & SHF_ALLOC
                and sh.type != SHT_NOBITS
                and sh.size > 0
            ):
                regions.append(
                    ExecRegion(name=sh.name, offset=sh.offset, vaddr=sh.addr, size=sh.size)
                )
    if not regions:
        for i, ph in enumerate(img.phdrs):
            if ph.type == PT_LOAD and ph.flags & 0x1 and ph.filesz > 0:  # PF_X
                regions.append(
                    ExecRegion(name=f"load{i}", offset=ph.offset, vaddr=ph.vaddr, size=ph.filesz)
                )
    for region in regions:
        containing = [
            ph
            for ph in img.loadable()
            if ph.vaddr <= region.vaddr and region.vend <= ph.vaddr + ph.filesz
        ]
        if len(containing) != 1:
            raise ElfFormatError(
                f"executable region {region.name} at {region.vaddr:#x} maps to "
                f"{len(containing)} loadable segments (expected exactly 1)"
            )
    regions.sort(key=lambda r: r.vaddr)
    img.exec_regions = regions
