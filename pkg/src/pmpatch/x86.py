"""Table-driven x86-64 instruction-length decoder and linear-sweep scanner.

Scope: exact lengths for one/two/three-byte opcode maps plus VEX/EVEX framing,
and classification of the handful of instructions the patcher cares about
(cache-line flushes, fences, direct branches). Anything outside the table
decodes as UNDECODABLE rather than guessed: a wrong length silently corrupts
patch planning, refusing is safe.

64-bit mode only.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

LEGACY_PREFIXES = frozenset(
    {0x26, 0x2E, 0x36, 0x3E, 0x64, 0x65, 0x66, 0x67, 0xF0, 0xF2, 0xF3}
)
MAX_INSN_LEN = 15


class InsnClass(enum.Enum):
    CLFLUSH = "clflush"
    CLFLUSHOPT = "clflushopt"
    CLWB = "clwb"
    SFENCE = "sfence"
    MFENCE = "mfence"
    LFENCE = "lfence"
    DIRECT_BRANCH = "direct-branch"
    OTHER = "other"
    UNDECODABLE = "undecodable"


FLUSH_CLASSES = frozenset({InsnClass.CLFLUSH, InsnClass.CLFLUSHOPT, InsnClass.CLWB})
FENCE_CLASSES = frozenset({InsnClass.SFENCE, InsnClass.MFENCE})

SFENCE_BYTES = bytes((0x0F, 0xAE, 0xF8))
MFENCE_BYTES = bytes((0x0F, 0xAE, 0xF0))
LFENCE_BYTES = bytes((0x0F, 0xAE, 0xE8))

# Canonical encodings per recognizer class ([rdi] memory operand).
CANONICAL_ENCODINGS = {
    InsnClass.CLFLUSH: bytes((0x0F, 0xAE, 0x3F)),
    InsnClass.CLFLUSHOPT: bytes((0x66, 0x0F, 0xAE, 0x3F)),
    InsnClass.CLWB: bytes((0x66, 0x0F, 0xAE, 0x37)),
    InsnClass.SFENCE: SFENCE_BYTES,
    InsnClass.MFENCE: MFENCE_BYTES,
    InsnClass.LFENCE: LFENCE_BYTES,
}


@dataclass(frozen=True)
class DecodedInstruction:
    offset: int
    length: int
    klass: InsnClass
    raw: bytes = b""
    operand_bytes: bytes = b""  # ModRM/SIB/disp (flush classes)
    rip_relative: bool = False
    branch_target: int | None = None
    prefix_bytes: bytes = b""
    rex: int = 0  # effective REX byte, 0 if none
    opcode_bytes: bytes = b""
    modrm: int | None = None
    modrm_offset: int = -1  # instruction-relative
    disp_offset: int = -1  # instruction-relative, -1 if no displacement
    disp_size: int = 0

    @property
    def end(self) -> int:
        return self.offset + self.length

    @property
    def disp_value(self) -> int:
        if self.disp_size == 0:
            return 0
        return int.from_bytes(
            self.raw[self.disp_offset : self.disp_offset + self.disp_size], "little", signed=True
        )


# --------------------------------------------------------------------------
# Opcode tables: opcode byte -> (has_modrm, immediate code).
# Immediate codes: "" none, ib/iw fixed, iz 2-or-4 by 66, iv 2/4/8 by 66/REX.W,
# iw_ib (enter), moffs 8-or-4 by 67, rel8/rel32 branch displacements,
# f6/f7 (imm present iff ModRM.reg is 0 or 1).
# --------------------------------------------------------------------------

_ONE: dict[int, tuple[bool, str]] = {}
_TWO: dict[int, tuple[bool, str]] = {}


def _fill(table, opcodes, modrm, imm=""):
    for b in opcodes:
        table[b] = (modrm, imm)


# ALU blocks: add/or/adc/sbb/and/sub/xor/cmp.
for _base in (0x00, 0x08, 0x10, 0x18, 0x20, 0x28, 0x30, 0x38):
    _fill(_ONE, (_base, _base + 1, _base + 2, _base + 3), True)
    _fill(_ONE, (_base + 4,), False, "ib")
    _fill(_ONE, (_base + 5,), False, "iz")
# Opcode 00 with a zero ModRM is overwhelmingly zero padding, not code;
# keeping it out of the table stops linear sweep at padded regions.
del _ONE[0x00]

_fill(_ONE, range(0x50, 0x60), False)  # push/pop r64
_ONE[0x63] = (True, "")  # movsxd
_ONE[0x68] = (False, "iz")
_ONE[0x69] = (True, "iz")
_ONE[0x6A] = (False, "ib")
_ONE[0x6B] = (True, "ib")
_fill(_ONE, (0x6C, 0x6D, 0x6E, 0x6F), False)  # ins/outs
_fill(_ONE, range(0x70, 0x80), False, "rel8")  # jcc
_ONE[0x80] = (True, "ib")
_ONE[0x81] = (True, "iz")
_ONE[0x83] = (True, "ib")
_fill(_ONE, (0x84, 0x85, 0x86, 0x87), True)  # test/xchg
_fill(_ONE, (0x88, 0x89, 0x8A, 0x8B, 0x8C, 0x8D, 0x8E), True)  # mov/lea
_ONE[0x8F] = (True, "")  # pop r/m
_fill(_ONE, range(0x90, 0x98), False)  # nop/xchg (F3 90 = pause)
_fill(_ONE, (0x98, 0x99, 0x9B, 0x9C, 0x9D, 0x9E, 0x9F), False)
_fill(_ONE, (0xA0, 0xA1, 0xA2, 0xA3), False, "moffs")
_fill(_ONE, (0xA4, 0xA5, 0xA6, 0xA7), False)  # movs/cmps
_ONE[0xA8] = (False, "ib")
_ONE[0xA9] = (False, "iz")
_fill(_ONE, (0xAA, 0xAB, 0xAC, 0xAD, 0xAE, 0xAF), False)  # stos/lods/scas
_fill(_ONE, range(0xB0, 0xB8), False, "ib")  # mov r8, imm8
_fill(_ONE, range(0xB8, 0xC0), False, "iv")  # mov r, imm
_ONE[0xC0] = (True, "ib")
_ONE[0xC1] = (True, "ib")
_ONE[0xC2] = (False, "iw")
_ONE[0xC3] = (False, "")
_ONE[0xC6] = (True, "ib")
_ONE[0xC7] = (True, "iz")
_ONE[0xC8] = (False, "iw_ib")  # enter
_fill(_ONE, (0xC9, 0xCB, 0xCC, 0xCF), False)
_ONE[0xCA] = (False, "iw")
_ONE[0xCD] = (False, "ib")  # int n
_fill(_ONE, (0xD0, 0xD1, 0xD2, 0xD3), True)  # shift groups
_ONE[0xD7] = (False, "")  # xlat
_fill(_ONE, range(0xD8, 0xE0), True)  # x87
_fill(_ONE, (0xE0, 0xE1, 0xE2, 0xE3), False, "rel8")  # loopcc / jrcxz
_fill(_ONE, (0xE4, 0xE5, 0xE6, 0xE7), False, "ib")  # in/out imm8
_ONE[0xE8] = (False, "rel32")  # call
_ONE[0xE9] = (False, "rel32")  # jmp
_ONE[0xEB] = (False, "rel8")  # jmp short
_fill(_ONE, (0xEC, 0xED, 0xEE, 0xEF), False)  # in/out dx
_fill(_ONE, (0xF1, 0xF4, 0xF5), False)
_ONE[0xF6] = (True, "f6")
_ONE[0xF7] = (True, "f7")
_fill(_ONE, (0xF8, 0xF9, 0xFA, 0xFB, 0xFC, 0xFD), False)
_ONE[0xFE] = (True, "")
_ONE[0xFF] = (True, "")

# Two-byte map (0F xx): ModRM with no immediate except the overrides below.
# Entries in _TWO_INVALID are gaps or obsolete extensions we refuse.
_TWO_INVALID = frozenset(
    {0x04, 0x0A, 0x0C, 0x0E, 0x0F, 0x24, 0x25, 0x26, 0x27, 0x36, 0x39}
    | set(range(0x3B, 0x40))
    | {0x7A, 0x7B, 0xA6, 0xA7}
)
for _b in range(0x100):
    if _b not in _TWO_INVALID:
        _TWO[_b] = (True, "")
_fill(_TWO, (0x05, 0x06, 0x07, 0x08, 0x09, 0x0B), False)  # syscall..ud2
_fill(_TWO, (0x30, 0x31, 0x32, 0x33, 0x34, 0x35, 0x37), False)  # wrmsr..getsec
_TWO[0x77] = (False, "")  # emms
_fill(_TWO, range(0x80, 0x90), False, "rel32")  # jcc near
_fill(_TWO, (0xA0, 0xA1, 0xA2, 0xA8, 0xA9, 0xAA), False)  # push/pop fs/gs, cpuid, rsm
_fill(_TWO, range(0xC8, 0xD0), False)  # bswap
_fill(_TWO, (0x70, 0x71, 0x72, 0x73, 0xA4, 0xAC, 0xBA, 0xC2, 0xC4, 0xC5, 0xC6), True, "ib")

_BRANCH8 = frozenset(range(0x70, 0x80)) | {0xE0, 0xE1, 0xE2, 0xE3, 0xEB}
_BRANCH32 = frozenset({0xE8, 0xE9})
_VEX_IB_OPCODES = frozenset({0x70, 0x71, 0x72, 0x73, 0xC2, 0xC4, 0xC5, 0xC6})


def _undecodable(offset: int, data: bytes) -> DecodedInstruction:
    return DecodedInstruction(
        offset=offset,
        length=1,
        klass=InsnClass.UNDECODABLE,
        raw=bytes(data[offset : offset + 1]),
    )


def _modrm_tail(data: bytes, pos: int) -> tuple[int, bool, int, int]:
    """Parse ModRM/SIB/disp starting at pos.

    Returns (consumed, rip_relative, disp_pos, disp_size); raises IndexError
    when truncated. disp_pos is an absolute index into data, -1 if none.
    """
    modrm = data[pos]
    consumed = 1
    mod = modrm >> 6
    rm = modrm & 7
    if mod == 3:
        return consumed, False, -1, 0
    rip = False
    disp = 0
    if rm == 4:
        sib = data[pos + 1]
        consumed += 1
        if mod == 0 and sib & 7 == 5:
            disp = 4
    elif mod == 0 and rm == 5:
        disp = 4
        rip = True
    if mod == 1:
        disp = 1
    elif mod == 2:
        disp = 4
    disp_pos = pos + consumed if disp else -1
    if disp_pos >= 0 and disp_pos + disp > len(data):
        raise IndexError
    return consumed + disp, rip, disp_pos, disp


def _imm_size(imm: str, has_66: bool, rex_w: bool, has_67: bool, modrm: int | None) -> int:
    if imm == "":
        return 0
    if imm == "ib":
        return 1
    if imm == "iw":
        return 2
    if imm == "iz":
        return 2 if has_66 else 4
    if imm == "iv":
        return 8 if rex_w else (2 if has_66 else 4)
    if imm == "iw_ib":
        return 3
    if imm == "moffs":
        return 4 if has_67 else 8
    if imm == "rel8":
        return 1
    if imm == "rel32":
        return 4
    if imm in ("f6", "f7"):
        reg = (modrm >> 3) & 7
        if reg in (0, 1):
            return 1 if imm == "f6" else (2 if has_66 else 4)
        return 0
    raise AssertionError(imm)


def decode_one(data: bytes, offset: int) -> DecodedInstruction:
    """Decode the instruction starting at offset.

    Never raises on malformed bytes; those come back as UNDECODABLE with
    length 1. Only an offset outside the region is an error.
    """
    if offset < 0 or offset >= len(data):
        raise ValueError(f"offset {offset:#x} out of range (region size {len(data):#x})")
    try:
        return _decode(data, offset)
    except IndexError:
        return _undecodable(offset, data)


def _decode(data: bytes, offset: int) -> DecodedInstruction:
    pos = offset
    legacy: list[int] = []
    rex = 0
    while True:
        b = data[pos]
        if b in LEGACY_PREFIXES:
            legacy.append(b)
            rex = 0  # a legacy prefix after REX makes that REX dead
            pos += 1
        elif 0x40 <= b <= 0x4F:
            rex = b
            pos += 1
        else:
            break
        if pos - offset >= MAX_INSN_LEN:
            return _undecodable(offset, data)
    prefix_len = pos - offset
    has_66 = 0x66 in legacy
    has_67 = 0x67 in legacy
    has_rep = 0xF2 in legacy or 0xF3 in legacy or 0xF0 in legacy
    rex_w = bool(rex & 0x08)

    opcode = data[pos]
    branch_rel = 0  # 1 or 4 when this is a direct branch
    klass = InsnClass.OTHER

    if opcode == 0xC5:  # 2-byte VEX
        op = data[pos + 2]
        opcode_end = pos + 3
        imm = "ib" if op in _VEX_IB_OPCODES else ""
        modrm_needed = op != 0x77  # vzeroupper/vzeroall carry no ModRM
    elif opcode == 0xC4:  # 3-byte VEX
        mmap = data[pos + 1] & 0x1F
        op = data[pos + 3]
        opcode_end = pos + 4
        if mmap == 1:
            imm = "ib" if op in _VEX_IB_OPCODES else ""
            modrm_needed = op != 0x77
        elif mmap == 2:
            imm = ""
            modrm_needed = True
        elif mmap == 3:
            imm = "ib"
            modrm_needed = True
        else:
            return _undecodable(offset, data)
    elif opcode == 0x62:  # EVEX
        mmap = data[pos + 1] & 0x07
        op = data[pos + 4]
        opcode_end = pos + 5
        if mmap == 1:
            imm = "ib" if op in _VEX_IB_OPCODES else ""
        elif mmap in (2, 5, 6):
            imm = ""
        elif mmap == 3:
            imm = "ib"
        else:
            return _undecodable(offset, data)
        modrm_needed = True
    elif opcode == 0x0F:
        second = data[pos + 1]
        if second == 0x38:
            opcode_end = pos + 3
            modrm_needed, imm = True, ""
        elif second == 0x3A:
            opcode_end = pos + 3
            modrm_needed, imm = True, "ib"
        else:
            entry = _TWO.get(second)
            if entry is None:
                return _undecodable(offset, data)
            opcode_end = pos + 2
            modrm_needed, imm = entry
            if imm == "rel32":
                branch_rel = 4
                imm = "rel32"
    else:
        entry = _ONE.get(opcode)
        if entry is None:
            return _undecodable(offset, data)
        opcode_end = pos + 1
        modrm_needed, imm = entry
        if opcode in _BRANCH8:
            branch_rel = 1
        elif opcode in _BRANCH32:
            branch_rel = 4

    if opcode_end > len(data):
        raise IndexError
    opcode_bytes = bytes(data[pos:opcode_end])

    modrm = None
    modrm_offset = -1
    rip = False
    disp_pos = -1
    disp_size = 0
    cursor = opcode_end
    if modrm_needed:
        modrm = data[cursor]
        modrm_offset = cursor - offset
        consumed, rip, disp_pos, disp_size = _modrm_tail(data, cursor)
        cursor += consumed

    imm_len = _imm_size(imm, has_66, rex_w, has_67, modrm)
    if cursor + imm_len > len(data):
        raise IndexError
    imm_pos = cursor
    cursor += imm_len

    length = cursor - offset
    if length > MAX_INSN_LEN:
        return _undecodable(offset, data)
    raw = bytes(data[offset:cursor])

    branch_target = None
    if branch_rel:
        rel = int.from_bytes(data[imm_pos : imm_pos + branch_rel], "little", signed=True)
        branch_target = offset + length + rel
        klass = InsnClass.DIRECT_BRANCH

    operand_bytes = b""
    if opcode_bytes == b"\x0f\xae" and not has_rep:
        reg = (modrm >> 3) & 7
        if modrm >= 0xC0:
            if not has_66:
                klass = {5: InsnClass.LFENCE, 6: InsnClass.MFENCE, 7: InsnClass.SFENCE}.get(
                    reg, InsnClass.OTHER
                )
        else:
            if reg == 7:
                klass = InsnClass.CLFLUSHOPT if has_66 else InsnClass.CLFLUSH
            elif reg == 6 and has_66:
                klass = InsnClass.CLWB
    if klass in FLUSH_CLASSES:
        operand_bytes = raw[modrm_offset:]

    return DecodedInstruction(
        offset=offset,
        length=length,
        klass=klass,
        raw=raw,
        operand_bytes=operand_bytes,
        rip_relative=rip,
        branch_target=branch_target,
        prefix_bytes=raw[:prefix_len],
        rex=rex,
        opcode_bytes=opcode_bytes,
        modrm=modrm,
        modrm_offset=modrm_offset,
        disp_offset=(disp_pos - offset) if disp_pos >= 0 else -1,
        disp_size=disp_size,
    )


# --------------------------------------------------------------------------
# Linear sweep.
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DecodedRun:
    """One sequential decode starting at an anchor; never crosses the next."""

    anchor: int
    instructions: tuple[DecodedInstruction, ...]


def linear_sweep(section: bytes, anchors) -> list[DecodedRun]:
    """Decode from each anchor to the next anchor, an undecodable byte, or
    the region end. An UNDECODABLE marker ends its run and is kept in it."""
    starts = sorted(set(anchors))
    for a in starts:
        if a < 0 or a >= len(section):
            raise ValueError(f"anchor {a:#x} outside region of size {len(section):#x}")
    runs = []
    for idx, anchor in enumerate(starts):
        boundary = starts[idx + 1] if idx + 1 < len(starts) else len(section)
        instructions = []
        off = anchor
        while off < boundary:
            insn = decode_one(section, off)
            if insn.klass is InsnClass.UNDECODABLE:
                instructions.append(insn)
                break
            if off + insn.length > boundary:
                break  # would cross the next anchor; drop and end the run
            instructions.append(insn)
            off += insn.length
        runs.append(DecodedRun(anchor=anchor, instructions=tuple(instructions)))
    return runs


@dataclass(frozen=True)
class FlushSite:
    """A located flush instruction plus its successor context."""

    instr: DecodedInstruction
    next: DecodedInstruction | None  # None = end-of-region marker
    run_anchor: int
    index: int  # position within the run


def find_flush_sites(runs: list[DecodedRun], include_clflushopt: bool = False) -> list[FlushSite]:
    wanted = {InsnClass.CLFLUSH}
    if include_clflushopt:
        wanted.add(InsnClass.CLFLUSHOPT)
    sites = []
    for run in runs:
        instrs = run.instructions
        for i, insn in enumerate(instrs):
            if insn.klass in wanted:
                nxt = instrs[i + 1] if i + 1 < len(instrs) else None
                sites.append(FlushSite(instr=insn, next=nxt, run_anchor=run.anchor, index=i))
    sites.sort(key=lambda s: s.instr.offset)
    return sites


def branch_targets(runs: list[DecodedRun]) -> set[int]:
    return {
        insn.branch_target
        for run in runs
        for insn in run.instructions
        if insn.klass is InsnClass.DIRECT_BRANCH and insn.branch_target is not None
    }


def all_instructions(runs: list[DecodedRun]) -> list[DecodedInstruction]:
    return [insn for run in runs for insn in run.instructions]


# --------------------------------------------------------------------------
# Encoding helpers for the patcher.
# --------------------------------------------------------------------------


def encode_clwb_like(flush: DecodedInstruction) -> bytes:
    """clwb with the same memory operand (and prefixes) as a decoded flush.

    For clflushopt this is a one-bit ModRM change; for clflush it also gains
    the 0x66 prefix, placed before any REX so REX stays adjacent to the
    opcode.
    """
    if flush.klass not in (InsnClass.CLFLUSH, InsnClass.CLFLUSHOPT):
        raise ValueError(f"cannot build clwb from {flush.klass.value}")
    operand = bytearray(flush.raw[flush.modrm_offset :])
    operand[0] = (operand[0] & 0xC7) | (6 << 3)  # reg field 7 -> 6
    prefixes = flush.prefix_bytes
    if flush.klass is InsnClass.CLFLUSH:
        if flush.rex:
            prefixes = prefixes[:-1] + b"\x66" + prefixes[-1:]
        else:
            prefixes = prefixes + b"\x66"
    return bytes(prefixes) + b"\x0f\xae" + bytes(operand)


def encode_jmp_rel32(disp: int) -> bytes:
    return b"\xe9" + disp.to_bytes(4, "little", signed=True)


def fits_rel32(disp: int) -> bool:
    return -(1 << 31) <= disp < (1 << 31)
