"""objdump-backed reference oracle for decoder agreement tests.

GNU objdump is an independent disassembler: it shares no code with the
package. compare_binary() requires, per executable region, that the anchored
linear sweep reproduces objdump's instruction stream exactly: same offsets,
same lengths, matching flush/fence classification, and matching direct
branch targets.
"""

import re
import subprocess
from dataclasses import dataclass

from pmpatch.elf import ElfImage
from pmpatch.x86 import InsnClass, all_instructions, linear_sweep

_INSN_RE = re.compile(r"^\s*([0-9a-f]+):\t((?:[0-9a-f]{2} )+)\s*\t?(\S*)(.*)$")

_CLASS_BY_MNEMONIC = {
    "clflush": InsnClass.CLFLUSH,
    "clflushopt": InsnClass.CLFLUSHOPT,
    "clwb": InsnClass.CLWB,
    "sfence": InsnClass.SFENCE,
    "mfence": InsnClass.MFENCE,
    "lfence": InsnClass.LFENCE,
}

_BRANCH_RE = re.compile(r"^(call[q]?|jmp[q]?|j[a-z]{1,4}|loop\w*|jrcxz)$")
_TARGET_RE = re.compile(r"^\s*([0-9a-f]+)\s*<")


@dataclass
class OracleInsn:
    addr: int
    length: int
    mnemonic: str
    operands: str


def objdump_instructions(path) -> list[OracleInsn]:
    out = subprocess.run(
        ["objdump", "-dw", str(path)], capture_output=True, text=True, check=True
    ).stdout
    insns = []
    for line in out.splitlines():
        m = _INSN_RE.match(line)
        if not m:
            continue
        mnemonic = m.group(3)
        if mnemonic in ("", "..."):
            continue
        raw = bytes.fromhex(m.group(2).replace(" ", ""))
        insns.append(
            OracleInsn(
                addr=int(m.group(1), 16),
                length=len(raw),
                mnemonic=mnemonic,
                operands=m.group(4).strip(),
            )
        )
    return insns


@dataclass
class Agreement:
    compared: int
    mismatches: list[str]

    @property
    def ok(self) -> bool:
        return not self.mismatches


def compare_binary(img: ElfImage, path) -> Agreement:
    oracle = objdump_instructions(path)
    mismatches: list[str] = []
    compared = 0
    for region in img.exec_regions:
        runs = linear_sweep(img.region_bytes(region), img.func_anchors(region))
        mine = {
            region.vaddr + insn.offset: insn
            for insn in all_instructions(runs)
            if insn.klass is not InsnClass.UNDECODABLE
        }
        for ref in oracle:
            if not region.vaddr <= ref.addr < region.vend:
                continue
            compared += 1
            insn = mine.get(ref.addr)
            if insn is None:
                mismatches.append(f"{ref.addr:#x}: not decoded (objdump: {ref.mnemonic})")
                continue
            if insn.length != ref.length:
                mismatches.append(
                    f"{ref.addr:#x}: length {insn.length} != {ref.length} ({ref.mnemonic})"
                )
                continue
            want = _CLASS_BY_MNEMONIC.get(ref.mnemonic)
            if want is not None:
                if insn.klass is not want:
                    mismatches.append(
                        f"{ref.addr:#x}: classified {insn.klass.value}, objdump says {ref.mnemonic}"
                    )
                continue
            if insn.klass in _CLASS_BY_MNEMONIC.values():
                mismatches.append(
                    f"{ref.addr:#x}: classified {insn.klass.value}, "
                    f"objdump says {ref.mnemonic} (not a flush/fence)"
                )
                continue
            if _BRANCH_RE.match(ref.mnemonic):
                tm = _TARGET_RE.match(ref.operands)
                if tm:
                    want_target = int(tm.group(1), 16)
                    if insn.klass is not InsnClass.DIRECT_BRANCH:
                        mismatches.append(
                            f"{ref.addr:#x}: objdump sees direct branch "
                            f"{ref.mnemonic} {ref.operands}, decoder says {insn.klass.value}"
                        )
                    elif region.vaddr + insn.branch_target != want_target:
                        mismatches.append(
                            f"{ref.addr:#x}: branch target "
                            f"{region.vaddr + insn.branch_target:#x} != {want_target:#x}"
                        )
    return Agreement(compared=compared, mismatches=mismatches)
