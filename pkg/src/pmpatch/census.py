"""Trace census: count flushes/fences, redundant flushes, eviction refetches.

Definitions (single deterministic forward pass):

- A flush of line L is redundant iff no store to L happened since the
  previous flush of L (or since program start if L was never stored).
- clflush/clflushopt evict: they make a resident line non-resident. clwb
  leaves residency untouched. Stores and loads make a line resident.
- An eviction refetch is a store/load to a line that is non-resident because
  a flush evicted it: a PM read the evicting-flush variant pays and the
  clwb variant does not. Capacity evictions are deliberately not modelled;
  residency changes only through flush instructions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .trace import ACCESS_KINDS, OpKind, TraceProgram, line_base

_FLUSH_NAMES = ("clflush", "clflushopt", "clwb")
_FENCE_NAMES = ("sfence", "mfence")


@dataclass
class LineCensus:
    flushes: int = 0
    redundant: int = 0
    refetches: int = 0


@dataclass
class CensusReport:
    flushes: dict[str, int]
    fences: dict[str, int]
    redundant_flushes: int
    eviction_refetches: int
    per_line: dict[int, LineCensus]  # keyed by line base address

    @property
    def flush_total(self) -> int:
        return sum(self.flushes.values())

    def to_json_dict(self) -> dict:
        return {
            "flushes": dict(self.flushes),
            "fences": dict(self.fences),
            "redundant_flushes": self.redundant_flushes,
            "eviction_refetches": self.eviction_refetches,
            "per_line": {
                f"{base:#x}": {
                    "flushes": lc.flushes,
                    "redundant": lc.redundant,
                    "refetches": lc.refetches,
                }
                for base, lc in sorted(self.per_line.items())
            },
        }

    def format_table(self) -> str:
        rows = [
            "flushes: "
            + " ".join(f"{name}={self.flushes[name]}" for name in _FLUSH_NAMES)
            + f" total={self.flush_total}",
            "fences:  " + " ".join(f"{name}={self.fences[name]}" for name in _FENCE_NAMES),
            f"redundant_flushes:  {self.redundant_flushes}",
            f"eviction_refetches: {self.eviction_refetches}",
        ]
        if self.per_line:
            rows.append(f"{'line':>12}  {'flushes':>7}  {'redundant':>9}  {'refetches':>9}")
            for base, lc in sorted(self.per_line.items()):
                rows.append(
                    f"{base:#12x}  {lc.flushes:>7}  {lc.redundant:>9}  {lc.refetches:>9}"
                )
        return "\n".join(rows) + "\n"


def census(p: TraceProgram) -> CensusReport:
    flushes = {name: 0 for name in _FLUSH_NAMES}
    fences = {name: 0 for name in _FENCE_NAMES}
    per_line: dict[int, LineCensus] = {}
    stored_since_flush: dict[int, bool] = {}
    resident: dict[int, bool] = {}
    evicted_by_flush: dict[int, bool] = {}
    redundant = 0
    refetches = 0

    for op in p:
        k = op.kind
        if k in ACCESS_KINDS:
            line = op.line
            lc = per_line.setdefault(line_base(line), LineCensus())
            if not resident.get(line, False) and evicted_by_flush.get(line, False):
                refetches += 1
                lc.refetches += 1
            resident[line] = True
            evicted_by_flush[line] = False
            if k is OpKind.STORE:
                stored_since_flush[line] = True
        elif k in (OpKind.CLFLUSH, OpKind.CLFLUSHOPT, OpKind.CLWB):
            line = op.line
            lc = per_line.setdefault(line_base(line), LineCensus())
            flushes[k.value] += 1
            lc.flushes += 1
            if not stored_since_flush.get(line, False):
                redundant += 1
                lc.redundant += 1
            stored_since_flush[line] = False
            if k is not OpKind.CLWB and resident.get(line, False):
                resident[line] = False
                evicted_by_flush[line] = True
        else:
            fences[k.value] += 1

    return CensusReport(
        flushes=flushes,
        fences=fences,
        redundant_flushes=redundant,
        eviction_refetches=refetches,
        per_line=per_line,
    )
