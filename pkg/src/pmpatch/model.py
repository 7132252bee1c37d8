"""Executable model of x86 buffered relaxed persistency over single-threaded traces.

The model tracks, per 64-byte cache line, the architectural (volatile) content
and the content guaranteed to be in persistent memory. Transition rules:

- A store updates the volatile image and dirties its line.
- clflush persists its line at execution and is ordered after all earlier
  flushes: it can only execute once no flush obligation is pending.
- clflushopt / clwb create a completion obligation that may resolve at any
  later point; at this granularity the two are indistinguishable (eviction
  behaviour is invisible to crash states).
- sfence / mfence execute only once every pending obligation has completed.
  The load-ordering strength of mfence has no persistence effect, so both
  fences share one rule.
- Any dirty line may be written back spontaneously at any time (adversarial
  cache eviction), and any pending obligation may complete at any time.

A crash may happen anywhere, so the crash-state set of a program is the set
of persisted images over all reachable states. Enumeration is exhaustive and
bounded; hitting a bound is a hard error, never a truncated result.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from . import _enumpy, kernel
from .errors import BoundsExceededError
from .trace import (
    FENCE_KINDS,
    LINE_SIZE,
    OpKind,
    TraceOp,
    TraceProgram,
    clwb,
    line_base,
    sfence,
)

# A canonical persisted image: ((line, 64-byte content), ...) sorted by line,
# all-zero lines omitted. Hashable and totally ordered.
Image = tuple[tuple[int, bytes], ...]

_ZERO_LINE = bytes(LINE_SIZE)


@dataclass(frozen=True)
class Bounds:
    """Enumeration resource limits; exceeding any of them raises."""

    max_ops: int = 16
    max_lines: int = 4
    max_states: int = 1_000_000


def format_image(img: Image) -> str:
    if not img:
        return "(all zero)"
    parts = []
    for line, content in img:
        parts.append(f"{line_base(line):#x}={content.rstrip(bytes(1)).hex() or '00'}")
    return " ".join(parts)


@dataclass(frozen=True)
class CrashStateSet:
    """All persisted images observable if execution crashes at any point."""

    states: frozenset[Image]

    def __len__(self) -> int:
        return len(self.states)

    def __contains__(self, img: Image) -> bool:
        return img in self.states

    def sorted_states(self) -> list[Image]:
        return sorted(self.states)


# ---------------------------------------------------------------------------
# Explicit machine states (readable reference semantics).
# The packed kernels below implement the same transition system; tests check
# the two against each other.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MachineState:
    volatile_img: dict[int, bytes]
    persisted_img: dict[int, bytes]
    dirty: frozenset[int]
    pending_flushes: frozenset[tuple[int, int]]  # (line, index of originating flush)
    pc: int

    def canonical_key(self):
        return (
            self.pc,
            self.pending_flushes,
            tuple(sorted(self.volatile_img.items())),
            tuple(sorted(self.persisted_img.items())),
        )

    def crash_image(self) -> Image:
        return tuple(
            (line, content)
            for line, content in sorted(self.persisted_img.items())
            if content != _ZERO_LINE
        )


def initial_state(p: TraceProgram) -> MachineState:
    lines = p.lines
    zeros = {line: _ZERO_LINE for line in lines}
    return MachineState(
        volatile_img=dict(zeros),
        persisted_img=dict(zeros),
        dirty=frozenset(),
        pending_flushes=frozenset(),
        pc=0,
    )


def _store_bytes(content: bytes, addr: int, size: int, value: int) -> bytes:
    off = addr % LINE_SIZE
    buf = bytearray(content)
    buf[off : off + size] = value.to_bytes(size, "little")
    return bytes(buf)


def _persist_line(s: MachineState, line: int, pending: frozenset, pc: int) -> MachineState:
    persisted = dict(s.persisted_img)
    persisted[line] = s.volatile_img[line]
    return MachineState(
        volatile_img=s.volatile_img,
        persisted_img=persisted,
        dirty=s.dirty - {line},
        pending_flushes=pending,
        pc=pc,
    )


def successors(s: MachineState, p: TraceProgram) -> list[tuple[str, MachineState]]:
    """Every enabled transition from s, with a human-readable label."""
    out: list[tuple[str, MachineState]] = []
    if s.pc < len(p):
        op = p[s.pc]
        k = op.kind
        label = f"exec:{k.value}@{s.pc}"
        if k is OpKind.STORE:
            line = op.line
            vol = dict(s.volatile_img)
            vol[line] = _store_bytes(vol[line], op.addr, op.size, op.value)
            dirty = s.dirty | {line} if vol[line] != s.persisted_img[line] else s.dirty - {line}
            out.append(
                (
                    label,
                    MachineState(vol, s.persisted_img, dirty, s.pending_flushes, s.pc + 1),
                )
            )
        elif k is OpKind.LOAD:
            out.append(
                (
                    label,
                    MachineState(
                        s.volatile_img, s.persisted_img, s.dirty, s.pending_flushes, s.pc + 1
                    ),
                )
            )
        elif k is OpKind.CLFLUSH:
            if not s.pending_flushes:
                out.append((label, _persist_line(s, op.line, s.pending_flushes, s.pc + 1)))
        elif k in (OpKind.CLFLUSHOPT, OpKind.CLWB):
            pending = s.pending_flushes | {(op.line, s.pc)}
            out.append(
                (
                    label,
                    MachineState(s.volatile_img, s.persisted_img, s.dirty, pending, s.pc + 1),
                )
            )
        else:  # sfence / mfence share one rule: drain, then advance
            if not s.pending_flushes:
                out.append(
                    (
                        label,
                        MachineState(
                            s.volatile_img, s.persisted_img, s.dirty, s.pending_flushes, s.pc + 1
                        ),
                    )
                )
    for line, origin in sorted(s.pending_flushes):
        pending = s.pending_flushes - {(line, origin)}
        out.append(
            (
                f"complete-flush:{line_base(line):#x}<-{origin}",
                _persist_line(s, line, pending, s.pc),
            )
        )
    for line in sorted(s.dirty):
        out.append(
            (f"evict:{line_base(line):#x}", _persist_line(s, line, s.pending_flushes, s.pc))
        )
    return out


# ---------------------------------------------------------------------------
# Packed enumeration.
# ---------------------------------------------------------------------------

_KIND_CODE = {
    OpKind.STORE: _enumpy.K_STORE,
    OpKind.LOAD: _enumpy.K_LOAD,
    OpKind.CLFLUSH: _enumpy.K_CLFLUSH,
    OpKind.CLFLUSHOPT: _enumpy.K_CLFLUSHOPT,
    OpKind.CLWB: _enumpy.K_CLWB,
    OpKind.SFENCE: _enumpy.K_SFENCE,
    OpKind.MFENCE: _enumpy.K_MFENCE,
}


@dataclass
class _Prep:
    lines: list[int]
    versions: list[list[bytes]]
    op_kind: list[int]
    op_line: list[int]
    op_slot: list[int]
    slot_line: list[int]
    vol_flat: list[int]
    ver_off: list[int]
    ver_mask: list[int]
    pc_bits: int
    n_slots: int
    per_shift: int
    total_bits: int


def _prepare(p: TraceProgram, bounds: Bounds) -> _Prep:
    if len(p) > bounds.max_ops:
        raise BoundsExceededError(f"program has {len(p)} ops (limit {bounds.max_ops})")
    lines = list(p.lines)
    if len(lines) > bounds.max_lines:
        raise BoundsExceededError(
            f"program touches {len(lines)} cache lines (limit {bounds.max_lines})"
        )
    index = {line: i for i, line in enumerate(lines)}
    n_lines = len(lines)

    versions: list[list[bytes]] = [[_ZERO_LINE] for _ in lines]
    interned: list[dict[bytes, int]] = [{_ZERO_LINE: 0} for _ in lines]

    op_kind, op_line, op_slot, slot_line = [], [], [], []
    row = [0] * n_lines
    vol_flat = list(row)
    for op in p:
        op_kind.append(_KIND_CODE[op.kind])
        l = index[op.line] if op.addr is not None else -1
        op_line.append(l)
        if op.kind in (OpKind.CLFLUSHOPT, OpKind.CLWB):
            op_slot.append(len(slot_line))
            slot_line.append(l)
        else:
            op_slot.append(-1)
        if op.kind is OpKind.STORE:
            content = _store_bytes(versions[l][row[l]], op.addr, op.size, op.value)
            ver = interned[l].get(content)
            if ver is None:
                ver = len(versions[l])
                versions[l].append(content)
                interned[l][content] = ver
            row[l] = ver
        vol_flat.extend(row)

    pc_bits = max(1, len(p).bit_length())
    n_slots = len(slot_line)
    per_shift = pc_bits + n_slots
    ver_off, ver_mask = [], []
    off = per_shift
    for l in range(n_lines):
        bits = max(1, (len(versions[l]) - 1).bit_length())
        ver_off.append(off)
        ver_mask.append((1 << bits) - 1)
        off += bits
    return _Prep(
        lines=lines,
        versions=versions,
        op_kind=op_kind,
        op_line=op_line,
        op_slot=op_slot,
        slot_line=slot_line,
        vol_flat=vol_flat,
        ver_off=ver_off,
        ver_mask=ver_mask,
        pc_bits=pc_bits,
        n_slots=n_slots,
        per_shift=per_shift,
        total_bits=off,
    )


def enumerate_crash_states(
    p: TraceProgram, bounds: Bounds = Bounds(), kernel_force: str | None = None
) -> CrashStateSet:
    """Exhaustively enumerate every persisted image reachable at a crash.

    Deterministic: state dedup is structural, independent of exploration
    order. kernel_force picks an enumeration kernel ("py"/"compiled") for
    benchmarks and parity tests; None selects automatically.
    """
    prep = _prepare(p, bounds)
    run = kernel.select_kernel(prep.total_bits, kernel_force)
    keys = run(
        prep.op_kind,
        prep.op_line,
        prep.op_slot,
        prep.slot_line,
        prep.vol_flat,
        prep.ver_off,
        prep.ver_mask,
        prep.pc_bits,
        prep.n_slots,
        prep.per_shift,
        bounds.max_states,
    )
    states = set()
    rel = [off - prep.per_shift for off in prep.ver_off]
    for key in keys:
        img = []
        for l, line in enumerate(prep.lines):
            content = prep.versions[l][(key >> rel[l]) & prep.ver_mask[l]]
            if content != _ZERO_LINE:
                img.append((line, content))
        states.add(tuple(img))
    return CrashStateSet(frozenset(states))


def final_image(p: TraceProgram) -> Image:
    """The image after executing everything and persisting every dirty line."""
    contents: dict[int, bytes] = {}
    for op in p:
        if op.kind is OpKind.STORE:
            prev = contents.get(op.line, _ZERO_LINE)
            contents[op.line] = _store_bytes(prev, op.addr, op.size, op.value)
    return tuple(
        (line, content) for line, content in sorted(contents.items()) if content != _ZERO_LINE
    )


# ---------------------------------------------------------------------------
# Trace rewriting and equivalence.
# ---------------------------------------------------------------------------


class RuleName(enum.Enum):
    CLFLUSH_TO_CLWB_SFENCE = "clflush-to-clwb-sfence"
    CLFLUSHOPT_TO_CLWB = "clflushopt-to-clwb"
    MFENCE_TO_SFENCE = "mfence-to-sfence"


@dataclass(frozen=True)
class RewriteRule:
    name: RuleName
    # How many following ops to scan for an existing fence before adding one.
    # Only meaningful for CLFLUSH_TO_CLWB_SFENCE; crash-state equality is
    # guaranteed for the default window of 1.
    window: int = 1


def rewrite_flush_ops(
    ops: tuple[TraceOp, ...], kinds: frozenset[OpKind], window: int
) -> tuple[TraceOp, ...]:
    """Replace each flush of a kind in `kinds` with clwb, adding sfence unless
    a fence already follows within `window` ops of the original program."""
    out: list[TraceOp] = []
    for i, op in enumerate(ops):
        if op.kind in kinds:
            fence_follows = any(o.kind in FENCE_KINDS for o in ops[i + 1 : i + 1 + window])
            out.append(clwb(op.addr))
            if not fence_follows:
                out.append(sfence())
        else:
            out.append(op)
    return tuple(out)


def rewrite_trace(p: TraceProgram, rule: RewriteRule) -> TraceProgram:
    if rule.name is RuleName.CLFLUSH_TO_CLWB_SFENCE:
        return TraceProgram(rewrite_flush_ops(p.ops, frozenset({OpKind.CLFLUSH}), rule.window))
    if rule.name is RuleName.CLFLUSHOPT_TO_CLWB:
        return TraceProgram(
            tuple(clwb(op.addr) if op.kind is OpKind.CLFLUSHOPT else op for op in p.ops)
        )
    if rule.name is RuleName.MFENCE_TO_SFENCE:
        return TraceProgram(
            tuple(sfence() if op.kind is OpKind.MFENCE else op for op in p.ops)
        )
    raise ValueError(f"unknown rewrite rule {rule.name}")


class Verdict(enum.Enum):
    EQUAL = "EQUAL"
    P1_SUBSET = "P1_SUBSET"
    P2_SUBSET = "P2_SUBSET"
    INCOMPARABLE = "INCOMPARABLE"


@dataclass(frozen=True)
class EquivalenceResult:
    verdict: Verdict
    only_p1: tuple[Image, ...] = field(default=())
    only_p2: tuple[Image, ...] = field(default=())

    @property
    def witnesses(self) -> tuple[Image, ...]:
        return self.only_p1 + self.only_p2


def crash_equivalent(
    p1: TraceProgram, p2: TraceProgram, bounds: Bounds = Bounds()
) -> EquivalenceResult:
    """Compare the crash-state sets of two programs.

    P1_SUBSET means p1's set is a strict subset of p2's; witnesses are images
    present in exactly one set.
    """
    s1 = enumerate_crash_states(p1, bounds).states
    s2 = enumerate_crash_states(p2, bounds).states
    if s1 == s2:
        return EquivalenceResult(Verdict.EQUAL)
    only1 = tuple(sorted(s1 - s2))
    only2 = tuple(sorted(s2 - s1))
    if not only1:
        return EquivalenceResult(Verdict.P1_SUBSET, only_p2=only2)
    if not only2:
        return EquivalenceResult(Verdict.P2_SUBSET, only_p1=only1)
    return EquivalenceResult(Verdict.INCOMPARABLE, only_p1=only1, only_p2=only2)
