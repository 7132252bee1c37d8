"""Persistency operation traces: instruction vocabulary, parsing, formatting.

A trace is the persistence-relevant instruction stream of a program run:
stores, loads, cache-line flushes (clflush / clflushopt / clwb) and ordering
fences (sfence / mfence), in program order. Cache lines are 64 bytes; an
access never straddles a line boundary.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator

from .errors import TraceParseError

LINE_SIZE = 64
LINE_SHIFT = 6
VALID_SIZES = (1, 2, 4, 8)


class OpKind(enum.Enum):
    STORE = "store"
    LOAD = "load"
    CLFLUSH = "clflush"
    CLFLUSHOPT = "clflushopt"
    CLWB = "clwb"
    SFENCE = "sfence"
    MFENCE = "mfence"


FLUSH_KINDS = frozenset({OpKind.CLFLUSH, OpKind.CLFLUSHOPT, OpKind.CLWB})
FENCE_KINDS = frozenset({OpKind.SFENCE, OpKind.MFENCE})
CONSTRAINT_KINDS = FLUSH_KINDS | FENCE_KINDS
ACCESS_KINDS = frozenset({OpKind.STORE, OpKind.LOAD})


def line_of(addr: int) -> int:
    return addr >> LINE_SHIFT


def line_base(line: int) -> int:
    return line << LINE_SHIFT


@dataclass(frozen=True)
class TraceOp:
    kind: OpKind
    addr: int | None = None
    size: int | None = None
    value: int | None = None

    def __post_init__(self):
        k = self.kind
        if k in FENCE_KINDS:
            if self.addr is not None or self.size is not None or self.value is not None:
                raise ValueError(f"{k.value} carries no operands")
            return
        if self.addr is None or self.addr < 0:
            raise ValueError(f"{k.value} requires a non-negative address")
        if k in FLUSH_KINDS:
            if self.size is not None or self.value is not None:
                raise ValueError(f"{k.value} carries only an address")
            return
        if self.size not in VALID_SIZES:
            raise ValueError(f"{k.value} size must be one of {VALID_SIZES}")
        if self.addr % LINE_SIZE + self.size > LINE_SIZE:
            raise ValueError(
                f"access straddles a cache-line boundary "
                f"(addr {self.addr:#x} mod {LINE_SIZE} = {self.addr % LINE_SIZE}, "
                f"{self.addr % LINE_SIZE}+{self.size} > {LINE_SIZE})"
            )
        if k is OpKind.STORE:
            if self.value is None or self.value < 0 or self.value >= 1 << (8 * self.size):
                raise ValueError(f"store value must be an unsigned {self.size}-byte integer")
        elif self.value is not None:
            raise ValueError("load carries no value")

    @property
    def line(self) -> int:
        if self.addr is None:
            raise ValueError(f"{self.kind.value} has no address")
        return line_of(self.addr)

    def format(self) -> str:
        if self.kind in FENCE_KINDS:
            return self.kind.value
        if self.kind in FLUSH_KINDS:
            return f"{self.kind.value} {self.addr:#x}"
        if self.kind is OpKind.LOAD:
            return f"load {self.addr:#x} {self.size}"
        return f"store {self.addr:#x} {self.size} {self.value}"


def store(addr: int, size: int = 8, value: int = 0) -> TraceOp:
    return TraceOp(OpKind.STORE, addr, size, value)


def load(addr: int, size: int = 8) -> TraceOp:
    return TraceOp(OpKind.LOAD, addr, size)


def clflush(addr: int) -> TraceOp:
    return TraceOp(OpKind.CLFLUSH, addr)


def clflushopt(addr: int) -> TraceOp:
    return TraceOp(OpKind.CLFLUSHOPT, addr)


def clwb(addr: int) -> TraceOp:
    return TraceOp(OpKind.CLWB, addr)


def sfence() -> TraceOp:
    return TraceOp(OpKind.SFENCE)


def mfence() -> TraceOp:
    return TraceOp(OpKind.MFENCE)


@dataclass(frozen=True)
class TraceProgram:
    """An ordered persistency trace; index i executes before index i+1."""

    ops: tuple[TraceOp, ...]

    def __len__(self) -> int:
        return len(self.ops)

    def __iter__(self) -> Iterator[TraceOp]:
        return iter(self.ops)

    def __getitem__(self, i):
        return self.ops[i]

    @property
    def lines(self) -> tuple[int, ...]:
        """Distinct cache lines touched by any op, ascending."""
        return tuple(sorted({op.line for op in self.ops if op.addr is not None}))

    @property
    def line_count(self) -> int:
        return len(self.lines)

    def format(self) -> str:
        return "".join(op.format() + "\n" for op in self.ops)


def program(*ops: TraceOp) -> TraceProgram:
    return TraceProgram(tuple(ops))


def _parse_int(token: str, what: str, lineno: int) -> int:
    try:
        return int(token, 0)
    except ValueError:
        raise TraceParseError(f"bad {what} {token!r}", lineno) from None


def _parse_addr(token: str, lineno: int) -> int:
    if not token.lower().startswith("0x"):
        raise TraceParseError(f"address must be hex with 0x prefix, got {token!r}", lineno)
    return _parse_int(token, "address", lineno)


_ARITY = {
    "store": 3,
    "load": 2,
    "clflush": 1,
    "clflushopt": 1,
    "clwb": 1,
    "sfence": 0,
    "mfence": 0,
}


def parse_trace(text: str) -> TraceProgram:
    """Parse trace-file content.

    One op per line; `#` starts a comment; blank lines are ignored. Errors
    carry the offending line number.
    """
    ops = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        keyword, args = tokens[0].lower(), tokens[1:]
        if keyword not in _ARITY:
            raise TraceParseError(f"unknown op {keyword!r}", lineno)
        if len(args) != _ARITY[keyword]:
            raise TraceParseError(
                f"{keyword} takes {_ARITY[keyword]} argument(s), got {len(args)}", lineno
            )
        try:
            if keyword == "store":
                op = store(
                    _parse_addr(args[0], lineno),
                    _parse_int(args[1], "size", lineno),
                    _parse_int(args[2], "value", lineno),
                )
            elif keyword == "load":
                op = load(_parse_addr(args[0], lineno), _parse_int(args[1], "size", lineno))
            elif keyword in ("clflush", "clflushopt", "clwb"):
                op = TraceOp(OpKind(keyword), _parse_addr(args[0], lineno))
            else:
                op = TraceOp(OpKind(keyword))
        except ValueError as exc:
            raise TraceParseError(str(exc), lineno) from None
        ops.append(op)
    return TraceProgram(tuple(ops))


def load_trace_file(path) -> TraceProgram:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_trace(fh.read())
