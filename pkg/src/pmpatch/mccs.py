"""Search for the cheapest flush/fence constraint set that keeps a trace
crash-consistent under a user-supplied predicate.

Each flush/fence op is a constraint slot that can move down a downgrade
chain; every chain step keeps or enlarges the reachable crash-state set
(clflush == clflushopt+sfence == clwb+sfence at this model's granularity,
and dropping an op only adds states), so if a deeper option is safe, every
intermediate one is too. The greedy search walks slots down their chains one
step at a time, at each round taking the passing step that yields the
cheapest program (ties: earliest op), until no step passes the oracle. The
oracle is exhaustive crash-state enumeration.

Greedy is not guaranteed globally optimal across interacting slots;
exhaustive_optimum enumerates the full assignment lattice as the reference.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

from .errors import InconsistentInputError, PredicateParseError
from .model import Bounds, Image, enumerate_crash_states, format_image
from .trace import (
    CONSTRAINT_KINDS,
    LINE_SIZE,
    OpKind,
    TraceOp,
    TraceProgram,
    line_of,
)

_ZERO_LINE = bytes(LINE_SIZE)


# --------------------------------------------------------------------------
# Consistency predicates.
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Condition:
    """bytes [offset, offset+size) of a line equal value (little-endian)."""

    line: int
    offset: int
    size: int
    value: int

    def holds(self, image: Image) -> bool:
        content = _ZERO_LINE
        for line, data in image:
            if line == self.line:
                content = data
                break
        return content[self.offset : self.offset + self.size] == self.value.to_bytes(
            self.size, "little"
        )

    def format(self) -> str:
        return f"{self.line << 6:#x}:{self.offset}:{self.size}={self.value:#x}"


@dataclass(frozen=True)
class OrderingRule:
    """`first` must persist no later than `later`: an image where `later`
    holds but `first` does not is inconsistent."""

    first: Condition
    later: Condition

    def holds(self, image: Image) -> bool:
        return self.first.holds(image) or not self.later.holds(image)

    def format(self) -> str:
        return f"order {self.first.format()} before {self.later.format()}"


@dataclass(frozen=True)
class ConsistencyPredicate:
    allowed: frozenset[Image] | None = None
    rules: tuple[OrderingRule, ...] = ()

    def satisfied(self, image: Image) -> bool:
        if self.allowed is not None:
            return image in self.allowed
        return all(rule.holds(image) for rule in self.rules)

    @staticmethod
    def from_allowed(images) -> "ConsistencyPredicate":
        return ConsistencyPredicate(allowed=frozenset(images))

    @staticmethod
    def from_rules(rules) -> "ConsistencyPredicate":
        return ConsistencyPredicate(rules=tuple(rules))


def _parse_condition(token: str, lineno: int) -> Condition:
    parts = token.split(":")
    if len(parts) != 3 or "=" not in parts[2]:
        raise PredicateParseError(
            f"condition must be <line>:<offset>:<size>=<value>, got {token!r}", lineno
        )
    size_s, value_s = parts[2].split("=", 1)
    try:
        addr = int(parts[0], 0)
        offset = int(parts[1], 0)
        size = int(size_s, 0)
        value = int(value_s, 0)
    except ValueError:
        raise PredicateParseError(f"bad number in condition {token!r}", lineno) from None
    if size not in (1, 2, 4, 8) or offset < 0 or offset + size > LINE_SIZE:
        raise PredicateParseError(f"bad offset/size in condition {token!r}", lineno)
    if value < 0 or value >= 1 << (8 * size):
        raise PredicateParseError(f"value out of range in condition {token!r}", lineno)
    return Condition(line=line_of(addr), offset=offset, size=size, value=value)


def _parse_image_spec(spec: str, lineno: int) -> Image:
    if spec in ("", "-"):
        return ()
    entries = []
    for part in spec.split(","):
        if "=" not in part:
            raise PredicateParseError(f"image entry must be line=hexbytes, got {part!r}", lineno)
        addr_s, hex_s = part.split("=", 1)
        try:
            addr = int(addr_s, 0)
            data = bytes.fromhex(hex_s)
        except ValueError:
            raise PredicateParseError(f"bad image entry {part!r}", lineno) from None
        if len(data) > LINE_SIZE:
            raise PredicateParseError(f"line content longer than {LINE_SIZE} bytes", lineno)
        data = data + bytes(LINE_SIZE - len(data))
        if data != _ZERO_LINE:
            entries.append((line_of(addr), data))
    entries.sort()
    return tuple(entries)


def parse_predicate(text: str) -> ConsistencyPredicate:
    """Predicate file: either `allow <image-spec>` lines (explicit set of
    permitted images; `-` or nothing = the all-zero image) or
    `order <cond> before <cond>` rules. The two forms cannot be mixed."""
    allowed: list[Image] = []
    rules: list[OrderingRule] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if tokens[0] == "allow":
            if len(tokens) > 2:
                raise PredicateParseError("allow takes at most one image spec", lineno)
            allowed.append(_parse_image_spec(tokens[1] if len(tokens) == 2 else "", lineno))
        elif tokens[0] == "order":
            if len(tokens) != 4 or tokens[2] != "before":
                raise PredicateParseError(
                    "order syntax: order <cond> before <cond>", lineno
                )
            rules.append(
                OrderingRule(
                    first=_parse_condition(tokens[1], lineno),
                    later=_parse_condition(tokens[3], lineno),
                )
            )
        else:
            raise PredicateParseError(f"unknown directive {tokens[0]!r}", lineno)
    if allowed and rules:
        raise PredicateParseError("cannot mix allow and order directives")
    if allowed:
        return ConsistencyPredicate.from_allowed(allowed)
    if rules:
        return ConsistencyPredicate.from_rules(rules)
    raise PredicateParseError("predicate file is empty")


def load_predicate_file(path) -> ConsistencyPredicate:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_predicate(fh.read())


# --------------------------------------------------------------------------
# Cost model and downgrade chains.
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CostModel:
    clflush: int = 3
    clflushopt: int = 2
    clwb: int = 2
    mfence: int = 2
    sfence: int = 1

    def __post_init__(self):
        for name in ("clflush", "clflushopt", "clwb", "mfence", "sfence"):
            if getattr(self, name) < 0:
                raise ValueError(f"cost({name}) must be >= 0")

    def op_cost(self, kind: OpKind) -> int:
        return getattr(self, kind.value)

    def seq_cost(self, kinds: tuple[OpKind, ...]) -> int:
        return sum(self.op_cost(k) for k in kinds)

    def program_constraint_cost(self, p: TraceProgram) -> int:
        return sum(self.op_cost(op.kind) for op in p if op.kind in CONSTRAINT_KINDS)

    def with_overrides(self, overrides: dict[str, int]) -> "CostModel":
        return replace(self, **overrides)


# Downgrade chains, shallowest to deepest. Each step never shrinks the
# crash-state set, so safety is monotone along a chain.
CHAINS: dict[OpKind, tuple[tuple[OpKind, ...], ...]] = {
    OpKind.CLFLUSH: (
        (OpKind.CLFLUSHOPT, OpKind.SFENCE),
        (OpKind.CLWB, OpKind.SFENCE),
        (OpKind.CLWB,),
        (OpKind.CLFLUSHOPT,),
        (),
    ),
    OpKind.MFENCE: ((OpKind.SFENCE,), ()),
    OpKind.SFENCE: ((),),
    OpKind.CLWB: ((),),
    OpKind.CLFLUSHOPT: ((),),
}


def _substitute(op: TraceOp, kinds: tuple[OpKind, ...]) -> tuple[TraceOp, ...]:
    return tuple(
        TraceOp(k, op.addr) if k in (OpKind.CLFLUSH, OpKind.CLFLUSHOPT, OpKind.CLWB) else TraceOp(k)
        for k in kinds
    )


def _describe(kinds: tuple[OpKind, ...]) -> str:
    if not kinds:
        return "removed"
    return "downgraded-to " + "+".join(k.value for k in kinds)


@dataclass(frozen=True)
class SlotLog:
    index: int  # op index in the input program
    original: OpKind
    outcome: str  # "kept" | "removed" | "downgraded-to ..."


@dataclass(frozen=True)
class MinimizeResult:
    program: TraceProgram
    total_cost: int
    log: tuple[SlotLog, ...]
    oracle_calls: int


class _Instance:
    def __init__(self, p: TraceProgram, pred: ConsistencyPredicate, cm: CostModel, bounds: Bounds):
        self.p = p
        self.pred = pred
        self.cm = cm
        # A slot substitution is at most two ops, so candidates can double in
        # length; the state limit is the real guard.
        self.bounds = bounds
        self.candidate_bounds = replace(bounds, max_ops=2 * bounds.max_ops)
        self.slots = [i for i, op in enumerate(p) if op.kind in CONSTRAINT_KINDS]
        self.oracle_calls = 0

    def build(self, assignment: dict[int, tuple[OpKind, ...]]) -> TraceProgram:
        ops: list[TraceOp] = []
        for i, op in enumerate(self.p):
            if i in assignment:
                ops.extend(_substitute(op, assignment[i]))
            else:
                ops.append(op)
        return TraceProgram(tuple(ops))

    def consistent(self, candidate: TraceProgram) -> bool:
        self.oracle_calls += 1
        states = enumerate_crash_states(candidate, self.candidate_bounds)
        return all(self.pred.satisfied(img) for img in states.states)

    def check_input(self):
        self.oracle_calls += 1
        states = enumerate_crash_states(self.p, self.bounds)
        for img in states.sorted_states():
            if not self.pred.satisfied(img):
                raise InconsistentInputError(
                    img,
                    "input trace violates the predicate; witness crash state: "
                    + format_image(img),
                )

    def result(self, assignment: dict[int, tuple[OpKind, ...]]) -> MinimizeResult:
        program = self.build(assignment)
        log = []
        for i in self.slots:
            if i in assignment:
                log.append(SlotLog(i, self.p[i].kind, _describe(assignment[i])))
            else:
                log.append(SlotLog(i, self.p[i].kind, "kept"))
        return MinimizeResult(
            program=program,
            total_cost=self.cm.program_constraint_cost(program),
            log=tuple(log),
            oracle_calls=self.oracle_calls,
        )


def minimize(
    p: TraceProgram,
    pred: ConsistencyPredicate,
    cm: CostModel = CostModel(),
    bounds: Bounds = Bounds(),
) -> MinimizeResult:
    """Greedy descent over the downgrade chains, one slot move per round.

    Every accepted move pushes one slot deeper in its chain and never
    increases cost; ties between a keep and an equal-cost downgrade go to
    the downgrade, which is how clflush settles at clwb+sfence under the
    default costs. Terminates within slots x chain-depth rounds; the final
    program is re-checked against the predicate once, independent of the
    search path.
    """
    inst = _Instance(p, pred, cm, bounds)
    inst.check_input()

    position: dict[int, int] = {i: -1 for i in inst.slots}  # -1 = keep original
    assignment: dict[int, tuple[OpKind, ...]] = {}

    def slot_cost(i: int) -> int:
        if position[i] == -1:
            return cm.op_cost(p[i].kind)
        return cm.seq_cost(CHAINS[p[i].kind][position[i]])

    while True:
        # Candidate moves: any deeper chain position at no cost increase,
        # ordered by (cost delta, op index, chain order). The first passing
        # candidate is the cheapest passing transformation of this round.
        candidates = []
        for i in inst.slots:
            chain = CHAINS[p[i].kind]
            for pos in range(position[i] + 1, len(chain)):
                step_cost = cm.seq_cost(chain[pos])
                if step_cost <= slot_cost(i):
                    candidates.append((step_cost - slot_cost(i), i, pos))
        candidates.sort()
        accepted = False
        for _delta, i, pos in candidates:
            trial = dict(assignment)
            trial[i] = CHAINS[p[i].kind][pos]
            if inst.consistent(inst.build(trial)):
                position[i] = pos
                assignment[i] = trial[i]
                accepted = True
                break
        if not accepted:
            break

    final = inst.result(assignment)
    inst.oracle_calls += 1
    states = enumerate_crash_states(final.program, inst.candidate_bounds)
    for img in states.sorted_states():
        if not pred.satisfied(img):
            raise AssertionError(
                f"minimized program violates the predicate: {format_image(img)}"
            )
    return replace(final, oracle_calls=inst.oracle_calls)


def exhaustive_optimum(
    p: TraceProgram,
    pred: ConsistencyPredicate,
    cm: CostModel = CostModel(),
    bounds: Bounds = Bounds(),
) -> MinimizeResult:
    """Reference oracle: try every chain assignment, cheapest first.

    Candidates are ordered by (cost, option vector), so the first consistent
    one is a minimum-cost assignment with the lexicographically smallest
    vector (0 = keep, then chain positions in listed order).
    """
    inst = _Instance(p, pred, cm, bounds)
    if len(inst.slots) > 10:
        raise ValueError(f"{len(inst.slots)} constraint ops; exhaustive search capped at 10")
    inst.check_input()

    per_slot: list[list[tuple[int, int, tuple[OpKind, ...]]]] = []
    for i in inst.slots:
        options = [(cm.op_cost(p[i].kind), 0, None)]  # keep
        for pos, kinds in enumerate(CHAINS[p[i].kind]):
            options.append((cm.seq_cost(kinds), pos + 1, kinds))
        per_slot.append(options)

    candidates = []
    for combo in itertools.product(*per_slot):
        cost = sum(c[0] for c in combo)
        vector = tuple(c[1] for c in combo)
        candidates.append((cost, vector, combo))
    candidates.sort(key=lambda c: (c[0], c[1]))

    for cost, _vector, combo in candidates:
        assignment = {
            i: kinds for i, (_c, _v, kinds) in zip(inst.slots, combo) if kinds is not None
        }
        if inst.consistent(inst.build(assignment)):
            return inst.result(assignment)
    raise AssertionError("input was consistent but no assignment is (keep-all must pass)")
