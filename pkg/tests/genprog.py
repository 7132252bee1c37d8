"""Shared test helpers: random trace generation and a reference enumerator.

The reference enumerator is a plain BFS over the public successors()
transition relation with explicit MachineState objects. It shares nothing
with the packed enumeration kernels, so it serves as the independent oracle
for them.
"""

import random

from pmpatch.model import Image, initial_state, successors
from pmpatch.trace import OpKind, TraceOp, TraceProgram

LINES = (0x1000, 0x1040, 0x1080)

ALL_KINDS = tuple(OpKind)


def random_program(
    rng: random.Random,
    max_ops: int = 8,
    lines=LINES,
    values=(1, 2, 3),
    kinds=ALL_KINDS,
    min_ops: int = 0,
) -> TraceProgram:
    n = rng.randint(min_ops, max_ops)
    ops = []
    for _ in range(n):
        kind = rng.choice(kinds)
        addr = rng.choice(lines)
        if kind is OpKind.STORE:
            ops.append(TraceOp(kind, addr, 8, rng.choice(values)))
        elif kind is OpKind.LOAD:
            ops.append(TraceOp(kind, addr, 8))
        elif kind in (OpKind.CLFLUSH, OpKind.CLFLUSHOPT, OpKind.CLWB):
            ops.append(TraceOp(kind, addr))
        else:
            ops.append(TraceOp(kind))
    return TraceProgram(tuple(ops))


def reference_crash_states(p: TraceProgram) -> set[Image]:
    """Brute-force BFS over the explicit transition system."""
    init = initial_state(p)
    seen = {init.canonical_key()}
    frontier = [init]
    images = {init.crash_image()}
    while frontier:
        state = frontier.pop()
        for _label, nxt in successors(state, p):
            key = nxt.canonical_key()
            if key not in seen:
                seen.add(key)
                images.add(nxt.crash_image())
                frontier.append(nxt)
    return images
