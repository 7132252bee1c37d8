"""Pure-Python crash-state enumeration kernel.

Same packed-state algorithm as the compiled twin in _enumcore.pyx, but using
arbitrary-precision Python ints, so it has no bit-width ceiling. Kept
dependency-free and loop-tight: this is the hot path when the extension is
unavailable.

State packing, low bits first:

    [ pc | pending obligation bits | per-line persisted version ids ]

The volatile image is a pure function of pc (only stores change it, and
stores execute in program order), so it is precomputed per pc and never part
of the packed state. A line is dirty iff its persisted version id differs
from the volatile version id at the current pc; version ids are interned per
line by content, so id equality is content equality.

Kind codes (mirrored in _enumcore.pyx):
    0 store, 1 load, 2 clflush, 3 clflushopt, 4 clwb, 5 sfence, 6 mfence
"""

from .errors import BoundsExceededError

K_STORE = 0
K_LOAD = 1
K_CLFLUSH = 2
K_CLFLUSHOPT = 3
K_CLWB = 4
K_SFENCE = 5
K_MFENCE = 6


def enumerate_packed(
    op_kind: list[int],
    op_line: list[int],
    op_slot: list[int],
    slot_line: list[int],
    vol_flat: list[int],
    ver_off: list[int],
    ver_mask: list[int],
    pc_bits: int,
    n_slots: int,
    per_shift: int,
    max_states: int,
) -> list[int]:
    """Explore the transition system; return sorted packed persisted keys.

    Each returned key is `state >> per_shift`: the per-line persisted version
    ids of one reachable state. A crash may happen at any reachable state, so
    every visited state contributes its key.
    """
    n_ops = len(op_kind)
    n_lines = len(ver_off)
    pc_mask = (1 << pc_bits) - 1
    pend_all = (1 << n_slots) - 1
    clear = [~(ver_mask[l] << ver_off[l]) for l in range(n_lines)]

    seen = {0}
    stack = [0]
    crash = {0}
    while stack:
        s = stack.pop()
        pc = s & pc_mask
        pending = (s >> pc_bits) & pend_all
        vol_base = pc * n_lines
        succ = []

        if pc < n_ops:
            k = op_kind[pc]
            if k <= K_LOAD:
                succ.append(s + 1)
            elif k == K_CLFLUSH:
                # Ordered after every earlier flush; persists on execute.
                if pending == 0:
                    l = op_line[pc]
                    t = (s & clear[l]) | (vol_flat[vol_base + l] << ver_off[l])
                    succ.append(t + 1)
            elif k <= K_CLWB:
                succ.append((s | (1 << (pc_bits + op_slot[pc]))) + 1)
            else:
                # Fences drain: executable only once no obligation is pending.
                if pending == 0:
                    succ.append(s + 1)

        if pending:
            for b in range(n_slots):
                if pending & (1 << b):
                    l = slot_line[b]
                    t = s & ~(1 << (pc_bits + b))
                    t = (t & clear[l]) | (vol_flat[vol_base + l] << ver_off[l])
                    succ.append(t)

        for l in range(n_lines):
            v = vol_flat[vol_base + l]
            if (s >> ver_off[l]) & ver_mask[l] != v:
                succ.append((s & clear[l]) | (v << ver_off[l]))

        for t in succ:
            if t not in seen:
                seen.add(t)
                if len(seen) > max_states:
                    raise BoundsExceededError(
                        f"state limit exceeded ({max_states} states explored)"
                    )
                stack.append(t)
                crash.add(t >> per_shift)
    return sorted(crash)
