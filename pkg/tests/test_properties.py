"""Model invariants over randomized programs."""

import random

import pytest
from hypothesis import given, settings, strategies as st

from genprog import LINES, random_program
from pmpatch.model import (
    Bounds,
    RewriteRule,
    RuleName,
    Verdict,
    crash_equivalent,
    enumerate_crash_states,
    final_image,
    rewrite_trace,
)
from pmpatch.trace import (
    CONSTRAINT_KINDS,
    OpKind,
    TraceOp,
    TraceProgram,
    clflushopt,
    sfence,
)

RULE = RewriteRule(RuleName.CLFLUSH_TO_CLWB_SFENCE)


def _op(kind: OpKind, addr: int, value: int) -> TraceOp:
    if kind is OpKind.STORE:
        return TraceOp(kind, addr, 8, value)
    if kind is OpKind.LOAD:
        return TraceOp(kind, addr, 8)
    if kind in (OpKind.CLFLUSH, OpKind.CLFLUSHOPT, OpKind.CLWB):
        return TraceOp(kind, addr)
    return TraceOp(kind)


ops_strategy = st.lists(
    st.builds(
        _op,
        st.sampled_from(tuple(OpKind)),
        st.sampled_from(LINES),
        st.sampled_from((1, 2, 3)),
    ),
    max_size=8,
)


@given(ops_strategy)
@settings(max_examples=200, deadline=None)
def test_initial_image_always_reachable(ops):
    p = TraceProgram(tuple(ops))
    assert () in enumerate_crash_states(p).states


@given(ops_strategy)
@settings(max_examples=200, deadline=None)
def test_final_image_always_reachable(ops):
    p = TraceProgram(tuple(ops))
    assert final_image(p) in enumerate_crash_states(p).states


@given(ops_strategy)
@settings(max_examples=150, deadline=None)
def test_rewrite_preserves_crash_states(ops):
    p = TraceProgram(tuple(ops))
    assert crash_equivalent(p, rewrite_trace(p, RULE)).verdict is Verdict.EQUAL


@given(ops_strategy)
@settings(max_examples=100, deadline=None)
def test_mfence_sfence_interchangeable_for_crash_states(ops):
    p = TraceProgram(tuple(ops))
    rewritten = rewrite_trace(p, RewriteRule(RuleName.MFENCE_TO_SFENCE))
    assert crash_equivalent(p, rewritten).verdict is Verdict.EQUAL


def test_deleting_a_constraint_never_shrinks_the_state_set():
    rng = random.Random(101)
    checked = 0
    for _ in range(300):
        p = random_program(rng)
        base = enumerate_crash_states(p).states
        for i, op in enumerate(p):
            if op.kind not in CONSTRAINT_KINDS:
                continue
            pruned = TraceProgram(p.ops[:i] + p.ops[i + 1 :])
            assert base <= enumerate_crash_states(pruned).states
            checked += 1
    assert checked > 100


def test_clflushopt_sfence_is_as_strong_as_clflush():
    rng = random.Random(55)
    for _ in range(300):
        p = random_program(rng)
        replaced = []
        for op in p:
            if op.kind is OpKind.CLFLUSH:
                replaced += [clflushopt(op.addr), sfence()]
            else:
                replaced.append(op)
        p2 = TraceProgram(tuple(replaced))
        assert crash_equivalent(p, p2).verdict is Verdict.EQUAL


def test_rewrite_of_clflushopt_traces_is_subset_when_fence_added():
    # Strengthening direction: clflushopt -> clwb+sfence constrains states.
    from pmpatch.model import rewrite_flush_ops

    rng = random.Random(77)
    for _ in range(200):
        p = random_program(rng)
        rewritten = TraceProgram(
            rewrite_flush_ops(p.ops, frozenset({OpKind.CLFLUSH, OpKind.CLFLUSHOPT}), 1)
        )
        verdict = crash_equivalent(p, rewritten).verdict
        assert verdict in (Verdict.EQUAL, Verdict.P2_SUBSET)


def test_larger_dedup_window_is_unsound_in_general():
    # A store between the flush and the fence makes window=2 deduplication
    # observable; this is why the default window stays at 1.
    p = TraceProgram(
        (
            TraceOp(OpKind.STORE, 0x1000, 8, 1),
            TraceOp(OpKind.CLFLUSH, 0x1000),
            TraceOp(OpKind.STORE, 0x1040, 8, 1),
            TraceOp(OpKind.SFENCE),
        )
    )
    w2 = rewrite_trace(p, RewriteRule(RuleName.CLFLUSH_TO_CLWB_SFENCE, window=2))
    assert crash_equivalent(p, w2).verdict is not Verdict.EQUAL


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_enumeration_is_deterministic(seed):
    rng = random.Random(seed)
    p = random_program(rng, max_ops=8)
    runs = [enumerate_crash_states(p, Bounds()).sorted_states() for _ in range(3)]
    assert runs[0] == runs[1] == runs[2]
