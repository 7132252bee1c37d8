# distutils: language = c++
# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled crash-state enumeration kernel.

Mirror of _enumpy.enumerate_packed for states that pack into 64 bits; the
dispatcher in kernel.py falls back to the Python twin for anything wider.
Kind codes must stay in sync with _enumpy.
"""

from libcpp.unordered_set cimport unordered_set
from libcpp.vector cimport vector
from libcpp.algorithm cimport sort
from libc.stdint cimport uint64_t

from pmpatch.errors import BoundsExceededError

DEF K_LOAD = 1
DEF K_CLFLUSH = 2
DEF K_CLWB = 4


def enumerate_packed(
    op_kind,
    op_line,
    op_slot,
    slot_line,
    vol_flat,
    ver_off,
    ver_mask,
    int pc_bits,
    int n_slots,
    int per_shift,
    long max_states,
):
    cdef vector[int] kind_v = op_kind
    cdef vector[int] line_v = op_line
    cdef vector[int] slot_v = op_slot
    cdef vector[int] slot_line_v = slot_line
    cdef vector[uint64_t] vol_v = vol_flat
    cdef vector[int] off_v = ver_off
    cdef vector[uint64_t] mask_v = ver_mask

    cdef int n_ops = kind_v.size()
    cdef int n_lines = off_v.size()
    cdef uint64_t pc_mask = (<uint64_t> 1 << pc_bits) - 1
    cdef uint64_t pend_all = (<uint64_t> 1 << n_slots) - 1

    cdef vector[uint64_t] clear_v
    cdef int l
    for l in range(n_lines):
        clear_v.push_back(~(mask_v[l] << off_v[l]))

    cdef unordered_set[uint64_t] seen
    cdef unordered_set[uint64_t] crash
    cdef vector[uint64_t] stack
    cdef vector[uint64_t] succ
    seen.insert(0)
    crash.insert(0)
    stack.push_back(0)

    cdef uint64_t s, t, v
    cdef int pc, k, b, vol_base
    cdef uint64_t pending

    while stack.size() > 0:
        s = stack.back()
        stack.pop_back()
        pc = <int> (s & pc_mask)
        pending = (s >> pc_bits) & pend_all
        vol_base = pc * n_lines
        succ.clear()

        if pc < n_ops:
            k = kind_v[pc]
            if k <= K_LOAD:
                succ.push_back(s + 1)
            elif k == K_CLFLUSH:
                if pending == 0:
                    l = line_v[pc]
                    t = (s & clear_v[l]) | (vol_v[vol_base + l] << off_v[l])
                    succ.push_back(t + 1)
            elif k <= K_CLWB:
                succ.push_back((s | (<uint64_t> 1 << (pc_bits + slot_v[pc]))) + 1)
            else:
                if pending == 0:
                    succ.push_back(s + 1)

        if pending:
            for b in range(n_slots):
                if pending & (<uint64_t> 1 << b):
                    l = slot_line_v[b]
                    t = s & ~(<uint64_t> 1 << (pc_bits + b))
                    t = (t & clear_v[l]) | (vol_v[vol_base + l] << off_v[l])
                    succ.push_back(t)

        for l in range(n_lines):
            v = vol_v[vol_base + l]
            if (s >> off_v[l]) & mask_v[l] != v:
                succ.push_back((s & clear_v[l]) | (v << off_v[l]))

        for b in range(<int> succ.size()):
            t = succ[b]
            if seen.count(t) == 0:
                seen.insert(t)
                if <long> seen.size() > max_states:
                    raise BoundsExceededError(
                        f"state limit exceeded ({max_states} states explored)"
                    )
                stack.push_back(t)
                crash.insert(t >> per_shift)

    cdef vector[uint64_t] out
    out.assign(crash.begin(), crash.end())
    sort(out.begin(), out.end())
    return [out[b] for b in range(<int> out.size())]
