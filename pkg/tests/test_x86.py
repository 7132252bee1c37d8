import pytest

from objdump_oracle import compare_binary
from pmpatch.elf import load_elf
from pmpatch.x86 import (
    CANONICAL_ENCODINGS,
    DecodedRun,
    InsnClass,
    all_instructions,
    branch_targets,
    decode_one,
    encode_clwb_like,
    find_flush_sites,
    linear_sweep,
)


def _d(hexstr: str, offset: int = 0):
    return decode_one(bytes.fromhex(hexstr), offset)


# -- recognizers -------------------------------------------------------------


def test_clflush_memory_via_register():
    insn = _d("0fae3f")
    assert insn.klass is InsnClass.CLFLUSH
    assert insn.length == 3
    assert insn.operand_bytes == b"\x3f"
    assert not insn.rip_relative


def test_clwb_has_operand_size_prefix():
    insn = _d("660fae37")
    assert insn.klass is InsnClass.CLWB and insn.length == 4


def test_clflushopt_is_66_prefixed_clflush_encoding():
    insn = _d("660fae3f")
    assert insn.klass is InsnClass.CLFLUSHOPT and insn.length == 4


def test_fences():
    assert _d("0faef8").klass is InsnClass.SFENCE
    assert _d("0faef0").klass is InsnClass.MFENCE
    assert _d("0faee8").klass is InsnClass.LFENCE
    for h in ("0faef8", "0faef0", "0faee8"):
        assert _d(h).length == 3
    # any modrm value in the range selects the same fence
    assert _d("0faefb").klass is InsnClass.SFENCE


def test_xsaveopt_is_not_clwb():
    # 0F AE /6 without 66 is xsaveopt
    assert _d("0fae37").klass is InsnClass.OTHER


def test_rex_prefixed_flush():
    insn = _d("410fae38")  # clflush (%r8)
    assert insn.klass is InsnClass.CLFLUSH and insn.length == 4 and insn.rex == 0x41


def test_rip_relative_flush_carries_disp():
    insn = _d("0fae3d44332211")  # clflush 0x11223344(%rip)
    assert insn.klass is InsnClass.CLFLUSH
    assert insn.rip_relative and insn.disp_size == 4
    assert insn.disp_value == 0x11223344
    assert insn.length == 7


def test_round_trip_canonical_encodings():
    for klass, pattern in CANONICAL_ENCODINGS.items():
        insn = decode_one(pattern, 0)
        assert insn.klass is klass
        assert insn.length == len(pattern)


# -- branches ----------------------------------------------------------------


def test_direct_branches_resolve_targets():
    insn = _d("e900010000")  # jmp +0x100
    assert insn.klass is InsnClass.DIRECT_BRANCH and insn.branch_target == 0x105
    insn = _d("ebfe")  # jmp . (self)
    assert insn.branch_target == 0
    insn = _d("74fc")  # je back
    assert insn.branch_target == -2
    insn = _d("e8fbffffff")  # call rel32 = -5
    assert insn.branch_target == 0


def test_two_byte_jcc():
    insn = _d("0f84c3000000")
    assert insn.klass is InsnClass.DIRECT_BRANCH and insn.length == 6
    assert insn.branch_target == 6 + 0xC3


def test_indirect_jump_is_not_direct_branch():
    assert _d("ffe0").klass is InsnClass.OTHER  # jmp *%rax


# -- lengths for common shapes ----------------------------------------------


@pytest.mark.parametrize(
    "hexstr,length",
    [
        ("90", 1),  # nop
        ("c3", 1),  # ret
        ("55", 1),  # push %rbp
        ("4889e5", 3),  # mov %rsp,%rbp
        ("48b8f0debc9a78563412", 10),  # movabs imm64
        ("488d0500000000", 7),  # lea rip
        ("488b442408", 5),  # mov 0x8(%rsp),%rax
        ("f30f1efa", 4),  # endbr64
        ("660f1f440000", 6),  # nopw padding
        ("0f1f8000000000", 7),  # nopl padding
        ("c5f877", 3),  # vzeroupper (VEX2)
        ("c4e27d18c0", 5),  # vbroadcastss (VEX3)
        ("62f1f54858c0", 6),  # vaddpd zmm (EVEX)
        ("f048830001", 5),  # lock addq $1,(%rax)
        ("a4", 1),  # movsb
        ("48a1efcdab8967452301", 10),  # movabs moffs64
        ("6a10", 2),  # push imm8
        ("c8100000", 4),  # enter 16,0
        ("f7c078563412", 6),  # test imm32
        ("f6c07f", 3),  # test imm8
        ("f7d8", 2),  # neg (group3, no imm)
    ],
)
def test_length_table(hexstr, length):
    assert _d(hexstr).length == length


def test_zero_padding_is_undecodable():
    insn = _d("0000")
    assert insn.klass is InsnClass.UNDECODABLE and insn.length == 1


def test_offset_out_of_range_is_an_error():
    with pytest.raises(ValueError, match="out of range"):
        decode_one(b"\x90", 5)


def test_truncated_instruction_is_undecodable():
    assert _d("48b8f0de").klass is InsnClass.UNDECODABLE  # movabs cut short


# -- linear sweep -------------------------------------------------------------


def test_sweep_tiles_from_anchor():
    region = bytes.fromhex("4889e50fae3f0faef8c3")  # mov; clflush; sfence; ret
    [run] = linear_sweep(region, [0])
    offsets = [(i.offset, i.length) for i in run.instructions]
    assert offsets == [(0, 3), (3, 3), (6, 3), (9, 1)]
    for a, b in zip(run.instructions, run.instructions[1:]):
        assert b.offset == a.offset + a.length


def test_sweep_stops_at_zero_padding():
    region = bytes.fromhex("90900000000090")
    [run] = linear_sweep(region, [0])
    klasses = [i.klass for i in run.instructions]
    assert klasses[:2] == [InsnClass.OTHER, InsnClass.OTHER]
    assert klasses[2] is InsnClass.UNDECODABLE
    assert len(run.instructions) == 3  # sweep stopped at the marker


def test_runs_never_cross_anchors():
    # 7-byte lea at 0 would swallow offset 4; anchor at 4 splits the run
    region = bytes.fromhex("488d0500000000c3")
    runs = linear_sweep(region, [0, 4])
    assert runs[0].instructions == ()  # lea would cross the anchor: dropped
    assert [i.offset for i in runs[1].instructions] == [4]


def test_two_anchor_runs_are_independent():
    region = bytes.fromhex("0fae3fc30faef8c3")
    runs = linear_sweep(region, [0, 4])
    assert [i.klass for i in runs[0].instructions] == [InsnClass.CLFLUSH, InsnClass.OTHER]
    assert [i.klass for i in runs[1].instructions] == [InsnClass.SFENCE, InsnClass.OTHER]


# -- flush sites and branch targets -------------------------------------------


def _sweep(hexstr: str) -> list[DecodedRun]:
    return linear_sweep(bytes.fromhex(hexstr), [0])


def test_site_pairs_with_successor():
    runs = _sweep("0fae3f0faef8c3")  # clflush; sfence; ret
    [site] = find_flush_sites(runs)
    assert site.instr.klass is InsnClass.CLFLUSH
    assert site.next.klass is InsnClass.SFENCE


def test_clwb_is_not_a_site():
    runs = _sweep("660fae370faef8")  # clwb; sfence
    assert find_flush_sites(runs) == []


def test_clflushopt_site_requires_flag():
    runs = _sweep("660fae3f0faef8")
    assert find_flush_sites(runs) == []
    [site] = find_flush_sites(runs, include_clflushopt=True)
    assert site.instr.klass is InsnClass.CLFLUSHOPT


def test_site_at_end_of_region_has_no_successor():
    runs = _sweep("900fae3f")  # nop; clflush at region end
    [site] = find_flush_sites(runs)
    assert site.next is None


def test_branch_target_collection():
    runs = _sweep("e93b000000e8f6ffffff74fe")  # jmp, call, je (rel8 -2)
    assert branch_targets(runs) == {0x40, 0x0, 0xA}


def test_branch_targets_empty_without_branches():
    assert branch_targets(_sweep("90c3")) == set()


# -- clwb synthesis ------------------------------------------------------------


def test_encode_clwb_from_clflush_variants():
    assert encode_clwb_like(_d("0fae3f")) == bytes.fromhex("660fae37")
    assert encode_clwb_like(_d("410fae38")) == bytes.fromhex("66410fae30")
    assert encode_clwb_like(_d("660fae3f")) == bytes.fromhex("660fae37")
    # memory operand with SIB and disp32 survives untouched
    insn = _d("0faebc2444332211")  # clflush 0x11223344(%rsp)
    rebuilt = encode_clwb_like(insn)
    assert rebuilt == bytes.fromhex("660faeb42444332211")
    re_decoded = decode_one(rebuilt, 0)
    assert re_decoded.klass is InsnClass.CLWB and re_decoded.length == len(rebuilt)


# -- objdump agreement on the corpus ------------------------------------------


def test_objdump_agreement_per_binary(corpus):
    for name, path in corpus.items():
        img = load_elf(path)
        agreement = compare_binary(img, path)
        assert agreement.ok, f"{name}: {agreement.mismatches[:10]}"
        assert agreement.compared > 0


def test_corpus_contains_all_recognizer_classes(corpus):
    seen = set()
    for path in corpus.values():
        img = load_elf(path)
        for region in img.exec_regions:
            runs = linear_sweep(img.region_bytes(region), img.func_anchors(region))
            seen |= {i.klass for i in all_instructions(runs)}
    assert {
        InsnClass.CLFLUSH,
        InsnClass.CLFLUSHOPT,
        InsnClass.CLWB,
        InsnClass.SFENCE,
        InsnClass.MFENCE,
        InsnClass.DIRECT_BRANCH,
        InsnClass.OTHER,
    } <= seen
