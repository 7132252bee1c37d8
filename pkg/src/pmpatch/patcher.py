"""Plan and apply flush-rewriting patches to ELF binaries, and verify them.

The patch turns each clflush (optionally clflushopt) into clwb, appending an
sfence unless a fence already follows within the lookahead window. clwb is
one byte longer than clflush, so the rewrite never fits in place for clflush;
those sites get a detour: the smallest whole-instruction span of >= 5 bytes
starting at the flush is overwritten with a jmp to a trampoline that holds
the replacement bytes plus the relocated displaced instructions and a jump
back. clflushopt -> clwb with an adjacent fence is a one-bit ModRM change and
is patched in place.

Sites that cannot be patched safely are skipped with a machine-readable
reason and left untouched; an unpatched flush is still crash-consistent.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

from . import __version__
from .elf import PHDR_FMT, PHDR_SIZE, PT_LOAD, PT_PHDR, ElfImage, ExecRegion, ProgramHeader
from .errors import PatchVerificationError
from .trace import FENCE_KINDS, OpKind, TraceOp, clwb, line_base, sfence, mfence
from .x86 import (
    FENCE_CLASSES,
    FLUSH_CLASSES,
    DecodedInstruction,
    DecodedRun,
    FlushSite,
    InsnClass,
    SFENCE_BYTES,
    branch_targets,
    decode_one,
    encode_clwb_like,
    encode_jmp_rel32,
    find_flush_sites,
    fits_rel32,
    linear_sweep,
)

PAGE = 0x1000
JMP_LEN = 5
TRAP_BYTE = 0xCC  # int3: leftover span bytes must never execute silently


class Strategy(enum.Enum):
    INPLACE = "inplace"
    DETOUR = "detour"
    SKIP = "skip"


SKIP_SPAN_TOO_SHORT = "span-too-short"
SKIP_BRANCH_TARGET_INSIDE = "branch-target-inside"
SKIP_RELOCATION_UNSUPPORTED = "relocation-unsupported"
SKIP_UNDECODABLE_CONTEXT = "undecodable-context"
SKIP_REL32_OUT_OF_RANGE = "rel32-out-of-range"


@dataclass(frozen=True)
class PatchOptions:
    patch_clflushopt: bool = False
    dedup_window: int = 1


@dataclass
class PlannedSite:
    vaddr: int
    region_index: int
    kind: str  # "clflush" | "clflushopt"
    instr: DecodedInstruction
    strategy: Strategy
    skip_reason: str | None = None
    fence_matched: bool = False
    goal: bytes = b""
    group: int | None = None


@dataclass
class DetourGroup:
    region_index: int
    run_anchor: int
    span_offset: int  # region-relative
    span_len: int
    leader_vaddr: int
    span_instrs: list[DecodedInstruction]
    member_offsets: set[int]  # offsets of flush instrs rewritten inside the span
    demoted: str | None = None
    tramp_vaddr: int = 0
    tramp_bytes: bytes = b""
    back_vaddr: int = 0


@dataclass
class PatchPlan:
    image: ElfImage
    options: PatchOptions
    sites: list[PlannedSite]
    groups: list[DetourGroup]
    runs_per_region: list[list[DecodedRun]]
    segment_vaddr: int | None = None
    segment_size: int = 0
    tramp_area_size: int = 0
    phdr_rel_offset: int = 0

    def active_groups(self) -> list[DetourGroup]:
        return [g for g in self.groups if g.demoted is None]


@dataclass
class SiteOutcome:
    vaddr: int
    kind: str
    strategy: str
    reason: str | None = None


@dataclass
class PatchReport:
    sites: list[SiteOutcome]
    patched: int
    skipped: int
    segment_vaddr: int | None
    segment_size: int
    version: str = __version__

    def to_json_dict(self) -> dict:
        return {
            "sites": [
                {
                    "vaddr": f"{s.vaddr:#x}",
                    "kind": s.kind,
                    "strategy": s.strategy,
                    **({"reason": s.reason} if s.reason else {}),
                }
                for s in self.sites
            ],
            "patched": self.patched,
            "skipped": self.skipped,
            "segment": (
                {"vaddr": f"{self.segment_vaddr:#x}", "size": self.segment_size}
                if self.segment_vaddr is not None
                else None
            ),
            "version": self.version,
        }

    def format_table(self) -> str:
        rows = [f"{'vaddr':>14}  {'kind':<10}  {'strategy':<8}  reason"]
        for s in self.sites:
            rows.append(f"{s.vaddr:#14x}  {s.kind:<10}  {s.strategy:<8}  {s.reason or '-'}")
        rows.append(f"patched={self.patched} skipped={self.skipped}")
        if self.segment_vaddr is not None:
            rows.append(f"segment: vaddr={self.segment_vaddr:#x} size={self.segment_size}")
        return "\n".join(rows) + "\n"


def _align_up(value: int, alignment: int) -> int:
    return (value + alignment - 1) & ~(alignment - 1)


def _fence_matched(run: DecodedRun, index: int, window: int) -> bool:
    lookahead = run.instructions[index + 1 : index + 1 + window]
    return any(i.klass in FENCE_CLASSES for i in lookahead)


def _goal_bytes(instr: DecodedInstruction, matched: bool) -> bytes:
    goal = encode_clwb_like(instr)
    if not matched:
        goal += SFENCE_BYTES
    return goal


def plan_patches(img: ElfImage, options: PatchOptions = PatchOptions()) -> PatchPlan:
    """Decide per flush site: in-place rewrite, detour, or skip (with reason)."""
    plan = PatchPlan(image=img, options=options, sites=[], groups=[], runs_per_region=[])
    for region_index, region in enumerate(img.exec_regions):
        data = img.region_bytes(region)
        runs = linear_sweep(data, img.func_anchors(region))
        plan.runs_per_region.append(runs)
        targets = branch_targets(runs)
        sites = find_flush_sites(runs, include_clflushopt=options.patch_clflushopt)
        run_by_anchor = {run.anchor: run for run in runs}
        planned_offsets: set[int] = set()

        for site in sites:
            if site.instr.offset in planned_offsets:
                continue  # already rewritten inside an earlier span
            run = run_by_anchor[site.run_anchor]
            _plan_site(plan, region_index, region, run, site, targets, planned_offsets, options)

    _layout_segment(plan)
    return plan


def _plan_site(
    plan: PatchPlan,
    region_index: int,
    region: ExecRegion,
    run: DecodedRun,
    site: FlushSite,
    targets: set[int],
    planned_offsets: set[int],
    options: PatchOptions,
) -> None:
    instr = site.instr
    vaddr = region.vaddr + instr.offset
    kind = instr.klass.value
    matched = _fence_matched(run, site.index, options.dedup_window)
    goal = _goal_bytes(instr, matched)

    def skip(reason: str):
        plan.sites.append(
            PlannedSite(
                vaddr=vaddr,
                region_index=region_index,
                kind=kind,
                instr=instr,
                strategy=Strategy.SKIP,
                skip_reason=reason,
                fence_matched=matched,
            )
        )
        planned_offsets.add(instr.offset)

    if len(goal) == instr.length:
        plan.sites.append(
            PlannedSite(
                vaddr=vaddr,
                region_index=region_index,
                kind=kind,
                instr=instr,
                strategy=Strategy.INPLACE,
                fence_matched=matched,
                goal=goal,
            )
        )
        planned_offsets.add(instr.offset)
        return

    # Grow a whole-instruction span from the site until it can hold jmp rel32.
    span: list[DecodedInstruction] = []
    span_len = 0
    j = site.index
    while span_len < JMP_LEN:
        if j >= len(run.instructions):
            skip(SKIP_SPAN_TOO_SHORT)
            return
        nxt = run.instructions[j]
        if nxt.klass is InsnClass.UNDECODABLE:
            skip(SKIP_UNDECODABLE_CONTEXT)
            return
        span.append(nxt)
        span_len += nxt.length
        j += 1

    span_start = instr.offset
    span_end = span_start + span_len
    if any(span_start < t < span_end for t in targets):
        skip(SKIP_BRANCH_TARGET_INSIDE)
        return
    if any(i.klass is InsnClass.DIRECT_BRANCH for i in span):
        skip(SKIP_RELOCATION_UNSUPPORTED)
        return

    group = DetourGroup(
        region_index=region_index,
        run_anchor=site.run_anchor,
        span_offset=span_start,
        span_len=span_len,
        leader_vaddr=vaddr,
        span_instrs=span,
        member_offsets=set(),
        back_vaddr=region.vaddr + span_end,
    )
    group_id = len(plan.groups)
    plan.groups.append(group)

    # Every flush instruction displaced into the trampoline is rewritten
    # there; the fence-match decision uses the original instruction stream.
    wanted = {InsnClass.CLFLUSH}
    if options.patch_clflushopt:
        wanted.add(InsnClass.CLFLUSHOPT)
    for k, member in enumerate(span):
        if member.klass not in wanted:
            continue
        m_matched = _fence_matched(run, site.index + k, options.dedup_window)
        plan.sites.append(
            PlannedSite(
                vaddr=region.vaddr + member.offset,
                region_index=region_index,
                kind=member.klass.value,
                instr=member,
                strategy=Strategy.DETOUR,
                fence_matched=m_matched,
                goal=_goal_bytes(member, m_matched),
                group=group_id,
            )
        )
        group.member_offsets.add(member.offset)
        planned_offsets.add(member.offset)


def _build_trampoline(plan: PatchPlan, group: DetourGroup) -> bytes | None:
    """Emit goal/relocated bytes plus the jump back; None when a displaced
    rip-relative displacement cannot be re-encoded from the trampoline."""
    img = plan.image
    region = img.exec_regions[group.region_index]
    goal_by_offset = {
        s.instr.offset: s.goal
        for s in plan.sites
        if s.group is not None and plan.groups[s.group] is group
    }
    out = bytearray()
    for insn in group.span_instrs:
        orig_vaddr = region.vaddr + insn.offset
        if insn.offset in group.member_offsets:
            emitted = bytearray(goal_by_offset[insn.offset])
            if insn.rip_relative:
                # The clwb comes first in its goal slot; the 0x66 prefix a
                # clflush gains shifts the displacement field by one byte.
                clwb_len = len(encode_clwb_like(insn))
                disp_off = insn.disp_offset + (clwb_len - insn.length)
                target = orig_vaddr + insn.length + insn.disp_value
                new_disp = target - (group.tramp_vaddr + len(out) + clwb_len)
                if not fits_rel32(new_disp):
                    return None
                emitted[disp_off : disp_off + 4] = new_disp.to_bytes(4, "little", signed=True)
            out += emitted
        elif insn.rip_relative:
            emitted = bytearray(insn.raw)
            target = orig_vaddr + insn.length + insn.disp_value
            new_disp = target - (group.tramp_vaddr + len(out) + insn.length)
            if not fits_rel32(new_disp):
                return None
            emitted[insn.disp_offset : insn.disp_offset + 4] = new_disp.to_bytes(
                4, "little", signed=True
            )
            out += emitted
        else:
            out += insn.raw
    back_disp = group.back_vaddr - (group.tramp_vaddr + len(out) + JMP_LEN)
    if not fits_rel32(back_disp):
        return None
    out += encode_jmp_rel32(back_disp)
    return bytes(out)


def _demote(plan: PatchPlan, group: DetourGroup, reason: str) -> None:
    group.demoted = reason
    for s in plan.sites:
        if s.group is not None and plan.groups[s.group] is group:
            s.strategy = Strategy.SKIP
            s.skip_reason = reason
            s.goal = b""
            s.group = None


def _layout_segment(plan: PatchPlan) -> None:
    img = plan.image
    loadables = img.loadable()
    base = max((ph.vaddr + ph.memsz for ph in loadables), default=0)
    seg_vaddr = _align_up(base, PAGE)

    while True:
        active = plan.active_groups()
        if not active:
            plan.segment_vaddr = None
            plan.segment_size = 0
            return
        cursor = seg_vaddr
        for group in active:
            group.tramp_vaddr = cursor
            built = _build_trampoline(plan, group)
            if built is None:
                _demote(plan, group, SKIP_RELOCATION_UNSUPPORTED)
                break
            group.tramp_bytes = built
            cursor = _align_up(cursor + len(built), 16)
        else:
            for group in active:
                if not fits_rel32(group.tramp_vaddr - (group.leader_vaddr + JMP_LEN)):
                    _demote(plan, group, SKIP_REL32_OUT_OF_RANGE)
                    break
            else:
                plan.segment_vaddr = seg_vaddr
                plan.tramp_area_size = cursor - seg_vaddr
                plan.phdr_rel_offset = _align_up(plan.tramp_area_size, 8)
                plan.segment_size = plan.phdr_rel_offset + (img.e_phnum + 1) * PHDR_SIZE
                return
        # demotion happened: shrink the layout and retry


def _report(plan: PatchPlan) -> PatchReport:
    outcomes = [
        SiteOutcome(
            vaddr=s.vaddr,
            kind=s.kind,
            strategy=s.strategy.value,
            reason=s.skip_reason,
        )
        for s in sorted(plan.sites, key=lambda s: s.vaddr)
    ]
    patched = sum(1 for s in plan.sites if s.strategy is not Strategy.SKIP)
    return PatchReport(
        sites=outcomes,
        patched=patched,
        skipped=len(plan.sites) - patched,
        segment_vaddr=plan.segment_vaddr,
        segment_size=plan.segment_size,
    )


def apply_patches(img: ElfImage, plan: PatchPlan) -> tuple[bytes, PatchReport]:
    """Produce the patched byte image and the accounting report.

    Bytes outside patch spans, the injected segment, and the two ELF header
    fields that locate the relocated program-header table stay bit-identical.
    """
    buf = bytearray(img.raw)

    for site in plan.sites:
        if site.strategy is Strategy.INPLACE:
            region = img.exec_regions[site.region_index]
            off = region.offset + site.instr.offset
            buf[off : off + len(site.goal)] = site.goal

    for group in plan.active_groups():
        region = img.exec_regions[group.region_index]
        off = region.offset + group.span_offset
        jmp = encode_jmp_rel32(group.tramp_vaddr - (group.leader_vaddr + JMP_LEN))
        buf[off : off + JMP_LEN] = jmp
        for k in range(JMP_LEN, group.span_len):
            buf[off + k] = TRAP_BYTE

    if plan.segment_vaddr is not None:
        seg = bytearray(plan.segment_size)
        for group in plan.active_groups():
            rel = group.tramp_vaddr - plan.segment_vaddr
            seg[rel : rel + len(group.tramp_bytes)] = group.tramp_bytes

        file_off = _align_up(len(buf), PAGE)
        phdr_off = file_off + plan.phdr_rel_offset
        phdr_vaddr = plan.segment_vaddr + plan.phdr_rel_offset
        new_count = img.e_phnum + 1
        new_phdrs = []
        for ph in img.phdrs:
            if ph.type == PT_PHDR:
                ph = ProgramHeader(
                    type=PT_PHDR,
                    flags=ph.flags,
                    offset=phdr_off,
                    vaddr=phdr_vaddr,
                    paddr=phdr_vaddr,
                    filesz=new_count * PHDR_SIZE,
                    memsz=new_count * PHDR_SIZE,
                    align=ph.align,
                )
            new_phdrs.append(ph)
        new_phdrs.append(
            ProgramHeader(
                type=PT_LOAD,
                flags=0x5,  # R+X
                offset=file_off,
                vaddr=plan.segment_vaddr,
                paddr=plan.segment_vaddr,
                filesz=plan.segment_size,
                memsz=plan.segment_size,
                align=PAGE,
            )
        )
        seg[plan.phdr_rel_offset :] = b"".join(ph.pack() for ph in new_phdrs)

        buf += bytes(file_off - len(buf))
        buf += seg
        struct.pack_into("<Q", buf, 0x20, phdr_off)  # e_phoff
        struct.pack_into("<H", buf, 0x38, new_count)  # e_phnum

    return bytes(buf), _report(plan)


# --------------------------------------------------------------------------
# Verification by re-disassembly and projection to trace ops.
# --------------------------------------------------------------------------


@dataclass
class VerifyReport:
    sites_checked: int
    detours_checked: int
    inplace_checked: int
    skipped: int
    untouched_bytes_identical: bool


class _SymbolTable:
    """Interns memory-operand identities as synthetic cache-line addresses."""

    def __init__(self):
        self._table: dict[tuple, int] = {}

    def line_addr(self, key: tuple) -> int:
        if key not in self._table:
            self._table[key] = len(self._table) * 64
        return self._table[key]


def _operand_key(insn: DecodedInstruction, vaddr: int) -> tuple:
    if insn.rip_relative:
        return ("rip", vaddr + insn.length + insn.disp_value)
    sib = insn.raw[insn.modrm_offset + 1] if (insn.modrm & 7) == 4 and insn.modrm < 0xC0 else None
    return ("mem", insn.modrm & 0xC7, sib, insn.disp_value, insn.rex & 0x3)


def _project(insn: DecodedInstruction, vaddr: int, symbols: _SymbolTable) -> TraceOp | None:
    if insn.klass in FLUSH_CLASSES:
        addr = symbols.line_addr(_operand_key(insn, vaddr))
        return TraceOp(OpKind(insn.klass.value), addr)
    if insn.klass is InsnClass.SFENCE:
        return sfence()
    if insn.klass is InsnClass.MFENCE:
        return mfence()
    return None


def _apply_flush_rule(ops: list[TraceOp], windows: dict[int, int]) -> list[TraceOp]:
    """The trace-level rewrite with a per-flush lookahead window.

    With a uniform window this is exactly model.rewrite_flush_ops; per-site
    windows let the op-level check mirror decisions the planner made at the
    instruction level (dropped non-PM instructions shrink distances).
    """
    out: list[TraceOp] = []
    for i, op in enumerate(ops):
        if i in windows:
            w = windows[i]
            fence = any(o.kind in FENCE_KINDS for o in ops[i + 1 : i + 1 + w])
            out.append(clwb(op.addr))
            if not fence:
                out.append(sfence())
        else:
            out.append(op)
    return out


def _fail(vaddr: int, message: str):
    raise PatchVerificationError(message, vaddr=vaddr)


def _decode_trampoline(
    patched: ElfImage, group: DetourGroup
) -> list[tuple[DecodedInstruction, int]]:
    """Decode trampoline instructions (with their vaddrs), up to the back jump."""
    off = patched.vaddr_to_offset(group.tramp_vaddr)
    out = []
    cursor = off
    limit = off + len(group.tramp_bytes)
    while cursor < limit:
        insn = decode_one(patched.raw, cursor)
        if insn.klass is InsnClass.UNDECODABLE:
            _fail(group.leader_vaddr, f"undecodable trampoline byte at +{cursor - off}")
        vaddr = group.tramp_vaddr + (cursor - off)
        if insn.klass is InsnClass.DIRECT_BRANCH:
            # branch_target is relative to the decode buffer; rebase to vaddr
            target_vaddr = group.tramp_vaddr + (insn.branch_target - off)
            if target_vaddr != group.back_vaddr:
                _fail(
                    group.leader_vaddr,
                    f"trampoline jump returns to {target_vaddr:#x}, expected {group.back_vaddr:#x}",
                )
            return out
        out.append((insn, vaddr))
        cursor += insn.length
    _fail(group.leader_vaddr, "trampoline has no jump back")


def _context_tail(
    plan: PatchPlan, group: DetourGroup, members: list[PlannedSite]
) -> list[DecodedInstruction]:
    """Original instructions after the span that a member's fence match
    depends on: through the furthest matched fence inside the window."""
    runs = plan.runs_per_region[group.region_index]
    run = next(r for r in runs if r.anchor == group.run_anchor)
    instrs = run.instructions
    index_of = {i.offset: k for k, i in enumerate(instrs)}
    span_end_index = index_of[group.span_instrs[-1].offset] + 1
    tail_end = span_end_index
    for m in members:
        if not m.fence_matched:
            continue
        mi = index_of[m.instr.offset]
        for j in range(mi + 1, min(mi + 1 + plan.options.dedup_window, len(instrs))):
            if instrs[j].klass in FENCE_CLASSES:
                tail_end = max(tail_end, j + 1)
                break
    return list(instrs[span_end_index:tail_end])


def _verify_group(plan: PatchPlan, patched: ElfImage, group: DetourGroup) -> None:
    img = plan.image
    region = img.exec_regions[group.region_index]
    leader = group.leader_vaddr
    members = [
        s for s in plan.sites if s.group is not None and plan.groups[s.group] is group
    ]

    # Span now holds jmp rel32 + trap padding.
    off = region.offset + group.span_offset
    jmp = patched.raw[off : off + JMP_LEN]
    expect = encode_jmp_rel32(group.tramp_vaddr - (leader + JMP_LEN))
    if jmp != expect:
        _fail(leader, f"patched span starts {jmp.hex()}, expected {expect.hex()}")
    for k in range(JMP_LEN, group.span_len):
        if patched.raw[off + k] != TRAP_BYTE:
            _fail(leader, f"span padding byte at +{k} is not a trap")

    tramp = _decode_trampoline(patched, group)

    symbols = _SymbolTable()
    tail = _context_tail(plan, group, members)

    original_ops: list[TraceOp] = []
    windows: dict[int, int] = {}
    member_by_offset = {m.instr.offset: m for m in members}
    for insn in group.span_instrs + tail:
        op = _project(insn, region.vaddr + insn.offset, symbols)
        member = member_by_offset.get(insn.offset)
        if member is not None:
            original_ops.append(op)
            if member.fence_matched:
                # window reaches the matched fence in op coordinates
                windows[len(original_ops) - 1] = None  # patched below
            else:
                windows[len(original_ops) - 1] = 0
        elif op is not None:
            original_ops.append(op)
    # Resolve op-level windows for matched members: distance to next fence op.
    for pos, w in list(windows.items()):
        if w is None:
            for j in range(pos + 1, len(original_ops)):
                if original_ops[j].kind in FENCE_KINDS:
                    windows[pos] = j - pos
                    break
            else:
                _fail(leader, "fence-matched site has no fence in projected context")

    expected_ops = _apply_flush_rule(original_ops, windows)

    patched_ops = [op for insn, vaddr in tramp if (op := _project(insn, vaddr, symbols))]
    for insn in tail:
        op = _project(insn, region.vaddr + insn.offset, symbols)
        if op is not None:
            patched_ops.append(op)

    if patched_ops != expected_ops:
        _fail(
            leader,
            "semantic projection mismatch: expected "
            f"[{', '.join(o.format() for o in expected_ops)}], patched gives "
            f"[{', '.join(o.format() for o in patched_ops)}]",
        )


def _verify_inplace(plan: PatchPlan, patched: ElfImage, site: PlannedSite) -> None:
    region = plan.image.exec_regions[site.region_index]
    insn = decode_one(
        patched.raw[region.offset : region.offset + region.size], site.instr.offset
    )
    if insn.klass is not InsnClass.CLWB:
        _fail(site.vaddr, f"in-place site decodes as {insn.klass.value}, expected clwb")
    if insn.length != site.instr.length:
        _fail(site.vaddr, "in-place replacement changed instruction length")
    if insn.raw != site.goal:
        _fail(site.vaddr, "in-place bytes differ from goal")


def verify_patch(original: ElfImage, patched: ElfImage, plan: PatchPlan) -> VerifyReport:
    """Re-disassemble patched sites and trampolines and check them against
    the trace-level rewrite; check non-interference and report accounting."""
    detours = inplace = skipped = 0
    seen_groups: set[int] = set()
    for site in plan.sites:
        if site.strategy is Strategy.SKIP:
            region = plan.image.exec_regions[site.region_index]
            a = region.offset + site.instr.offset
            b = a + site.instr.length
            if patched.raw[a:b] != original.raw[a:b]:
                _fail(site.vaddr, "skipped site was modified")
            skipped += 1
        elif site.strategy is Strategy.INPLACE:
            _verify_inplace(plan, patched, site)
            inplace += 1
        else:
            detours += 1
            if site.group not in seen_groups:
                seen_groups.add(site.group)
                _verify_group(plan, patched, plan.groups[site.group])

    # Non-interference: everything outside patch spans, the injected tail,
    # and the two header fields must be bit-identical.
    modified: list[tuple[int, int]] = []
    for site in plan.sites:
        if site.strategy is Strategy.INPLACE:
            region = plan.image.exec_regions[site.region_index]
            a = region.offset + site.instr.offset
            modified.append((a, a + len(site.goal)))
    for group in plan.active_groups():
        region = plan.image.exec_regions[group.region_index]
        a = region.offset + group.span_offset
        modified.append((a, a + group.span_len))
    if plan.segment_vaddr is not None:
        modified.append((0x20, 0x28))  # e_phoff
        modified.append((0x38, 0x3A))  # e_phnum
    modified.sort()
    identical = True
    cursor = 0
    orig = original.raw
    for a, b in modified + [(len(orig), len(orig))]:
        if patched.raw[cursor:a] != orig[cursor:a]:
            identical = False
            break
        cursor = max(cursor, b)
    if not identical:
        raise PatchVerificationError("bytes outside patch sites differ from the input")

    expected_total = len(plan.sites)
    if detours + inplace + skipped != expected_total:
        raise PatchVerificationError(
            f"site accounting mismatch: {detours}+{inplace}+{skipped} != {expected_total}"
        )
    return VerifyReport(
        sites_checked=expected_total,
        detours_checked=detours,
        inplace_checked=inplace,
        skipped=skipped,
        untouched_bytes_identical=True,
    )
