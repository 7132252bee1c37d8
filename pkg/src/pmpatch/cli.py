"""Command-line frontend.

Subcommands: patch, inspect, census, simulate, verify, minimize.
Exit codes: 0 success, 1 usage/input-parse errors, 2 operational failures,
3 semantic inequality (verify found differing crash-state sets).
Output is deterministic for identical inputs and flags; no environment
variables or config files are consulted.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__
from .census import census as run_census
from .elf import load_elf
from .errors import (
    BoundsExceededError,
    ElfFormatError,
    InconsistentInputError,
    PatchVerificationError,
    PmPatchError,
)
from .mccs import CostModel, exhaustive_optimum, load_predicate_file, minimize
from .model import (
    Bounds,
    RewriteRule,
    RuleName,
    Verdict,
    crash_equivalent,
    enumerate_crash_states,
    format_image,
)
from .patcher import PatchOptions, apply_patches, plan_patches, verify_patch
from .trace import load_trace_file

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2
EXIT_INEQUAL = 3


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the CLI contract wants 1
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_bounds_flags(sub):
    sub.add_argument("--max-ops", type=int, default=16, help="op-count limit (default 16)")
    sub.add_argument("--max-lines", type=int, default=4, help="cache-line limit (default 4)")
    sub.add_argument(
        "--max-states", type=int, default=1_000_000, help="explored-state limit (default 1e6)"
    )


def _bounds(args) -> Bounds:
    return Bounds(max_ops=args.max_ops, max_lines=args.max_lines, max_states=args.max_states)


def _patch_flags(sub):
    sub.add_argument(
        "--patch-clflushopt",
        action="store_true",
        help="also rewrite clflushopt sites (default: clflush only)",
    )
    sub.add_argument(
        "--dedup-window",
        type=int,
        default=1,
        metavar="N",
        help="instructions of lookahead for an existing fence (default 1)",
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="pmpatch", description=__doc__)
    parser.add_argument("--version", action="version", version=f"pmpatch {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("patch", help="rewrite flush instructions in an ELF binary")
    p.add_argument("binary_in")
    p.add_argument("binary_out")
    p.add_argument("--report", help="report path (default: <binary_out>.report.json)")
    _patch_flags(p)
    p.add_argument("--json", action="store_true", help="print the report as JSON")

    p = subs.add_parser("inspect", help="list flush sites and predicted strategies")
    p.add_argument("binary_in")
    _patch_flags(p)
    p.add_argument("--json", action="store_true")

    p = subs.add_parser("census", help="flush/fence census of a trace file")
    p.add_argument("trace_in")
    p.add_argument("--json", action="store_true")

    p = subs.add_parser("simulate", help="enumerate reachable crash states of a trace")
    p.add_argument("trace_in")
    _add_bounds_flags(p)
    p.add_argument("--json", action="store_true")

    p = subs.add_parser("verify", help="compare crash-state sets of two traces")
    p.add_argument("trace_a")
    p.add_argument("trace_b")
    _add_bounds_flags(p)
    p.add_argument("--json", action="store_true")

    p = subs.add_parser("minimize", help="minimize flush/fence constraints under a predicate")
    p.add_argument("trace_in")
    p.add_argument("predicate_in")
    p.add_argument(
        "--cost",
        action="append",
        default=[],
        metavar="KIND=N",
        help="override an op cost (clflush/clflushopt/clwb/sfence/mfence)",
    )
    p.add_argument(
        "--exhaustive",
        action="store_true",
        help="use the exhaustive reference search instead of greedy descent",
    )
    _add_bounds_flags(p)
    p.add_argument("--json", action="store_true")
    return parser


def _emit(args, payload: dict, human: str) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(human, end="")


def _images_json(images) -> list[dict]:
    return [
        {f"{line << 6:#x}": content.hex() for line, content in img} for img in sorted(images)
    ]


def cmd_patch(args) -> int:
    img = load_elf(args.binary_in)
    options = PatchOptions(
        patch_clflushopt=args.patch_clflushopt, dedup_window=args.dedup_window
    )
    plan = plan_patches(img, options)
    patched_bytes, report = apply_patches(img, plan)
    patched = load_elf(patched_bytes)
    verify_patch(img, patched, plan)

    with open(args.binary_out, "wb") as fh:
        fh.write(patched_bytes)
    os.chmod(args.binary_out, os.stat(args.binary_in).st_mode & 0o7777)
    report_path = args.report or args.binary_out + ".report.json"
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    _emit(args, report.to_json_dict(), report.format_table())
    return EXIT_OK


def cmd_inspect(args) -> int:
    img = load_elf(args.binary_in)
    options = PatchOptions(
        patch_clflushopt=args.patch_clflushopt, dedup_window=args.dedup_window
    )
    plan = plan_patches(img, options)
    rows = []
    for site in sorted(plan.sites, key=lambda s: s.vaddr):
        nxt = "fence" if site.fence_matched else "other"
        rows.append(
            {
                "vaddr": f"{site.vaddr:#x}",
                "kind": site.kind,
                "next": nxt,
                "strategy": site.strategy.value,
                **({"reason": site.skip_reason} if site.skip_reason else {}),
            }
        )
    human_rows = [f"{'vaddr':>14}  {'kind':<10}  {'next':<6}  {'strategy':<8}  reason"]
    for r in rows:
        human_rows.append(
            f"{int(r['vaddr'], 16):#14x}  {r['kind']:<10}  {r['next']:<6}  "
            f"{r['strategy']:<8}  {r.get('reason', '-')}"
        )
    _emit(args, {"sites": rows}, "\n".join(human_rows) + "\n")
    return EXIT_OK


def cmd_census(args) -> int:
    report = run_census(load_trace_file(args.trace_in))
    _emit(args, report.to_json_dict(), report.format_table())
    return EXIT_OK


def cmd_simulate(args) -> int:
    states = enumerate_crash_states(load_trace_file(args.trace_in), _bounds(args))
    ordered = states.sorted_states()
    human = f"{len(ordered)} reachable crash states:\n" + "".join(
        f"  {format_image(img)}\n" for img in ordered
    )
    _emit(args, {"count": len(ordered), "states": _images_json(ordered)}, human)
    return EXIT_OK


def cmd_verify(args) -> int:
    result = crash_equivalent(
        load_trace_file(args.trace_a), load_trace_file(args.trace_b), _bounds(args)
    )
    human = [f"verdict: {result.verdict.value}"]
    for img in result.only_p1:
        human.append(f"  only in first:  {format_image(img)}")
    for img in result.only_p2:
        human.append(f"  only in second: {format_image(img)}")
    payload = {
        "verdict": result.verdict.value,
        "only_in_first": _images_json(result.only_p1),
        "only_in_second": _images_json(result.only_p2),
    }
    _emit(args, payload, "\n".join(human) + "\n")
    return EXIT_OK if result.verdict is Verdict.EQUAL else EXIT_INEQUAL


def cmd_minimize(args) -> int:
    overrides = {}
    for item in args.cost:
        if "=" not in item:
            raise PmPatchError(f"--cost expects KIND=N, got {item!r}")
        kind, _, value = item.partition("=")
        if kind not in ("clflush", "clflushopt", "clwb", "sfence", "mfence"):
            raise PmPatchError(f"unknown cost kind {kind!r}")
        try:
            overrides[kind] = int(value)
        except ValueError:
            raise PmPatchError(f"bad cost value {value!r}") from None
    cm = CostModel().with_overrides(overrides)
    search = exhaustive_optimum if args.exhaustive else minimize
    result = search(
        load_trace_file(args.trace_in),
        load_predicate_file(args.predicate_in),
        cm,
        _bounds(args),
    )
    human = [
        f"total constraint cost: {result.total_cost} (oracle calls: {result.oracle_calls})"
    ]
    for entry in result.log:
        human.append(f"  op {entry.index} {entry.original.value}: {entry.outcome}")
    human.append("minimized trace:")
    human.extend("  " + op.format() for op in result.program)
    payload = {
        "total_cost": result.total_cost,
        "oracle_calls": result.oracle_calls,
        "log": [
            {"index": e.index, "op": e.original.value, "outcome": e.outcome}
            for e in result.log
        ],
        "trace": [op.format() for op in result.program],
    }
    _emit(args, payload, "\n".join(human) + "\n")
    return EXIT_OK


_COMMANDS = {
    "patch": cmd_patch,
    "inspect": cmd_inspect,
    "census": cmd_census,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "minimize": cmd_minimize,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ElfFormatError as exc:
        print(f"pmpatch: input parse error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PatchVerificationError as exc:
        print(f"pmpatch: verification failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (BoundsExceededError, InconsistentInputError, PmPatchError) as exc:
        print(f"pmpatch: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as exc:
        print(f"pmpatch: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
