"""pmpatch: crash-consistency-preserving flush rewriting for PM programs.

Subpackages cover a trace-level persistency model with exhaustive crash-state
enumeration, a flush census, an x86-64 length decoder, an ELF detour patcher,
and constraint minimization. See README.md for the CLI.
"""

__version__ = "0.1.0"

from .model import (
    Bounds,
    CrashStateSet,
    EquivalenceResult,
    RewriteRule,
    RuleName,
    Verdict,
    crash_equivalent,
    enumerate_crash_states,
    rewrite_trace,
    successors,
)
from .trace import OpKind, TraceOp, TraceProgram, parse_trace

__all__ = [
    "Bounds",
    "CrashStateSet",
    "EquivalenceResult",
    "OpKind",
    "RewriteRule",
    "RuleName",
    "TraceOp",
    "TraceProgram",
    "Verdict",
    "crash_equivalent",
    "enumerate_crash_states",
    "parse_trace",
    "rewrite_trace",
    "successors",
    "__version__",
]
