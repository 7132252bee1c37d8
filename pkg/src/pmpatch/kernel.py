"""Kernel dispatch: compiled extension when usable, pure Python otherwise."""

from . import _enumpy

try:
    from . import _enumcore
except ImportError:  # extension not built; pure-Python twin covers everything
    _enumcore = None

COMPILED_AVAILABLE = _enumcore is not None

# The compiled kernel packs a whole machine state into a uint64.
_COMPILED_BIT_LIMIT = 63


def select_kernel(total_bits: int, force: str | None = None):
    """Pick an enumerate_packed implementation.

    force: None (auto), "py", or "compiled" (benchmarks and parity tests).
    """
    if force == "py":
        return _enumpy.enumerate_packed
    if force == "compiled":
        if _enumcore is None:
            raise RuntimeError("compiled kernel requested but pmpatch._enumcore is not built")
        if total_bits > _COMPILED_BIT_LIMIT:
            raise RuntimeError(
                f"compiled kernel requested but state needs {total_bits} bits (> {_COMPILED_BIT_LIMIT})"
            )
        return _enumcore.enumerate_packed
    if force is not None:
        raise ValueError(f"unknown kernel {force!r}")
    if _enumcore is not None and total_bits <= _COMPILED_BIT_LIMIT:
        return _enumcore.enumerate_packed
    return _enumpy.enumerate_packed
