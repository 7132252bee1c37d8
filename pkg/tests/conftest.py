import shutil
import subprocess
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"


def _run(cmd, **kw):
    proc = subprocess.run(cmd, capture_output=True, text=True, **kw)
    if proc.returncode != 0:
        raise RuntimeError(f"{' '.join(map(str, cmd))} failed:\n{proc.stderr}")
    return proc


def _have(tool: str) -> bool:
    return shutil.which(tool) is not None


@pytest.fixture(scope="session")
def corpus(tmp_path_factory) -> dict[str, Path]:
    """Build the binary corpus once per session.

    pairs      hand-assembled static executable (all site shapes + zoo)
    pairs_stripped  the same binary with all symbols removed
    checksum   self-testing C program (prints a checksum), PIE
    intrinsics C program using clflush/clflushopt/clwb intrinsics, PIE
    branchy    flush-free C program, PIE
    flushlib   shared object with flush functions
    """
    for tool in ("gcc", "as", "ld", "objcopy", "objdump"):
        if not _have(tool):
            raise RuntimeError(f"corpus build requires {tool} on PATH")
    out = tmp_path_factory.mktemp("corpus")
    binaries: dict[str, Path] = {}

    obj = out / "pairs.o"
    _run(["as", "-o", obj, FIXTURES / "pairs.s"])
    binaries["pairs"] = out / "pairs"
    _run(["ld", "-o", binaries["pairs"], obj])

    binaries["pairs_stripped"] = out / "pairs_stripped"
    _run(["objcopy", "--strip-all", binaries["pairs"], binaries["pairs_stripped"]])

    binaries["checksum"] = out / "checksum"
    _run(["gcc", "-O1", "-o", binaries["checksum"], FIXTURES / "checksum.c"])

    binaries["intrinsics"] = out / "intrinsics"
    _run(
        [
            "gcc",
            "-O2",
            "-mclflushopt",
            "-mclwb",
            "-o",
            binaries["intrinsics"],
            FIXTURES / "intrinsics.c",
        ]
    )

    binaries["branchy"] = out / "branchy"
    _run(["gcc", "-O2", "-o", binaries["branchy"], FIXTURES / "branchy.c"])

    binaries["flushlib"] = out / "libflush.so"
    _run(["gcc", "-O2", "-shared", "-fPIC", "-o", binaries["flushlib"], FIXTURES / "flushlib.c"])

    return binaries


@pytest.fixture(scope="session")
def clwb_capable() -> bool:
    """Whether this host can execute clwb (needed to run patched binaries)."""
    try:
        flags = Path("/proc/cpuinfo").read_text()
    except OSError:
        return False
    return " clwb" in flags or "\tclwb" in flags or "clwb " in flags
