"""Exception types shared across the package."""


class PmPatchError(Exception):
    """Base class for all tool-specific errors."""


class TraceParseError(PmPatchError):
    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class BoundsExceededError(PmPatchError):
    """A simulation resource limit was hit.

    This is a hard error on purpose: a truncated crash-state set would make
    every downstream equality verdict meaningless.
    """


class ElfFormatError(PmPatchError):
    pass


class PatchVerificationError(PmPatchError):
    def __init__(self, message: str, vaddr: int | None = None):
        self.vaddr = vaddr
        if vaddr is not None:
            message = f"site {vaddr:#x}: {message}"
        super().__init__(message)


class PredicateParseError(PmPatchError):
    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class InconsistentInputError(PmPatchError):
    """The input trace already violates the consistency predicate.

    Minimization assumes a correct starting point; carries one violating
    crash image as evidence.
    """

    def __init__(self, witness, message: str):
        self.witness = witness
        super().__init__(message)
