"""Exception hierarchy shared by every module.

The CLI maps the three top-level families onto exit codes: InputError -> 2,
ConfigError -> 3, everything else derived from AdmetError -> 4.
"""


class AdmetError(Exception):
    pass


class InputError(AdmetError):
    """Bad user-supplied data (SMILES, CSV rows, sizes)."""


class ConfigError(AdmetError):
    pass


class RuntimeFailure(AdmetError):
    pass


# --- SMILES parsing -------------------------------------------------------

class SmilesError(InputError):
    pass


class UnclosedRing(SmilesError):
    pass


class UnbalancedParen(SmilesError):
    pass


class UnknownAtomSymbol(SmilesError):
    pass


class ValenceViolation(SmilesError):
    pass


class MultiComponentUnsupported(SmilesError):
    pass


class InvalidRingBond(SmilesError):
    pass


class UnexpectedCharacter(SmilesError):
    pass


# --- numerics -------------------------------------------------------------

class ShapeMismatch(RuntimeFailure):
    pass


class NonContiguousSegments(RuntimeFailure):
    pass


class NonScalarRoot(RuntimeFailure):
    pass


class NonFiniteValue(RuntimeFailure):
    pass


class SchemaMismatch(InputError):
    pass


# --- models ---------------------------------------------------------------

class DegenerateValidation(RuntimeFailure):
    pass


class EmptyInput(InputError):
    pass


# --- datasets / evaluation -----------------------------------------------

class MissingColumn(InputError):
    pass


class EmptyDataset(InputError):
    pass


class DuplicateRecord(InputError):
    pass


class EmptyPartition(RuntimeFailure):
    def __init__(self, partition: str, detail: str = ""):
        self.partition = partition
        msg = f"partition '{partition}' is empty"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class DegenerateSeries(RuntimeFailure):
    pass


class InsufficientN(InputError):
    pass


class TestSetReuse(RuntimeFailure):
    __test__ = False  # keep pytest from collecting this as a test class


# --- interpretation -------------------------------------------------------

class SizeOutOfRange(InputError):
    pass


class ExactModeLimitExceeded(InputError):
    pass
