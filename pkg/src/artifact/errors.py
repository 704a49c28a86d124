"""Exception hierarchy shared by every module."""


class ArtifactError(Exception):
    """Base class; the CLI maps these to exit code 1."""


class ParseError(ArtifactError):
    def __init__(self, msg, line=None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


class DuplicateLabel(ParseError):
    pass


class AdministrativeInSource(ParseError):
    pass


class ExtensionDisabled(ArtifactError):
    pass


class CrossFunctionJump(ArtifactError):
    pass


class PrivateAccessInAttacker(ArtifactError):
    pass


class PrivateInitInAttacker(ArtifactError):
    pass


class InvalidComponentMemory(ArtifactError):
    pass


class MissingImport(ArtifactError):
    pass


class NameClash(ArtifactError):
    pass


class LabelClash(ArtifactError):
    pass


class UnknownLabel(ArtifactError):
    pass


class NoMain(ArtifactError):
    pass


class ArithmeticOnLabel(ArtifactError):
    pass


class StuckState(ArtifactError):
    pass


class OutOfRangeAddress(StuckState):
    pass


class FuelExhausted(ArtifactError):
    pass


class IncompatibleSources(ArtifactError):
    pass


class MalformedBrackets(ArtifactError):
    pass


class ReservedRegisterUsed(ArtifactError):
    pass


class NotApplicable(ArtifactError):
    """Raised when a check's precondition rules it out (CLI exit 3)."""
