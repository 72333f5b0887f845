"""Exception hierarchy shared by every stage of the toolkit."""


class CascadeError(Exception):
    """Base class; the CLI maps any subclass to a nonzero exit code."""


class MalformedWav(CascadeError):
    pass


class UnsupportedFormat(CascadeError):
    pass


class SignalTooShort(CascadeError):
    pass


class ConfigInvalid(CascadeError):
    pass


class DimensionMismatch(CascadeError):
    pass


class InsufficientData(CascadeError):
    """Raised when a model cannot be trained from the frames it was given.

    ``key`` names the registry cell (a gender, a (gender, emotion) pair,
    a (speaker, emotion) pair, ...) so callers can report it verbatim.
    """

    def __init__(self, key, detail=""):
        self.key = key
        msg = f"insufficient training data for {key!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class ConvergenceError(CascadeError):
    pass


class ManifestInvalid(CascadeError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("manifest failed validation:\n  " + "\n  ".join(self.violations))


class MissingModel(CascadeError):
    def __init__(self, key):
        self.key = key
        super().__init__(f"registry has no model for key {key!r}")


class UnknownClaimant(CascadeError):
    def __init__(self, speaker_id):
        self.speaker_id = speaker_id
        super().__init__(f"unknown claimant {speaker_id!r}")


class IntegrityError(CascadeError):
    def __init__(self, path, detail):
        self.path = path
        super().__init__(f"{path}: {detail}")


class DegenerateTrialSet(CascadeError):
    pass


class SpecInvalid(CascadeError):
    pass


class DegenerateDataWarning(UserWarning):
    """Training data collapsed onto the variance floor."""
