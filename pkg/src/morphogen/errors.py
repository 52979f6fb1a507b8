"""All morphogen error types in one place, so callers can catch the base class."""


class MorphogenError(Exception):
    """Base class for every error raised by this package."""


# -- dataset ingestion -------------------------------------------------------

class BadMagic(MorphogenError):
    """IDX header magic does not match the expected file kind."""


class TruncatedPayload(MorphogenError):
    """IDX payload length disagrees with the header counts."""


class LabelOutOfRange(MorphogenError):
    """A label byte is outside the digit domain 0-9."""


class CountMismatch(MorphogenError):
    """Image and label counts disagree."""


class DegenerateSplit(MorphogenError):
    """A requested split would leave one side empty."""


# -- network ------------------------------------------------------------------

class InvalidArch(MorphogenError):
    """Architecture config violates its invariants."""


class ShapeMismatch(MorphogenError):
    """Array shapes are not compatible with the operation."""


class NonFiniteLoss(MorphogenError):
    """A loss evaluated to NaN or infinity."""


class InvalidEpsilon(MorphogenError):
    """Finite-difference step must be a positive real."""


class BadCheckpoint(MorphogenError):
    """Checkpoint container is malformed."""


class VersionMismatch(BadCheckpoint):
    """Checkpoint was written by an unknown format version."""


class ChecksumFailure(BadCheckpoint):
    """Checkpoint bytes fail their integrity checksum."""


# -- trainer ------------------------------------------------------------------

class InvalidConfig(MorphogenError):
    """A config value violates its invariants."""


class DivergedLoss(MorphogenError):
    """Training hit a non-finite minibatch loss.

    Carries the last finite parameters so a caller can salvage the run.
    """

    def __init__(self, message, last_params=None):
        super().__init__(message)
        self.last_params = last_params


class EmptyDataset(MorphogenError):
    """Operation needs at least one sample."""


# -- generator ----------------------------------------------------------------

class NonFiniteImage(MorphogenError):
    """An iterate left the finite image domain.

    Carries the partial trajectory computed so far.
    """

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


# -- taxonomy -----------------------------------------------------------------

class KTooLarge(MorphogenError):
    """More clusters requested than there are rows."""


class MissingKnownRows(MorphogenError):
    """Novelty scoring needs labeled digit rows as a reference."""


class PerplexityInfeasible(MorphogenError):
    """Perplexity target cannot be met for the given row count."""


# -- perturb ------------------------------------------------------------------

class DimensionMismatch(MorphogenError):
    """Vectors fed to a genetic operator differ in length."""


# -- rendering ----------------------------------------------------------------

class EmptyInput(MorphogenError):
    """Rendering needs at least one image."""
