"""Exception types shared across the toolkit.

Every error raised by lavoce derives from :class:`LavoceError` so callers
can catch the whole family at once (the CLI maps them to exit code 2).
"""


class LavoceError(Exception):
    """Base class for all lavoce errors."""


# --- signal contracts ---------------------------------------------------

class EmptySignal(LavoceError):
    """Operation requires a non-empty signal."""


class NonFiniteSample(LavoceError):
    """Waveform contains NaN or Inf samples."""


class SilentSignal(LavoceError):
    """Operation requires nonzero signal power or peak."""


class ShapeMismatch(LavoceError):
    """Array shapes are inconsistent with the operation's contract."""


class LengthMismatch(LavoceError):
    """Waveform lengths do not satisfy the operation's contract."""


class MinFrames(LavoceError):
    """Spectrogram has too few frames for inversion."""


class RateMismatch(LavoceError):
    """Waveform sample rates differ where equality is required."""


class TooShort(LavoceError):
    """Signal is too short for the metric's analysis window."""


# --- corruption ----------------------------------------------------------

class UnknownCondition(LavoceError):
    """Noise condition id outside {1, 2, 3}."""


# --- file formats ---------------------------------------------------------

class BadHeader(LavoceError):
    """File header is malformed or truncated."""


class BadMagic(LavoceError):
    """File does not start with the expected magic bytes."""


class WrongSpatialSize(LavoceError):
    """Video frames are not the expected 96x96 size."""


class ShapeManifestMismatch(LavoceError):
    """Weight bundle does not match the model's shape manifest."""


# --- neural ----------------------------------------------------------------

class NonFiniteActivation(LavoceError):
    """A forward pass produced NaN or Inf activations."""


class NonFiniteLoss(LavoceError):
    """A loss evaluation produced NaN or Inf."""


# --- external tools ---------------------------------------------------------

class ExternalUnavailable(LavoceError):
    """External metric executable is not available."""


class ParseFailure(LavoceError):
    """External metric output could not be parsed."""
