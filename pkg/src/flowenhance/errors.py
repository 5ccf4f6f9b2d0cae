"""Exception hierarchy shared across the package."""


class FlowEnhanceError(Exception):
    """Base class for all package errors."""


class WavFormatError(FlowEnhanceError):
    """Malformed RIFF/WAVE data."""


class UnsupportedEncodingError(WavFormatError):
    """Valid WAV file with a sample encoding we do not read."""


class ShapeError(FlowEnhanceError, ValueError):
    pass


class DegenerateInputError(FlowEnhanceError, ValueError):
    """Input that makes an operation undefined (zero energy, silence, ...)."""


class SampleRateError(FlowEnhanceError, ValueError):
    pass


class DesignError(FlowEnhanceError, ValueError):
    """Filterbank or model configuration that cannot be realized."""


class SingularWeightError(FlowEnhanceError, ArithmeticError):
    pass


class NumericError(FlowEnhanceError, ArithmeticError):
    pass


class CheckpointError(FlowEnhanceError):
    pass


class MatchError(FlowEnhanceError):
    """Noise-floor matching target cannot be reached inside the gain bounds."""
