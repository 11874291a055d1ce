# insilico-labeling/shared/errors.py
# Exception hierarchy shared by every module, plus the CLI exit-code mapping.

from pydantic import ValidationError


class IslError(Exception):
    """Base class for all toolkit errors."""
    exit_code = 3


class ConfigurationError(IslError):
    """Invalid configuration or an impossible request (e.g. indivisible batch size)."""
    exit_code = 1


class LabelValidationError(IslError):
    """Label availability or modality code that cannot be trained on."""
    exit_code = 1


class ShapeError(IslError):
    """Tensor shape outside a network or loss contract."""


class ImageFormatError(IslError):
    """Image file that is not a single-channel unsigned 16-bit raster."""
    exit_code = 2


class ManifestError(IslError):
    exit_code = 2


class SampleLoadError(IslError):
    exit_code = 2


class RoutingError(IslError):
    """Routing table that is not total, or a model id that cannot be resolved."""
    exit_code = 2


class CheckpointError(IslError):
    exit_code = 2


class MetricError(IslError):
    exit_code = 2


class UndefinedMetricError(MetricError):
    """Metric undefined for the given inputs (zero variance, zero norm)."""


class InferenceError(IslError):
    pass


# --- CLI Exit Codes ---
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


def exit_code_for(exc: BaseException) -> int:
    """Maps an exception raised inside a command to the documented exit code."""
    if isinstance(exc, IslError):
        return exc.exit_code
    if isinstance(exc, ValidationError):
        return EXIT_USAGE
    if isinstance(exc, OSError):
        return EXIT_DATA
    return EXIT_INTERNAL
