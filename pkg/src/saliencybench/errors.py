"""Exception hierarchy shared across the toolkit.

Every error carries a stable ``code`` string so CLI output and the bridge
protocol can report failures uniformly.
"""

from __future__ import annotations


class SaliencyBenchError(Exception):
    """Base class for all toolkit errors."""

    code = "ERROR"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)


class ShapeMismatchError(SaliencyBenchError):
    code = "SHAPE_MISMATCH"


class CapabilityMissingError(SaliencyBenchError):
    code = "CAPABILITY_MISSING"


class ClassOutOfRangeError(SaliencyBenchError):
    code = "CLASS_OUT_OF_RANGE"


class UnknownLayerError(SaliencyBenchError):
    code = "UNKNOWN_LAYER"


class DivergedError(SaliencyBenchError):
    code = "DIVERGED"


class UnknownClassError(SaliencyBenchError):
    code = "UNKNOWN_CLASS"


class ConfigError(SaliencyBenchError):
    code = "CONFIG_INVALID"


class EmptyMaskError(SaliencyBenchError):
    code = "EMPTY_MASK"


class EmptySalientAreaError(SaliencyBenchError):
    code = "EMPTY_SALIENT_AREA"


class NoCorrectPredictionsError(SaliencyBenchError):
    code = "NO_CORRECT_PREDICTIONS"


class UnpairedSampleError(SaliencyBenchError):
    code = "UNPAIRED_SAMPLE"


class MissingMasksError(SaliencyBenchError):
    code = "MISSING_MASKS"


class EmptyReportError(SaliencyBenchError):
    code = "EMPTY_REPORT"


class IOFormatError(SaliencyBenchError):
    code = "IO_FORMAT"


class BridgeProtocolError(SaliencyBenchError):
    code = "PROTOCOL"


class BridgeTimeoutError(SaliencyBenchError):
    code = "BRIDGE_TIMEOUT"


class BridgeCrashError(SaliencyBenchError):
    code = "BRIDGE_CRASH"
