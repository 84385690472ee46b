"""
Error Types
Exception hierarchy shared by the library, the CLI and the dashboard
"""

from typing import Optional


class SciError(Exception):
    """Base class for every error raised by the reconstruction stack"""


class DimensionError(SciError, ValueError):
    """Shapes or extents do not agree"""


class DomainError(SciError, ValueError):
    """A value lies outside the domain of an operation (zero divisor, NaN, dead pixel)"""


class ContractError(SciError, RuntimeError):
    """A caller broke an operation's contract (non-scalar loss, wrong phase output shape)"""


class ConfigError(SciError, ValueError):
    """Invalid configuration value or key"""


class GenerationError(SciError, RuntimeError):
    """Mask generation could not satisfy its invariants"""


class DivergenceError(SciError, RuntimeError):
    """Training loss became non-finite"""

    def __init__(self, stage: str, step: int, loss: float):
        self.stage = stage
        self.step = step
        self.loss = loss
        super().__init__(f"loss became non-finite ({loss}) in stage {stage} at step {step}")


class SctParseError(SciError, ValueError):
    """Malformed SCT container"""

    def __init__(self, message: str, offset: int, record: Optional[str] = None):
        self.offset = offset
        self.record = record
        where = f" in record {record!r}" if record is not None else ""
        super().__init__(f"{message}{where} at byte offset {offset}")
