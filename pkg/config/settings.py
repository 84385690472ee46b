"""
Application Settings and Configuration Management
Environment-driven app settings plus the typed reconstruction/training configs
"""

import logging
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Tuple, Union

from src.errors import ConfigError

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: Union[str, int] = "INFO") -> None:
    """Install a single stream handler on the root logger"""
    root = logging.getLogger()
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            raise ConfigError(f"unknown log level: {level}")
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(level)


class AppSettings:
    """Centralized application settings"""

    def __init__(self, create_dirs: bool = True):
        self.load_settings()
        if create_dirs:
            self.create_directories()

    @staticmethod
    def _load_secrets(section: str) -> Dict[str, Any]:
        # Secrets only exist when running under `streamlit run`
        try:
            import streamlit as st
            return dict(st.secrets.get(section, {}))
        except Exception:
            return {}

    def load_settings(self):
        """Load settings from Streamlit secrets and environment"""

        app_settings = self._load_secrets("app_settings")

        def pick(key: str, default: str) -> str:
            return str(app_settings.get(key, os.getenv(f"SCI_{key}", default)))

        self.DEBUG = pick("DEBUG", "false").lower() == "true"
        self.LOG_LEVEL = pick("LOG_LEVEL", "DEBUG" if self.DEBUG else "INFO").upper()
        self.FLOAT_DTYPE = pick("FLOAT_DTYPE", "float64")
        self.STRICT_MATH = pick("STRICT_MATH", "false").lower() == "true"
        self.DEFAULT_SEED = int(pick("DEFAULT_SEED", "0"))

        if self.FLOAT_DTYPE not in ("float64", "float32"):
            raise ConfigError(f"FLOAT_DTYPE must be float64 or float32, got {self.FLOAT_DTYPE}")

        # Directories
        self.BASE_DIR = Path(__file__).parent.parent
        self.DATA_DIR = Path(pick("DATA_DIR", str(self.BASE_DIR / "data")))
        self.CHECKPOINT_DIR = self.DATA_DIR / "checkpoints"
        self.REPORTS_DIR = self.DATA_DIR / "reports"

    def create_directories(self):
        """Create necessary directories"""
        for directory in (self.DATA_DIR, self.CHECKPOINT_DIR, self.REPORTS_DIR):
            directory.mkdir(parents=True, exist_ok=True)

    def apply(self):
        """Push numeric settings into the tensor engine"""
        from src import tensor

        tensor.set_default_dtype(self.FLOAT_DTYPE)
        tensor.set_strict_math(self.STRICT_MATH)

    @property
    def is_production(self) -> bool:
        """Check if running in production mode"""
        return not self.DEBUG


@dataclass
class CtmConfig:
    """Convolution-Transformer Mixture prior, one instance per phase"""

    channels: int = 8
    heads: int = 4
    window_size: int = 4          # P
    window_frames: int = 2        # M
    group_size: int = 4           # S
    group_frames: int = 2         # B (temporal group size, not the position bias)
    blocks_per_phase: int = 2
    activation: str = "leaky_relu"
    leaky_slope: float = 0.01
    um_channels: int = 4
    kernel_size: int = 3
    init_seed: int = 0
    attention_layout: Tuple[str, ...] = ("bda", "dsa")
    use_ff: bool = True
    norm_eps: float = 1e-5

    def validate(self) -> "CtmConfig":
        positive = ("channels", "heads", "window_size", "window_frames", "group_size",
                    "group_frames", "blocks_per_phase", "um_channels", "kernel_size")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"ctm.{name} must be positive, got {getattr(self, name)}")
        if self.channels % self.heads:
            raise ConfigError(f"ctm.channels ({self.channels}) must be divisible by ctm.heads ({self.heads})")
        if self.use_ff and self.channels % 2:
            raise ConfigError(f"feature fusion splits channels in halves; ctm.channels={self.channels} is odd")
        if self.kernel_size % 2 == 0:
            raise ConfigError(f"ctm.kernel_size must be odd, got {self.kernel_size}")
        if self.activation not in ("leaky_relu", "relu"):
            raise ConfigError(f"unknown activation: {self.activation}")
        unknown = [kind for kind in self.attention_layout if kind not in ("bda", "dsa")]
        if unknown:
            raise ConfigError(f"unknown attention kinds in layout: {unknown}")
        return self

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads

    @property
    def negative_slope(self) -> float:
        return self.leaky_slope if self.activation == "leaky_relu" else 0.0


@dataclass
class GapTvConfig:
    """Classical GAP-TV baseline"""

    outer_iters: int = 40
    tv_iters: int = 7
    tv_weight: float = 0.07
    clip_min: float = 0.0
    clip_max: float = 1.0
    accelerate: bool = False
    init: str = "nm"

    def validate(self) -> "GapTvConfig":
        if self.outer_iters < 1 or self.tv_iters < 1:
            raise ConfigError("gaptv.outer_iters and gaptv.tv_iters must be positive")
        if not self.tv_weight > 0:
            raise ConfigError(f"gaptv.tv_weight must be > 0, got {self.tv_weight}")
        if not self.clip_min < self.clip_max:
            raise ConfigError(f"empty clip range [{self.clip_min}, {self.clip_max}]")
        if self.init not in ("nm", "rf", "adjoint"):
            raise ConfigError(f"gaptv.init must be nm, rf or adjoint, got {self.init}")
        return self


@dataclass
class TrainConfig:
    """Staged training schedule; epochs of the full-scale recipe mapped to step counts"""

    steps_a: int = 200
    steps_b: int = 200
    steps_c: int = 300
    lr_a: float = 1e-3
    lr_b1: float = 5e-4
    lr_b2: float = 1e-4
    lr_c: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    phases: int = 3
    with_uncertainty: bool = True
    direct_lu: bool = False
    log_every: int = 50

    def validate(self) -> "TrainConfig":
        for name in ("steps_a", "steps_b", "steps_c"):
            if getattr(self, name) < 0:
                raise ConfigError(f"train.{name} must be >= 0")
        for name in ("lr_a", "lr_b1", "lr_b2", "lr_c"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"train.{name} must be > 0")
        if not 1 <= self.phases <= 4:
            raise ConfigError(f"train.phases must lie in 1..4, got {self.phases}")
        if self.log_every < 1:
            raise ConfigError("train.log_every must be positive")
        return self


SECTIONS = {"ctm": CtmConfig, "gaptv": GapTvConfig, "train": TrainConfig}


def _coerce(raw: str, current: Any, key: str) -> Any:
    try:
        if isinstance(current, bool):
            lowered = raw.strip().lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return lowered in ("true", "1", "yes")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            return tuple(part.strip() for part in raw.split(",") if part.strip())
        return raw.strip()
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {raw!r}") from e


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(value)
    return repr(value) if isinstance(value, float) else str(value)


def parse_key_values(text: str) -> Dict[str, str]:
    """Parse flat key=value text; '#' starts a comment"""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def load_key_values(path: Union[str, Path]) -> Dict[str, str]:
    try:
        return parse_key_values(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e


def build_configs(
    values: Mapping[str, str],
    extra_keys: Iterable[str] = (),
) -> Tuple[CtmConfig, GapTvConfig, TrainConfig, Dict[str, str]]:
    """
    Build the typed configs from a flat mapping

    Args:
        values: section.field -> raw string
        extra_keys: additional keys accepted verbatim (returned in the extras dict)

    Returns:
        (ctm, gaptv, train, extras)
    """
    configs = {name: cls() for name, cls in SECTIONS.items()}
    allowed_extra = set(extra_keys)
    extras = {}
    for key, raw in values.items():
        if key in allowed_extra:
            extras[key] = raw
            continue
        section, _, name = key.partition(".")
        config = configs.get(section)
        if config is None or name not in {f.name for f in fields(config)}:
            raise ConfigError(f"unknown config key: {key}")
        setattr(config, name, _coerce(raw, getattr(config, name), key))
    return (configs["ctm"].validate(), configs["gaptv"].validate(),
            configs["train"].validate(), extras)


def dump_key_values(
    ctm: Optional[CtmConfig] = None,
    gaptv: Optional[GapTvConfig] = None,
    train: Optional[TrainConfig] = None,
    extras: Optional[Mapping[str, Any]] = None,
) -> str:
    lines = []
    for section, config in (("ctm", ctm), ("gaptv", gaptv), ("train", train)):
        if config is None:
            continue
        for name, value in asdict(config).items():
            lines.append(f"{section}.{name}={_format(value)}")
    for key, value in (extras or {}).items():
        lines.append(f"{key}={_format(value)}")
    return "\n".join(lines) + "\n"
