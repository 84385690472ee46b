import logging

import numpy as np
import pytest

from config.settings import (
    AppSettings,
    CtmConfig,
    GapTvConfig,
    TrainConfig,
    build_configs,
    configure_logging,
    dump_key_values,
    load_key_values,
    parse_key_values,
)
from src.errors import ConfigError
from src.tensor import get_default_dtype


@pytest.fixture
def restore_root_logger():
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield root
    root.handlers[:] = handlers
    root.setLevel(level)


def test_defaults_validate():
    assert CtmConfig().validate().head_dim == 2
    assert GapTvConfig().validate().init == "nm"
    assert TrainConfig().validate().phases == 3


def test_build_configs_coerces_types():
    ctm, gaptv, train, extras = build_configs({
        "ctm.channels": "16",
        "ctm.attention_layout": "dsa, bda",
        "gaptv.accelerate": "yes",
        "gaptv.tv_weight": "0.1",
        "train.direct_lu": "true",
        "model.phases": "2",
    }, extra_keys=["model.phases"])
    assert ctm.channels == 16
    assert ctm.attention_layout == ("dsa", "bda")
    assert gaptv.accelerate is True and gaptv.tv_weight == 0.1
    assert train.direct_lu is True
    assert extras == {"model.phases": "2"}


@pytest.mark.parametrize("values", [
    {"ctm.colour": "1"},
    {"solver.iters": "3"},
    {"ctm.channels": "eight"},
    {"gaptv.accelerate": "maybe"},
    {"ctm.channels": "6"},
    {"train.phases": "5"},
])
def test_build_configs_rejects(values):
    with pytest.raises(ConfigError):
        build_configs(values)


def test_dump_then_parse_restores_configs():
    ctm = CtmConfig(channels=12, heads=3, use_ff=False, attention_layout=("bda", "bda"), leaky_slope=0.2)
    gaptv = GapTvConfig(tv_weight=0.123456789, accelerate=True, init="rf")
    train = TrainConfig(steps_c=7, lr_c=3e-4)
    text = dump_key_values(ctm, gaptv, train, {"model.phases": 2})
    restored = build_configs(parse_key_values(text), extra_keys=["model.phases"])
    assert restored == (ctm, gaptv, train, {"model.phases": "2"})


def test_parse_key_values_comments_and_errors():
    assert parse_key_values("# header\nctm.channels = 4  # inline\n\n") == {"ctm.channels": "4"}
    with pytest.raises(ConfigError, match="line 2"):
        parse_key_values("ctm.channels=4\nnot a pair\n")


def test_load_key_values_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_key_values(tmp_path / "absent.cfg")


def test_app_settings_from_environment(monkeypatch, tmp_path):
    monkeypatch.delenv("SCI_LOG_LEVEL", raising=False)
    monkeypatch.setenv("SCI_DEBUG", "true")
    monkeypatch.setenv("SCI_DATA_DIR", str(tmp_path / "data"))
    monkeypatch.setenv("SCI_FLOAT_DTYPE", "float32")
    settings = AppSettings()
    assert settings.LOG_LEVEL == "DEBUG"
    assert not settings.is_production
    assert settings.CHECKPOINT_DIR == tmp_path / "data" / "checkpoints"
    assert settings.REPORTS_DIR.is_dir()
    settings.apply()
    assert get_default_dtype() is np.float32


def test_app_settings_rejects_dtype(monkeypatch):
    monkeypatch.setenv("SCI_FLOAT_DTYPE", "float16")
    with pytest.raises(ConfigError):
        AppSettings(create_dirs=False)


def test_configure_logging(restore_root_logger):
    configure_logging("warning")
    assert restore_root_logger.level == logging.WARNING
    assert len(restore_root_logger.handlers) == 1
    with pytest.raises(ConfigError):
        configure_logging("chatty")
