"""
Uncertainty Estimation
Shared-encoder network with mean and log-variance decoders, the heteroscedastic
loss, uncertainty-map binarization and the per-phase UM feature blocks
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from config.settings import CtmConfig
from src.ctm_network import CtmTrunk, cube_to_volume, stack_inputs, volume_to_cube
from src.errors import ContractError, DimensionError
from src.forward_model import MaskSet, Measurement, VideoCube, capture, generate_masks
from src.gap_solver import gap_project, initial_estimate
from src.nn import ConvLayer, Module, activate
from src.tensor import Tensor, ensure_tensor, no_grad

logger = logging.getLogger(__name__)

BETA_CLAMP = 10.0
INPUT_CHANNELS = 2  # x_init and the reference frames


@dataclass
class UncertaintyMap:
    """Per-pixel log-variance beta = ln(sigma^2), H×W×T"""

    beta: np.ndarray

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64)

    @property
    def sigma2(self) -> np.ndarray:
        return np.exp(self.beta)

    @property
    def binarized(self) -> np.ndarray:
        return binarize_um(self.sigma2)


def binarize_um(sigma2: np.ndarray) -> np.ndarray:
    """True where sigma2 is strictly above its mean"""
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    if sigma2.size == 0 or sigma2.max() == sigma2.min():
        return np.zeros(sigma2.shape, dtype=bool)
    return sigma2 > sigma2.mean()


def mse_loss(prediction: Tensor, target: Union[np.ndarray, Tensor]) -> Tensor:
    residual = ensure_tensor(prediction) - ensure_tensor(target)
    return (residual * residual).mean()


def uncertainty_loss(
    x_true: Union[np.ndarray, Tensor],
    mean: Tensor,
    beta: Tensor,
    clamp: float = BETA_CLAMP,
) -> Tensor:
    """
    L_U = mean(exp(-beta) * (x_true - mean)^2 + beta)

    beta is clamped to [-clamp, clamp] inside the loss only.
    """
    mean, beta = ensure_tensor(mean), ensure_tensor(beta)
    if mean.shape != beta.shape or tuple(np.shape(x_true)) != mean.shape:
        raise DimensionError(f"loss shapes differ: {np.shape(x_true)}, {mean.shape}, {beta.shape}")
    beta = beta.clip(-clamp, clamp)
    residual = ensure_tensor(x_true) - mean
    return ((-beta).exp() * (residual * residual) + beta).mean()


def network_inputs(y: Union[Measurement, np.ndarray], m: MaskSet) -> Tuple[np.ndarray, np.ndarray]:
    """
    (x_init, gamma) for the uncertainty network: the projected reference
    frames and the reference frames as a 1×T×H×W stack
    """
    rf = initial_estimate(y, m, "rf")
    return gap_project(rf, y, m), cube_to_volume(rf).data


class UncertaintyNet(Module):
    """
    One-phase CTM trunk with two decoders: a mean head (with the x_init
    residual, as in a phase) and a log-variance head. Both heads start at zero.
    """

    def __init__(self, cfg: CtmConfig, rng: Optional[np.random.Generator] = None):
        super().__init__()
        cfg.validate()
        rng = rng if rng is not None else np.random.default_rng(cfg.init_seed)
        self.cfg = cfg
        self.trunk = CtmTrunk(cfg, INPUT_CHANNELS, rng)
        self.mean_head = ConvLayer(cfg.channels, 1, cfg.kernel_size, rng, init="zero")
        self.beta_head = ConvLayer(cfg.channels, 1, cfg.kernel_size, rng, init="zero")

    def forward(self, x_init: Union[np.ndarray, Tensor], gamma: Union[np.ndarray, Tensor]) -> Tuple[Tensor, Tensor]:
        x_vol, inputs = stack_inputs(x_init, gamma)
        features = self.trunk(inputs)
        mean = volume_to_cube(x_vol + self.mean_head(features))
        beta = volume_to_cube(self.beta_head(features))
        return mean, beta

    def estimate(self, y: Union[Measurement, np.ndarray], m: MaskSet) -> Tuple[np.ndarray, UncertaintyMap]:
        """Mean reconstruction and uncertainty map, no graph recorded"""
        with no_grad():
            mean, beta = self(*network_inputs(y, m))
        return mean.data, UncertaintyMap(beta.data)


def uncertainty_forward(
    x_init: Union[np.ndarray, Tensor],
    gamma: Union[np.ndarray, Tensor],
    net: UncertaintyNet,
) -> Tuple[Tensor, Tensor]:
    return net(x_init, gamma)


class UmBlock(Module):
    """Two 3D convs (1 -> C_um -> C_um) over the log-variance map"""

    def __init__(self, cfg: CtmConfig, rng: np.random.Generator):
        super().__init__()
        self.negative_slope = cfg.negative_slope
        self.conv1 = ConvLayer(1, cfg.um_channels, cfg.kernel_size, rng)
        self.conv2 = ConvLayer(cfg.um_channels, cfg.um_channels, cfg.kernel_size, rng)

    def forward(self, beta: Union[np.ndarray, Tensor]) -> Tensor:
        h = activate(self.conv1(cube_to_volume(beta)), self.negative_slope)
        return activate(self.conv2(h), self.negative_slope)


class UmFeatures(Module):
    """One UmBlock per phase; blocks share structure, not parameters"""

    def __init__(self, cfg: CtmConfig, phases: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(cfg.init_seed)
        self.blocks = [self.add_module(f"block{j}", UmBlock(cfg, rng)) for j in range(phases)]

    def forward(self, beta: Union[np.ndarray, Tensor], phase_index: int) -> Tensor:
        if not 0 <= phase_index < len(self.blocks):
            raise ContractError(f"phase index {phase_index} out of range for {len(self.blocks)} UM blocks")
        return self.blocks[phase_index](beta)


def um_features(beta: Union[np.ndarray, Tensor], phase_index: int, features: UmFeatures) -> Tensor:
    return features(beta, phase_index)


def mask_adaptability(
    net: UncertaintyNet,
    cube: VideoCube,
    reference_masks: MaskSet,
    mask_seeds: Sequence[int],
    noise_sigma: float = 0.0,
) -> Dict[int, float]:
    """
    Fraction of binarized-UM pixels that flip when the frozen network sees the
    same scene captured through masks drawn with other seeds

    Returns:
        mask seed -> changed fraction in [0, 1]
    """
    reference = net.estimate(capture(cube, reference_masks, noise_sigma), reference_masks)[1].binarized
    changes = {}
    for seed in mask_seeds:
        masks = generate_masks(cube.width, cube.height, cube.frames, reference_masks.kind, seed)
        binarized = net.estimate(capture(cube, masks, noise_sigma), masks)[1].binarized
        changes[seed] = float(np.mean(binarized != reference))
        logger.info("mask seed %d: %.1f%% of binarized UM pixels changed", seed, 100 * changes[seed])
    return changes
