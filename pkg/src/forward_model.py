"""
Forward Model
Simulates the snapshot compressive camera: masks, capture, normalized measurement, reference frames

Arrays are laid out (H, W, T): rows, columns, frames. The sensing matrix Phi
is never built; `phi_apply` and `phi_adjoint` act pixelwise. Both accept plain
numpy arrays or autodiff Tensors for the signal argument.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy import ndimage

from src.errors import DimensionError, DomainError, GenerationError
from src.tensor import Tensor

logger = logging.getLogger(__name__)

Values = Union[np.ndarray, Tensor]

MASK_KINDS = ("bernoulli-half", "shifted")
SCENE_KINDS = ("constant", "moving-square", "edge", "noise-texture")
MAX_REPAIR_ROUNDS = 64


@dataclass
class VideoCube:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or min(self.values.shape) < 1:
            raise DimensionError(f"video cube must be H×W×T with T >= 1, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("video cube holds non-finite values")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def frames(self) -> int:
        return self.values.shape[2]


@dataclass
class MaskSet:
    values: np.ndarray
    seed: int = 0
    kind: str = "bernoulli-half"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise DimensionError(f"mask set must be H×W×T, got {self.values.shape}")

    @property
    def shape(self):
        return self.values.shape

    @property
    def r(self) -> np.ndarray:
        """Diagonal of Phi Phi^T: R = sum_t m^2 per pixel"""
        return np.sum(self.values ** 2, axis=-1)

    @property
    def mask_sum(self) -> np.ndarray:
        return np.sum(self.values, axis=-1)


@dataclass
class Measurement:
    values: np.ndarray
    noise_sigma: float = 0.0
    mask_seed: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DimensionError(f"measurement must be H×W, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("measurement holds non-finite values")


@dataclass
class Sample:
    """One training/evaluation triple"""

    cube: VideoCube
    masks: MaskSet
    measurement: Measurement
    scene: str = field(default="custom")


def _mask_array(m: Union[MaskSet, np.ndarray]) -> np.ndarray:
    return m.values if isinstance(m, MaskSet) else np.asarray(m)


def _measurement_array(y: Union[Measurement, Values]) -> Values:
    return y.values if isinstance(y, Measurement) else y


def _expand_frames(y: Values) -> Values:
    if isinstance(y, Tensor):
        return y.reshape(y.shape + (1,))
    return np.asarray(y)[..., None]


def generate_masks(width: int, height: int, frames: int, kind: str = "bernoulli-half", seed: int = 0) -> MaskSet:
    """
    Generate binary modulation masks with no dead pixel

    Args:
        width, height, frames: extents (positive)
        kind: 'bernoulli-half' (i.i.d. fair coin per entry) or 'shifted'
              (one random plane rolled by t columns for frame t)
        seed: generator seed

    Returns:
        MaskSet of shape (height, width, frames)
    """
    if min(width, height, frames) < 1:
        raise DimensionError(f"mask extents must be positive, got {(width, height, frames)}")
    if kind not in MASK_KINDS:
        raise GenerationError(f"unknown mask kind: {kind}")
    rng = np.random.default_rng(seed)

    if kind == "bernoulli-half":
        values = (rng.random((height, width, frames)) < 0.5).astype(np.float64)
        for _ in range(MAX_REPAIR_ROUNDS):
            dead = ~np.any(values > 0, axis=-1)
            if not dead.any():
                break
            values[dead] = (rng.random((int(dead.sum()), frames)) < 0.5).astype(np.float64)
        else:
            raise GenerationError(f"could not repair dead pixels after {MAX_REPAIR_ROUNDS} rounds")
    else:
        base = (rng.random((height, width)) < 0.5).astype(np.float64)
        values = np.stack([np.roll(base, t, axis=1) for t in range(frames)], axis=-1)
        dead = ~np.any(values > 0, axis=-1)
        if dead.any():
            # Turning on the frame-0 source of a dead pixel cannot create new dead pixels
            base[dead] = 1.0
            values = np.stack([np.roll(base, t, axis=1) for t in range(frames)], axis=-1)

    logger.debug("generated %s masks %dx%dx%d (seed %d), density %.3f", kind, height, width, frames, seed, values.mean())
    return MaskSet(values, seed=seed, kind=kind)


def phi_apply(v: Values, m: Union[MaskSet, np.ndarray]) -> Values:
    """Phi v: sum over frames of v ⊙ m"""
    masks = _mask_array(m)
    if tuple(v.shape) != masks.shape:
        raise DimensionError(f"signal shape {tuple(v.shape)} != mask shape {masks.shape}")
    return (v * masks).sum(axis=-1)


def phi_adjoint(y: Union[Measurement, Values], m: Union[MaskSet, np.ndarray]) -> Values:
    """Phi^T y: y replicated over frames and gated by each mask"""
    y = _measurement_array(y)
    masks = _mask_array(m)
    if tuple(y.shape) != masks.shape[:2]:
        raise DimensionError(f"measurement shape {tuple(y.shape)} != mask plane {masks.shape[:2]}")
    return _expand_frames(y) * masks


def capture(x: VideoCube, m: MaskSet, noise_sigma: float = 0.0, seed: int = 0) -> Measurement:
    """Y = sum_t x_t ⊙ m_t + N with N ~ Gaussian(0, noise_sigma^2)"""
    if noise_sigma < 0:
        raise DomainError(f"noise_sigma must be >= 0, got {noise_sigma}")
    if x.values.shape != m.shape:
        raise DimensionError(f"cube shape {x.values.shape} != mask shape {m.shape}")
    y = phi_apply(x.values, m)
    if noise_sigma > 0:
        y = y + np.random.default_rng(seed).normal(0.0, noise_sigma, size=y.shape)
    return Measurement(y, noise_sigma=float(noise_sigma), mask_seed=m.seed)


def normalized_measurement(y: Union[Measurement, Values], m: Union[MaskSet, np.ndarray]) -> Values:
    """NM = y / sum_t m_t, pixelwise"""
    y = _measurement_array(y)
    masks = _mask_array(m)
    if tuple(y.shape) != masks.shape[:2]:
        raise DimensionError(f"measurement shape {tuple(y.shape)} != mask plane {masks.shape[:2]}")
    mask_sum = masks.sum(axis=-1)
    zero = np.argwhere(mask_sum == 0)
    if len(zero):
        row, col = zero[0]
        raise DomainError(f"mask sum is zero at pixel (row={row}, col={col}); {len(zero)} such pixel(s)")
    return y / mask_sum


def reference_frames(nm: Values, m: Union[MaskSet, np.ndarray]) -> Values:
    """RF[:, :, t] = NM ⊙ m_t"""
    masks = _mask_array(m)
    if tuple(nm.shape) != masks.shape[:2]:
        raise DimensionError(f"normalized measurement shape {tuple(nm.shape)} != mask plane {masks.shape[:2]}")
    return _expand_frames(nm) * masks


# ---------------------------------------------------------------- scenes
def make_scene(kind: str, width: int, height: int, frames: int, seed: int = 0) -> VideoCube:
    """Built-in synthetic scenes with values in [0, 1]"""
    rng = np.random.default_rng(seed)
    rows, cols = np.mgrid[0:height, 0:width]

    if kind == "constant":
        values = np.full((height, width, frames), rng.uniform(0.2, 0.8))
    elif kind == "moving-square":
        side = max(2, min(height, width) // 4)
        top = int(rng.integers(0, max(1, height - side - frames + 1)))
        left = int(rng.integers(0, max(1, width - side - frames + 1)))
        values = np.full((height, width, frames), 0.1)
        for t in range(frames):
            r0, c0 = (top + t) % height, (left + t) % width
            values[r0:r0 + side, c0:c0 + side, t] = 0.9
    elif kind == "edge":
        start = int(rng.integers(width // 4, max(width // 4 + 1, width // 2)))
        low, high = 0.2, 0.8
        values = np.stack([np.where(cols < (start + t) % width, low, high) for t in range(frames)], axis=-1)
        values = values.astype(np.float64)
    elif kind == "noise-texture":
        plane = ndimage.gaussian_filter(rng.normal(size=(height, width + frames)), sigma=1.5, mode="wrap")
        plane = (plane - plane.min()) / max(plane.max() - plane.min(), 1e-12)
        values = np.stack([plane[:, t:t + width] for t in range(frames)], axis=-1)
    else:
        raise DomainError(f"unknown scene: {kind} (choose from {', '.join(SCENE_KINDS)})")
    return VideoCube(values)


def augment(cube: VideoCube, rng: np.random.Generator, crop: Optional[tuple] = None) -> VideoCube:
    """Random crop, 90° rotation (square frames only) and flips, applied to all frames alike"""
    values = cube.values
    if crop is not None:
        ch, cw = crop
        if ch > cube.height or cw > cube.width:
            raise DimensionError(f"crop {crop} exceeds frame {cube.height}×{cube.width}")
        r0 = int(rng.integers(0, cube.height - ch + 1))
        c0 = int(rng.integers(0, cube.width - cw + 1))
        values = values[r0:r0 + ch, c0:c0 + cw]
    if values.shape[0] == values.shape[1]:
        values = np.rot90(values, k=int(rng.integers(0, 4)), axes=(0, 1))
    if rng.random() < 0.5:
        values = values[:, ::-1]
    if rng.random() < 0.5:
        values = values[::-1]
    return VideoCube(np.ascontiguousarray(values))


def simulate(
    cube: VideoCube,
    mask_kind: str = "bernoulli-half",
    mask_seed: int = 0,
    noise_sigma: float = 0.0,
    noise_seed: int = 0,
    scene: str = "custom",
) -> Sample:
    masks = generate_masks(cube.width, cube.height, cube.frames, mask_kind, mask_seed)
    return Sample(cube, masks, capture(cube, masks, noise_sigma, noise_seed), scene=scene)
