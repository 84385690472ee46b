"""
CTM Network
Convolution-Transformer Mixture prior: window and dilated partitions, windowed
multi-head self-attention with relative position bias, blocked dense attention
(BDA), dilated sparse attention (DSA), feature fusion and the per-phase model

Feature volumes are laid out C×T×H×W. Video cubes handed to a phase keep the
H×W×T layout of the forward model.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from config.settings import CtmConfig
from src.errors import ConfigError, ContractError, DimensionError
from src.nn import ChannelNorm, ConvLayer, Linear, Module, activate
from src.tensor import (
    MacCounter,
    Parameter,
    Tensor,
    concat,
    ensure_tensor,
    no_grad,
    pad,
    softmax_lastdim,
    take,
)

logger = logging.getLogger(__name__)

Block = Tuple[int, int, int]  # (frames, rows, cols)
ATTENTION_MODES = ("FSA", "BDA", "DSA")


# ---------------------------------------------------------------- layouts
def cube_to_volume(cube: Union[np.ndarray, Tensor]) -> Tensor:
    """H×W×T cube -> 1×T×H×W volume"""
    cube = ensure_tensor(cube)
    if cube.ndim != 3:
        raise ContractError(f"expected an H×W×T cube, got shape {cube.shape}")
    height, width, frames = cube.shape
    return cube.permute(2, 0, 1).reshape(1, frames, height, width)


def volume_to_cube(volume: Tensor) -> Tensor:
    """1×T×H×W volume -> H×W×T cube"""
    if volume.ndim != 4 or volume.shape[0] != 1:
        raise ContractError(f"expected a single-channel volume, got shape {volume.shape}")
    _, frames, height, width = volume.shape
    return volume.reshape(frames, height, width).permute(1, 2, 0)


# ------------------------------------------------------------- partitions
@dataclass(frozen=True)
class PartitionInfo:
    """What a partition did, so the merge can undo it"""

    extent: Block
    padded: Block
    block: Block
    dilated: bool

    @property
    def grid(self) -> Block:
        return tuple(p // b for p, b in zip(self.padded, self.block))

    @property
    def groups(self) -> int:
        return int(np.prod(self.grid))

    @property
    def tokens(self) -> int:
        return int(np.prod(self.block))

    @property
    def is_padded(self) -> bool:
        return self.extent != self.padded


def _partition(f: Tensor, block: Block, dilated: bool) -> Tuple[Tensor, PartitionInfo]:
    f = ensure_tensor(f)
    if f.ndim != 4:
        raise DimensionError(f"partition expects C×T×H×W, got {f.shape}")
    if min(block) < 1:
        raise DimensionError(f"partition block must be positive, got {block}")
    channels = f.shape[0]
    extent = tuple(f.shape[1:])
    padded = tuple(-(-n // b) * b for n, b in zip(extent, block))
    info = PartitionInfo(extent, padded, tuple(block), dilated)

    fp = pad(f, [(0, 0)] + [(0, p - n) for n, p in zip(extent, padded)])
    (bt, bh, bw), (nt, nh, nw) = info.block, info.grid
    if dilated:
        # position = k * interval + g; tokens of a group share g
        grid = fp.reshape(channels, bt, nt, bh, nh, bw, nw).permute(2, 4, 6, 1, 3, 5, 0)
    else:
        grid = fp.reshape(channels, nt, bt, nh, bh, nw, bw).permute(1, 3, 5, 2, 4, 6, 0)
    return grid.reshape(info.groups, info.tokens, channels), info


def _merge(tokens: Tensor, info: PartitionInfo) -> Tensor:
    if tokens.ndim != 3 or tokens.shape[:2] != (info.groups, info.tokens):
        raise DimensionError(f"tokens {tokens.shape} do not match partition {info.groups}×{info.tokens}")
    channels = tokens.shape[-1]
    grid = tokens.reshape(info.grid + info.block + (channels,))
    if info.dilated:
        volume = grid.permute(6, 3, 0, 4, 1, 5, 2)
    else:
        volume = grid.permute(6, 0, 3, 1, 4, 2, 5)
    volume = volume.reshape((channels,) + info.padded)
    if info.is_padded:
        frames, height, width = info.extent
        volume = volume[:, :frames, :height, :width]
    return volume


def window_partition(f: Tensor, window_size: int, window_frames: int) -> Tuple[Tensor, PartitionInfo]:
    """
    Split a C×T×H×W volume into non-overlapping P×P×M windows

    Extents that are not multiples of the window are zero-padded at the end.

    Returns:
        (tokens [windows × P·P·M × C], PartitionInfo for window_merge)
    """
    return _partition(f, (window_frames, window_size, window_size), dilated=False)


def window_merge(tokens: Tensor, info: PartitionInfo) -> Tensor:
    return _merge(tokens, info)


def dilated_partition(f: Tensor, group_size: int, group_frames: int) -> Tuple[Tensor, PartitionInfo]:
    """
    Gather S×S×B token groups sampled with a fixed stride across the whole volume

    The stride (interval) along each axis is the padded extent divided by the
    group size, so group g holds every token whose position is congruent to g
    modulo the interval.
    """
    return _partition(f, (group_frames, group_size, group_size), dilated=True)


def dilated_merge(tokens: Tensor, info: PartitionInfo) -> Tensor:
    return _merge(tokens, info)


# -------------------------------------------------------------- attention
def relative_position_index(block: Block) -> np.ndarray:
    """L×L index into the bias table for every token pair of a block"""
    coords = np.stack(np.meshgrid(*(np.arange(b) for b in block), indexing="ij")).reshape(3, -1).T
    relative = coords[:, None, :] - coords[None, :, :] + (np.array(block) - 1)
    spans = 2 * np.array(block) - 1
    return relative[..., 0] * spans[1] * spans[2] + relative[..., 1] * spans[2] + relative[..., 2]


class RelPosBias(Module):
    """Per-head table over (2P-1)·(2P-1)·(2M-1) relative offsets, shared by every window of a layer"""

    def __init__(self, block: Block, heads: int, rng: np.random.Generator):
        super().__init__()
        self.block = tuple(block)
        self.heads = heads
        self.index = relative_position_index(self.block)
        entries = int(np.prod([2 * b - 1 for b in self.block]))
        self.table = Parameter(rng.normal(0.0, 0.02, size=(entries, heads)))

    @property
    def tokens(self) -> int:
        return int(np.prod(self.block))

    def forward(self) -> Tensor:
        return take(self.table, self.index).permute(2, 0, 1)


class MultiHeadSelfAttention(Module):
    """
    Softmax(QK^T/sqrt(d) + B)V per group and head, heads concatenated, then
    an output projection

    Q, K and V come from one fused token-wise linear map C -> 3C, so a group
    of L tokens costs 4·L·C^2 MACs for the linear maps and 2·L^2·C for the two
    attention products.
    """

    def __init__(
        self,
        channels: int,
        heads: int,
        block: Block,
        rng: np.random.Generator,
        zero_proj: bool = True,
    ):
        super().__init__()
        if channels % heads:
            raise ConfigError(f"{channels} channels cannot be split into {heads} heads")
        self.channels = channels
        self.heads = heads
        self.head_dim = channels // heads
        self.qkv = Linear(channels, 3 * channels, rng)
        self.proj = Linear(channels, channels, rng, zero_init=zero_proj)
        self.bias = RelPosBias(block, heads, rng)

    def forward(self, tokens: Tensor, valid: Optional[np.ndarray] = None) -> Tensor:
        """
        Args:
            tokens: groups × L × C
            valid: optional groups × L × 1 indicator; tokens marked 0 (padding)
                   contribute no value

        Returns:
            groups × L × C
        """
        tokens = ensure_tensor(tokens)
        if tokens.ndim != 3 or tokens.shape[-1] != self.channels:
            raise ContractError(f"msa expects groups×L×{self.channels} tokens, got {tokens.shape}")
        groups, length, _ = tokens.shape
        if length != self.bias.tokens:
            raise ContractError(f"msa got {length} tokens per group, position bias covers {self.bias.tokens}")

        qkv = self.qkv(tokens).reshape(groups, length, 3, self.heads, self.head_dim).permute(2, 0, 3, 1, 4)
        q = qkv[0] * (1.0 / math.sqrt(self.head_dim))
        k, v = qkv[1], qkv[2]
        if valid is not None:
            v = v * np.asarray(valid).reshape(groups, 1, length, 1)

        attn = softmax_lastdim(q @ k.permute(0, 1, 3, 2) + self.bias())
        out = (attn @ v).permute(0, 2, 1, 3).reshape(groups, length, self.channels)
        return self.proj(out)


def msa(tokens: Tensor, attention: MultiHeadSelfAttention, valid: Optional[np.ndarray] = None) -> Tensor:
    return attention(tokens, valid)


class AttentionBlock(Module):
    """Pre-norm, partition, attention, merge, residual add"""

    kind = "bda"

    def __init__(self, cfg: CtmConfig, rng: np.random.Generator, kind: Optional[str] = None):
        super().__init__()
        self.kind = kind or self.kind
        if self.kind == "bda":
            self.block = (cfg.window_frames, cfg.window_size, cfg.window_size)
        elif self.kind == "dsa":
            self.block = (cfg.group_frames, cfg.group_size, cfg.group_size)
        else:
            raise ConfigError(f"unknown attention kind: {self.kind}")
        self.norm = ChannelNorm(cfg.channels, cfg.norm_eps)
        self.attn = MultiHeadSelfAttention(cfg.channels, cfg.heads, self.block, rng)
        self._valid: Dict[Block, Optional[np.ndarray]] = {}

    def partition(self, f: Tensor) -> Tuple[Tensor, PartitionInfo]:
        return _partition(f, self.block, dilated=self.kind == "dsa")

    def _valid_tokens(self, info: PartitionInfo) -> Optional[np.ndarray]:
        if not info.is_padded:
            return None
        if info.extent not in self._valid:
            with no_grad():
                ones = Tensor(np.ones((1,) + info.extent))
                self._valid[info.extent] = self.partition(ones)[0].data
        return self._valid[info.extent]

    def forward(self, f: Tensor) -> Tensor:
        tokens, info = self.partition(self.norm(f))
        out = self.attn(tokens, self._valid_tokens(info))
        return f + _merge(out, info)


class BdaBlock(AttentionBlock):
    """Blocked dense attention: full attention inside each P×P×M window"""

    kind = "bda"


class DsaBlock(AttentionBlock):
    """Dilated sparse attention: attention inside each strided S×S×B group"""

    kind = "dsa"


def bda_block(f: Tensor, block: BdaBlock) -> Tensor:
    return block(f)


def dsa_block(f: Tensor, block: DsaBlock) -> Tensor:
    return block(f)


# ---------------------------------------------------------- feature fusion
class ResidualBranch(Module):
    def __init__(self, channels: int, cfg: CtmConfig, rng: np.random.Generator):
        super().__init__()
        self.negative_slope = cfg.negative_slope
        self.norm = ChannelNorm(channels, cfg.norm_eps)
        self.conv1 = ConvLayer(channels, channels, cfg.kernel_size, rng)
        self.conv2 = ConvLayer(channels, channels, cfg.kernel_size, rng, init="zero")

    def forward(self, h: Tensor) -> Tensor:
        return h + self.conv2(activate(self.conv1(self.norm(h)), self.negative_slope))


class FfBlock(Module):
    """
    Feature fusion: the channels are split in halves, each half runs its own
    residual 3D-conv branch, and a 1×1×1 conv fuses the concatenation back to
    C channels. The fusion conv starts as the channel identity.
    """

    def __init__(self, cfg: CtmConfig, rng: np.random.Generator):
        super().__init__()
        if cfg.channels % 2:
            raise ConfigError(f"feature fusion needs an even channel count, got {cfg.channels}")
        self.half = cfg.channels // 2
        self.branch_a = ResidualBranch(self.half, cfg, rng)
        self.branch_b = ResidualBranch(self.half, cfg, rng)
        self.fuse = ConvLayer(cfg.channels, cfg.channels, 1, rng, init="identity")

    def forward(self, f: Tensor) -> Tensor:
        f = ensure_tensor(f)
        if f.ndim != 4 or f.shape[0] != 2 * self.half:
            raise ContractError(f"ff block expects {2 * self.half}×T×H×W, got {f.shape}")
        a = self.branch_a(f[:self.half])
        b = self.branch_b(f[self.half:])
        return self.fuse(concat([a, b], axis=0))


def ff_block(f: Tensor, block: FfBlock) -> Tensor:
    return block(f)


# ------------------------------------------------------------------ phase
def _attention_names(layout: Tuple[str, ...]) -> List[str]:
    names = []
    for i, kind in enumerate(layout):
        names.append(kind if layout.count(kind) == 1 else f"{kind}{i}")
    return names


class CtmUnit(Module):
    """One mixture unit: the attention layout (BDA then DSA by default) followed by FF"""

    def __init__(self, cfg: CtmConfig, rng: np.random.Generator):
        super().__init__()
        self.layers: List[Module] = []
        for name, kind in zip(_attention_names(tuple(cfg.attention_layout)), cfg.attention_layout):
            layer = BdaBlock(cfg, rng) if kind == "bda" else DsaBlock(cfg, rng)
            self.layers.append(self.add_module(name, layer))
        if cfg.use_ff:
            self.layers.append(self.add_module("ff", FfBlock(cfg, rng)))

    def forward(self, f: Tensor) -> Tensor:
        for layer in self.layers:
            f = layer(f)
        return f


class CtmTrunk(Module):
    """Initialization feature extraction followed by blocks_per_phase mixture units"""

    def __init__(self, cfg: CtmConfig, in_channels: int, rng: np.random.Generator):
        super().__init__()
        self.in_channels = in_channels
        self.init = ConvLayer(in_channels, cfg.channels, cfg.kernel_size, rng)
        self.units = [self.add_module(f"block{b}", CtmUnit(cfg, rng)) for b in range(cfg.blocks_per_phase)]

    def forward(self, inputs: Tensor) -> Tensor:
        if inputs.ndim != 4 or inputs.shape[0] != self.in_channels:
            raise ContractError(f"trunk expects {self.in_channels}×T×H×W input, got {inputs.shape}")
        f = self.init(inputs)
        for unit in self.units:
            f = unit(f)
        return f


def stack_inputs(x_proj: Union[np.ndarray, Tensor], gamma: Optional[Union[np.ndarray, Tensor]]) -> Tuple[Tensor, Tensor]:
    """(x as 1×T×H×W, concat(x, gamma) along channels)"""
    x_vol = cube_to_volume(x_proj)
    if gamma is None:
        return x_vol, x_vol
    gamma = ensure_tensor(gamma)
    if gamma.ndim != 4 or gamma.shape[1:] != x_vol.shape[1:]:
        raise ContractError(f"auxiliary stack {gamma.shape} does not match volume {x_vol.shape}")
    return x_vol, concat([x_vol, gamma], axis=0)


class CtmPhase(Module):
    """
    Prior of one unfolding phase

    concat(x, gamma) -> init conv to C channels -> units -> conv to 1 channel,
    added to x. The output conv starts at zero so a fresh phase returns x.
    """

    def __init__(self, cfg: CtmConfig, in_channels: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        cfg.validate()
        rng = rng if rng is not None else np.random.default_rng(cfg.init_seed)
        self.cfg = cfg
        self.in_channels = in_channels
        self.trunk = CtmTrunk(cfg, in_channels, rng)
        self.head = ConvLayer(cfg.channels, 1, cfg.kernel_size, rng, init="zero")

    def forward(self, x_proj: Union[np.ndarray, Tensor], gamma: Optional[Union[np.ndarray, Tensor]] = None) -> Tensor:
        x_vol, inputs = stack_inputs(x_proj, gamma)
        return volume_to_cube(x_vol + self.head(self.trunk(inputs)))


def phase_forward(
    x_proj: Union[np.ndarray, Tensor],
    gamma: Optional[Union[np.ndarray, Tensor]],
    phase: CtmPhase,
) -> Tensor:
    return phase(x_proj, gamma)


# ------------------------------------------------------------- op counts
@dataclass
class OpCount:
    mode: str
    analytic: int
    measured: int

    @property
    def match(self) -> bool:
        return self.analytic == self.measured


def analytic_ops(mode: str, width: int, height: int, frames: int, channels: int, cfg: CtmConfig) -> int:
    """
    Closed-form attention MACs

    FSA: 4·WHT·C^2 + 2·(WHT)^2·C
    BDA: 4·WHT·C^2 + 2·WHT·P^2·M·C
    DSA: 4·WHT·C^2 + 2·WHT·S^2·B·C
    """
    volume = width * height * frames
    tokens = {
        "FSA": volume,
        "BDA": cfg.window_size ** 2 * cfg.window_frames,
        "DSA": cfg.group_size ** 2 * cfg.group_frames,
    }
    if mode not in tokens:
        raise ConfigError(f"unknown attention mode: {mode} (choose from {', '.join(ATTENTION_MODES)})")
    return 4 * volume * channels ** 2 + 2 * volume * tokens[mode] * channels


def mode_block(mode: str, width: int, height: int, frames: int, cfg: CtmConfig) -> Tuple[Block, bool]:
    if mode == "FSA":
        return (frames, height, width), False
    if mode == "BDA":
        return (cfg.window_frames, cfg.window_size, cfg.window_size), False
    if mode == "DSA":
        return (cfg.group_frames, cfg.group_size, cfg.group_size), True
    raise ConfigError(f"unknown attention mode: {mode}")


def count_ops(cfg: CtmConfig, width: int, height: int, frames: int, channels: int, mode: str, seed: int = 0) -> OpCount:
    """
    Analytic and instrumented MAC counts of one attention layer

    The measured count comes from running the attention on a random volume
    under a MacCounter. Extents must be multiples of the window/group.
    """
    block, dilated = mode_block(mode, width, height, frames, cfg)
    if frames % block[0] or height % block[1] or width % block[2]:
        raise DimensionError(f"{mode}: extent {width}×{height}×{frames} not divisible by block {block}")
    rng = np.random.default_rng(seed)
    attention = MultiHeadSelfAttention(channels, cfg.heads, block, rng)
    volume = Tensor(rng.normal(size=(channels, frames, height, width)))
    with no_grad():
        tokens, _ = _partition(volume, block, dilated)
        with MacCounter() as counter:
            attention(tokens)
    return OpCount(mode, analytic_ops(mode, width, height, frames, channels, cfg), counter.total)
