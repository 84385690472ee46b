"""
Neural Network Building Blocks
Module/parameter registry and the layers shared by the CTM prior and the uncertainty network
"""

import logging
from typing import Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np

from src.errors import ContractError, DimensionError
from src.tensor import Parameter, Tensor, conv3d, leaky_relu

logger = logging.getLogger(__name__)


class Module:
    """Container of named parameters and child modules"""

    def __init__(self):
        object.__setattr__(self, "_parameters", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, name: str, value) -> None:
        if isinstance(value, Parameter):
            self._parameters[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def add_module(self, name: str, module: "Module") -> "Module":
        setattr(self, name, module)
        return module

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, param in self._parameters.items():
            yield prefix + name, param
        for name, module in self._modules.items():
            yield from module.named_parameters(prefix + name + ".")

    def parameters(self, trainable_only: bool = False) -> List[Parameter]:
        return [p for _, p in self.named_parameters() if p.trainable or not trainable_only]

    def bind_names(self, prefix: str = "") -> "Module":
        """Write each parameter's full dotted path into `Parameter.name`"""
        seen = set()
        for name, param in self.named_parameters(prefix):
            if name in seen:
                raise ContractError(f"duplicate parameter name: {name}")
            seen.add(name)
            param.name = name
        return self

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: param.data.copy() for name, param in self.named_parameters()}

    def load_state_dict(self, state: Mapping[str, np.ndarray], strict: bool = True) -> List[str]:
        """Copy arrays into matching parameters; returns the names that were loaded"""
        loaded = []
        own = dict(self.named_parameters())
        missing = [name for name in own if name not in state]
        if strict and missing:
            raise ContractError(f"state is missing parameters: {missing[:5]}")
        for name, param in own.items():
            if name not in state:
                continue
            value = np.asarray(state[name])
            if value.shape != param.shape:
                raise DimensionError(f"{name}: state shape {value.shape} != parameter shape {param.shape}")
            param.data[...] = value
            loaded.append(name)
        return loaded

    def freeze(self) -> "Module":
        for param in self.parameters():
            param.trainable = False
        return self

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.grad = None


def uniform_init(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    """Token-wise affine map over the last axis: x @ W + b"""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, zero_init: bool = False):
        super().__init__()
        shape = (in_features, out_features)
        self.weight = Parameter(np.zeros(shape) if zero_init else uniform_init(rng, shape, in_features))
        self.bias = Parameter(np.zeros(out_features) if zero_init else uniform_init(rng, (out_features,), in_features))

    def forward(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class ConvLayer(Module):
    """3D convolution with 'same' padding over a C×T×H×W volume"""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        init: str = "uniform",
    ):
        super().__init__()
        shape = (out_channels, in_channels) + (kernel_size,) * 3
        if init == "uniform":
            fan_in = in_channels * kernel_size ** 3
            weight = uniform_init(rng, shape, fan_in)
            bias = uniform_init(rng, (out_channels,), fan_in)
        elif init == "zero":
            weight, bias = np.zeros(shape), np.zeros(out_channels)
        elif init == "identity":
            if in_channels != out_channels:
                raise ContractError("identity init needs in_channels == out_channels")
            weight, bias = np.zeros(shape), np.zeros(out_channels)
            center = kernel_size // 2
            weight[np.arange(out_channels), np.arange(in_channels), center, center, center] = 1.0
        else:
            raise ContractError(f"unknown conv init: {init}")
        self.weight = Parameter(weight)
        self.bias = Parameter(bias)

    def forward(self, x: Tensor) -> Tensor:
        return conv3d(x, self.weight, self.bias)


class ChannelNorm(Module):
    """Per-token normalization across channels of a C×T×H×W volume, learned gain and shift"""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gain = Parameter(np.ones((channels, 1, 1, 1)))
        self.shift = Parameter(np.zeros((channels, 1, 1, 1)))

    def forward(self, x: Tensor) -> Tensor:
        centered = x - x.mean(axis=0, keepdims=True)
        variance = (centered * centered).mean(axis=0, keepdims=True)
        return centered / (variance + self.eps).sqrt() * self.gain + self.shift


def activate(x: Tensor, negative_slope: float) -> Tensor:
    """Leaky rectifier; slope 0 gives the plain rectifier"""
    return leaky_relu(x, negative_slope)


def count_parameters(module: Module, trainable_only: bool = False) -> int:
    return int(sum(p.size for p in module.parameters(trainable_only)))


def copy_matching_parameters(
    source: Module,
    target: Module,
    source_prefix: str,
    target_prefix: str,
) -> Dict[str, str]:
    """
    Duplicate parameters between models by name suffix.

    A source parameter `source_prefix + suffix` is copied into
    `target_prefix + suffix`. Equal shapes copy bit-exactly; when only the
    leading input-channel extent differs (a conv whose input stack grew), the
    overlapping input-channel prefix is copied and the rest left untouched.

    Returns:
        target name -> source name for every copied parameter
    """
    sources = {name[len(source_prefix):]: (name, p) for name, p in source.named_parameters()
               if name.startswith(source_prefix)}
    copied = {}
    for name, param in target.named_parameters():
        if not name.startswith(target_prefix):
            continue
        match = sources.get(name[len(target_prefix):])
        if match is None:
            continue
        src_name, src = match
        if src.shape == param.shape:
            param.data[...] = src.data
        elif (src.ndim == param.ndim == 5 and src.shape[0] == param.shape[0]
              and src.shape[2:] == param.shape[2:] and src.shape[1] <= param.shape[1]):
            param.data[:, :src.shape[1]] = src.data
        else:
            logger.debug("skip %s <- %s: shapes %s vs %s", name, src_name, param.shape, src.shape)
            continue
        copied[name] = src_name
    return copied
