"""Parameter containers and basic layers on top of ``tensor``."""
from __future__ import annotations

import math
from typing import Dict, Iterator, List, Mapping, Optional, Sequence

import numpy as np

from . import tensor as tt
from .errors import ShapeError
from .tensor import Tensor


class Module:
    """Registers parameter tensors and child modules assigned as attributes."""

    def __init__(self) -> None:
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, name: str, value) -> None:
        if isinstance(value, Tensor) and value.requires_grad and value.is_leaf:
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Dict[str, Tensor]:
        out = {f"{prefix}{name}": p for name, p in self._params.items()}
        for child_name, child in self._modules.items():
            out.update(child.named_parameters(f"{prefix}{child_name}."))
        return out

    def parameters(self) -> List[Tensor]:
        return list(self.named_parameters().values())

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters().items()}

    def load_arrays(self, arrays: Mapping[str, np.ndarray], prefix: str = "") -> int:
        """Copy arrays named ``prefix + name`` into parameters; returns how many were set."""
        loaded = 0
        for name, p in self.named_parameters().items():
            key = prefix + name
            if key not in arrays:
                continue
            value = np.asarray(arrays[key], dtype=np.float64)
            if value.shape != p.shape:
                raise ShapeError(f"load {key}", p.shape, value.shape)
            p.data = value.copy()
            loaded += 1
        return loaded


class ModuleList(Module):
    def __init__(self, modules: Sequence[Module]) -> None:
        super().__init__()
        for i, m in enumerate(modules):
            setattr(self, str(i), m)
        object.__setattr__(self, "_items", list(modules))

    def __iter__(self) -> Iterator[Module]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, i: int) -> Module:
        return self._items[i]


def uniform_param(rng: np.random.Generator, shape: Sequence[int], bound: float) -> Tensor:
    return Tensor(rng.uniform(-bound, bound, size=tuple(shape)), requires_grad=True)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True) -> None:
        super().__init__()
        bound = 1.0 / math.sqrt(d_in)
        self.weight = uniform_param(rng, (d_in, d_out), bound)
        self.bias = uniform_param(rng, (d_out,), bound) if bias else None

    def __call__(self, x) -> Tensor:
        out = tt.matmul(x, self.weight)
        return out + self.bias if self.bias is not None else out


class Conv1d(Module):
    """[frames x c_in] -> [frames' x c_out]; weight stored as [kernel x c_in x c_out]."""

    def __init__(
        self,
        c_in: int,
        c_out: int,
        kernel: int,
        rng: np.random.Generator,
        stride: int = 1,
        dilation: int = 1,
    ) -> None:
        super().__init__()
        bound = 1.0 / math.sqrt(c_in * kernel)
        self.weight = uniform_param(rng, (kernel, c_in, c_out), bound)
        self.bias = uniform_param(rng, (c_out,), bound)
        self.stride = stride
        self.dilation = dilation

    def __call__(self, x) -> Tensor:
        return tt.conv1d(x, self.weight, self.bias, stride=self.stride, dilation=self.dilation)


class LayerNorm(Module):
    def __init__(self, dim: int) -> None:
        super().__init__()
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x) -> Tensor:
        return tt.layer_norm(x, self.gamma, self.beta)


class Embedding(Module):
    def __init__(self, n: int, dim: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.table = Tensor(rng.standard_normal((n, dim)), requires_grad=True)

    def __call__(self, ids) -> Tensor:
        return tt.gather_rows(self.table, np.asarray(ids, dtype=np.int64))


def sinusoidal_step_embedding(t: float, dim: int) -> np.ndarray:
    """sin/cos encoding of a diffusion step: [sin(t f_0..f_h), cos(t f_0..f_h)]."""
    if dim % 2:
        raise ValueError(f"step embedding dimension must be even, got {dim}")
    half = dim // 2
    scale = math.log(10000.0) / max(half - 1, 1)
    freqs = np.exp(-scale * np.arange(half))
    angles = float(t) * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)])


def sinusoidal_position_encoding(n_positions: int, dim: int) -> np.ndarray:
    """Transformer position table, interleaved sin (even) / cos (odd) columns."""
    positions = np.arange(n_positions)[:, None]
    div = np.exp(-math.log(10000.0) * np.arange(0, dim, 2) / dim)
    table = np.zeros((n_positions, dim))
    table[:, 0::2] = np.sin(positions * div)
    table[:, 1::2] = np.cos(positions * div)
    return table


__all__ = [
    "Module",
    "ModuleList",
    "Linear",
    "Conv1d",
    "LayerNorm",
    "Embedding",
    "uniform_param",
    "sinusoidal_step_embedding",
    "sinusoidal_position_encoding",
]
