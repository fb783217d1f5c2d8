"""Parameter stores, Adam state and checkpoint files."""
from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .blocks import JCUDiscriminator
from .config import ModelConfig
from .errors import CheckpointError, ShapeError
from .layers import Module
from .models import AcousticGenerator, BasicAcousticModel
from .tensor import Tensor
from .tensorio import TensorFile, read_tensors, write_tensors

logger = logging.getLogger(__name__)

KINDS = ("diffgan", "basic", "two-stage")
GROUPS = ("generator", "discriminator", "basic")
CHECKPOINT_RE = re.compile(r"^ckpt_(\d+)\.dgtt$")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, value: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(value), np.zeros_like(value))


def adam_update(param: Tensor, grad: np.ndarray, state: AdamState, lr: float,
                betas=(0.9, 0.999), eps: float = 1e-8) -> bool:
    """Bias-corrected Adam step on ``param.data``; returns False (no change) for a non-finite grad."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != param.shape or state.m.shape != param.shape:
        raise ShapeError("adam_update", param.shape, grad.shape)
    if not np.all(np.isfinite(grad)):
        return False
    b1, b2 = betas
    state.step += 1
    state.m = b1 * state.m + (1.0 - b1) * grad
    state.v = b2 * state.v + (1.0 - b2) * grad * grad
    m_hat = state.m / (1.0 - b1**state.step)
    v_hat = state.v / (1.0 - b2**state.step)
    param.data = param.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    return True


@dataclass
class ParameterStore:
    """theta / phi / psi parameters plus per-tensor Adam state."""

    cfg: ModelConfig
    kind: str
    generator: Optional[AcousticGenerator] = None
    discriminator: Optional[JCUDiscriminator] = None
    basic: Optional[BasicAcousticModel] = None
    step: int = 0
    adam: Dict[str, Dict[str, AdamState]] = field(default_factory=dict)

    @classmethod
    def create(cls, cfg: ModelConfig, seed: int = 0, kind: str = "diffgan") -> "ParameterStore":
        if kind not in KINDS:
            raise ValueError(f"unknown store kind {kind!r}")
        rng = np.random.default_rng(seed)
        if kind == "basic":
            return cls(cfg, kind, basic=BasicAcousticModel(cfg, rng))
        cfg = cfg.replace(two_stage=(kind == "two-stage"))
        generator = AcousticGenerator(cfg, rng)
        store = cls(cfg, kind, generator=generator, discriminator=JCUDiscriminator(cfg, rng))
        if kind == "two-stage":
            generator.basic.set_requires_grad(False)
        return store

    def module(self, group: str) -> Module:
        mod = getattr(self, group, None) if group in GROUPS else None
        if mod is None:
            raise KeyError(f"store of kind {self.kind!r} has no {group} parameters")
        return mod

    def groups(self) -> List[str]:
        return [g for g in GROUPS if getattr(self, g) is not None]

    def frozen_names(self, group: str = "generator") -> List[str]:
        if group != "generator" or self.generator is None:
            return []
        prefixes = self.generator.frozen_prefixes
        return [n for n in self.generator.named_parameters() if n.startswith(prefixes)] if prefixes else []

    def trainable(self, group: str) -> Dict[str, Tensor]:
        frozen = set(self.frozen_names(group))
        return {n: p for n, p in self.module(group).named_parameters().items() if n not in frozen}

    def adam_state(self, group: str) -> Dict[str, AdamState]:
        states = self.adam.setdefault(group, {})
        for name, p in self.trainable(group).items():
            if name not in states:
                states[name] = AdamState.zeros_like(p.data)
        return states

    def apply_gradients(self, group: str, grads: Dict[str, np.ndarray], lr: float, betas, eps: float) -> bool:
        """One Adam update of every trainable tensor in ``group``; nothing moves if any grad is non-finite."""
        params = self.trainable(group)
        if any(not np.all(np.isfinite(grads[n])) for n in params):
            logger.warning("Non-finite %s gradient at step %d; update skipped", group, self.step)
            return False
        states = self.adam_state(group)
        for name, p in params.items():
            adam_update(p, grads[name], states[name], lr, betas, eps)
        return True

    def frozen_digest(self) -> str:
        digest = hashlib.sha256()
        if self.generator is not None:
            params = self.generator.named_parameters()
            for name in self.frozen_names():
                digest.update(name.encode("utf-8"))
                digest.update(params[name].data.tobytes())
        return digest.hexdigest()

    # -- serialization ---------------------------------------------------
    def to_tensors(self) -> Dict[str, np.ndarray]:
        tensors: Dict[str, np.ndarray] = {}
        for group in self.groups():
            for name, value in self.module(group).state_arrays().items():
                tensors[f"{group}.{name}"] = value
        for group, states in self.adam.items():
            for name, st in states.items():
                tensors[f"adam.{group}.{name}.m"] = st.m
                tensors[f"adam.{group}.{name}.v"] = st.v
        return tensors

    def meta(self) -> Dict[str, str]:
        meta = {"kind": self.kind, "step": str(self.step)}
        meta.update(self.cfg.to_meta())
        for group, states in self.adam.items():
            steps = {st.step for st in states.values()}
            meta[f"adam.{group}.step"] = str(max(steps) if steps else 0)
        return meta

    def save(self, path) -> Path:
        return write_tensors(path, self.to_tensors(), self.meta())

    @classmethod
    def from_file(cls, tf: TensorFile, path="<memory>") -> "ParameterStore":
        kind = tf.meta.get("kind")
        if kind not in KINDS:
            raise CheckpointError(f"{path}: missing or unknown checkpoint kind {kind!r}")
        try:
            cfg = ModelConfig.from_meta(tf.meta)
            step = int(tf.meta.get("step", "0"))
        except (ValueError, TypeError) as exc:
            raise CheckpointError(f"{path}: bad checkpoint metadata: {exc}") from exc
        store = cls.create(cfg, seed=0, kind=kind)
        store.step = step
        for group in store.groups():
            module = store.module(group)
            expected = module.named_parameters()
            missing = [n for n in expected if f"{group}.{n}" not in tf.tensors]
            if missing:
                raise CheckpointError(f"{path}: {group} tensors missing: {', '.join(missing[:5])}")
            try:
                module.load_arrays(tf.tensors, prefix=f"{group}.")
            except ShapeError as exc:
                raise CheckpointError(f"{path}: {exc}") from exc
            adam_step = int(tf.meta.get(f"adam.{group}.step", "0"))
            states = {}
            for name in store.trainable(group):
                m = tf.tensors.get(f"adam.{group}.{name}.m")
                v = tf.tensors.get(f"adam.{group}.{name}.v")
                if m is not None and v is not None:
                    states[name] = AdamState(m, v, adam_step)
            if states:
                store.adam[group] = states
        return store

    @classmethod
    def load(cls, path) -> "ParameterStore":
        store = cls.from_file(read_tensors(path), path)
        logger.info("Loaded %s checkpoint %s (step %d)", store.kind, path, store.step)
        return store


def checkpoint_path(directory, step: int) -> Path:
    return Path(directory) / f"ckpt_{step:06d}.dgtt"


def list_checkpoints(directory) -> List[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        return []
    found = [(int(m.group(1)), p) for p in directory.iterdir() if (m := CHECKPOINT_RE.match(p.name))]
    return [p for _, p in sorted(found)]


def latest_checkpoint(directory) -> Optional[Path]:
    found = list_checkpoints(directory)
    return found[-1] if found else None


__all__ = [
    "KINDS",
    "GROUPS",
    "AdamState",
    "adam_update",
    "ParameterStore",
    "checkpoint_path",
    "list_checkpoints",
    "latest_checkpoint",
]
