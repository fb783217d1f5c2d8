"""Network blocks of the acoustic generator and the JCU discriminator.

All sequences are 2-D ``[positions x channels]`` tensors; one utterance
is processed at a time.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import tensor as tt
from .config import ModelConfig
from .errors import ShapeError
from .layers import Conv1d, Embedding, LayerNorm, Linear, Module, ModuleList, sinusoidal_step_embedding
from .tensor import Tensor

logger = logging.getLogger(__name__)

LEAKY_SLOPE = 0.2
MAX_LOG_DURATION = math.log(1000.0)  # frames per token


class FFTBlock(Module):
    """Self-attention + conv feed-forward, each followed by residual add and layer norm."""

    def __init__(self, hidden: int, n_heads: int, kernel: int, filter_size: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.hidden = hidden
        self.n_heads = n_heads
        self.query = Linear(hidden, hidden, rng)
        self.key = Linear(hidden, hidden, rng)
        self.value = Linear(hidden, hidden, rng)
        self.out = Linear(hidden, hidden, rng)
        self.attn_norm = LayerNorm(hidden)
        self.conv1 = Conv1d(hidden, filter_size, kernel, rng)
        self.conv2 = Conv1d(filter_size, hidden, 1, rng)
        self.ff_norm = LayerNorm(hidden)

    def _heads(self, x: Tensor, n: int) -> Tensor:
        d_head = self.hidden // self.n_heads
        return x.reshape(n, self.n_heads, d_head).transpose(1, 0, 2)

    def attention(self, x: Tensor) -> Tensor:
        n = x.shape[0]
        d_head = self.hidden // self.n_heads
        q = self._heads(self.query(x), n)
        k = self._heads(self.key(x), n)
        v = self._heads(self.value(x), n)
        scores = tt.matmul(q, k.transpose(0, 2, 1)) * (1.0 / math.sqrt(d_head))
        context = tt.matmul(tt.softmax(scores, axis=-1), v)
        return self.out(context.transpose(1, 0, 2).reshape(n, self.hidden))

    def __call__(self, x) -> Tensor:
        x = tt.as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.hidden:
            raise ShapeError("fft_block", x.shape, (None, self.hidden))
        h = self.attn_norm(x + self.attention(x))
        ff = self.conv2(tt.relu(self.conv1(h)))
        return self.ff_norm(h + ff)


def length_regulate(h: Tensor, durations) -> Tensor:
    """Repeat row i of ``h`` durations[i] times."""
    d = np.asarray(durations)
    if d.ndim != 1 or d.shape[0] != h.shape[0]:
        raise ShapeError("length_regulate", h.shape, d.shape)
    if np.any(d < 0):
        raise ValueError(f"length_regulate: negative durations {d[d < 0].tolist()}")
    rows = np.repeat(np.arange(d.shape[0]), d.astype(np.int64))
    if rows.size == 0:
        logger.warning("length_regulate: all durations are zero, output has no frames")
    return tt.gather_rows(h, rows)


def inference_durations(log_durations: Tensor) -> np.ndarray:
    """max(1, round(exp(d_hat))) per token, d_hat clipped to MAX_LOG_DURATION."""
    log_d = np.nan_to_num(log_durations.data, nan=0.0, posinf=MAX_LOG_DURATION, neginf=0.0)
    return np.maximum(1, np.rint(np.exp(np.minimum(log_d, MAX_LOG_DURATION)))).astype(np.int64)


class VariancePredictor(Module):
    """conv-ReLU-LN x2 then a scalar projection per token."""

    def __init__(self, hidden: int, kernel: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.conv1 = Conv1d(hidden, hidden, kernel, rng)
        self.norm1 = LayerNorm(hidden)
        self.conv2 = Conv1d(hidden, hidden, kernel, rng)
        self.norm2 = LayerNorm(hidden)
        self.proj = Linear(hidden, 1, rng)

    def __call__(self, h: Tensor) -> Tensor:
        x = self.norm1(tt.relu(self.conv1(h)))
        x = self.norm2(tt.relu(self.conv2(x)))
        return self.proj(x).reshape(h.shape[0])


@dataclass
class VarianceTargets:
    durations: np.ndarray
    pitch: np.ndarray
    energy: np.ndarray


@dataclass
class VarianceOutput:
    frames: Tensor  # length-regulated hidden states
    log_d_hat: Tensor
    p_hat: Tensor
    e_hat: Tensor
    durations: np.ndarray  # durations used for length regulation


class VarianceAdaptor(Module):
    def __init__(self, hidden: int, kernel: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.duration = VariancePredictor(hidden, kernel, rng)
        self.pitch = VariancePredictor(hidden, kernel, rng)
        self.energy = VariancePredictor(hidden, kernel, rng)
        self.pitch_proj = Linear(1, hidden, rng)
        self.energy_proj = Linear(1, hidden, rng)

    def __call__(
        self,
        h: Tensor,
        targets: Optional[VarianceTargets] = None,
        training: Optional[bool] = None,
    ) -> VarianceOutput:
        training = targets is not None if training is None else training
        if training and targets is None:
            raise ValueError("variance adaptor: ground-truth duration/pitch/energy required in training mode")
        n = h.shape[0]
        log_d_hat = self.duration(h)
        p_hat = self.pitch(h)
        pitch_in = Tensor(targets.pitch) if training else p_hat
        h = h + self.pitch_proj(tt.reshape(pitch_in, (n, 1)))
        e_hat = self.energy(h)
        energy_in = Tensor(targets.energy) if training else e_hat
        h = h + self.energy_proj(tt.reshape(energy_in, (n, 1)))
        durations = np.asarray(targets.durations, dtype=np.int64) if training else inference_durations(log_d_hat)
        return VarianceOutput(length_regulate(h, durations), log_d_hat, p_hat, e_hat, durations)


def adaln_modulate(h, gamma, beta_shift) -> Tensor:
    """Mean-variance normalize each frame of ``h`` then scale by gamma and shift by beta_shift."""
    h = tt.as_tensor(h)
    gamma, beta_shift = tt.as_tensor(gamma), tt.as_tensor(beta_shift)
    for mod in (gamma, beta_shift):
        if mod.shape[-1] != h.shape[-1]:
            raise ShapeError("adaln_modulate", h.shape, mod.shape)
    return tt.layer_norm(h) * gamma + beta_shift


@dataclass
class LatentStyle:
    z: np.ndarray
    w: Tensor
    gammas: List[Tensor]
    beta_shifts: List[Tensor]


class ResidualBlock(Module):
    """Non-causal WaveNet block with gated tanh/sigmoid activation."""

    def __init__(self, channels: int, cond_dim: int, rng: np.random.Generator, latent_dim: int = 0) -> None:
        super().__init__()
        self.channels = channels
        self.step_proj = Linear(channels, channels, rng)
        self.dilated_conv = Conv1d(channels, 2 * channels, 3, rng, dilation=1)
        self.cond_proj = Conv1d(cond_dim, 2 * channels, 1, rng)
        self.out_proj = Conv1d(channels, 2 * channels, 1, rng)
        if latent_dim:
            self.style = Linear(latent_dim, 2 * channels, rng)

    def modulation(self, w: Tensor):
        gb = self.style(w)
        c = self.channels
        return 1.0 + gb[:, :c], gb[:, c:]

    def __call__(self, x: Tensor, cond: Tensor, step: Tensor, modulation=None):
        c = self.channels
        y = x + self.step_proj(step)
        y = self.dilated_conv(y) + self.cond_proj(cond)
        gated = tt.tanh(y[:, :c]) * tt.sigmoid(y[:, c:])
        y = self.out_proj(gated)
        residual = (x + y[:, :c]) * (1.0 / math.sqrt(2.0))
        if modulation is not None:
            residual = adaln_modulate(residual, *modulation)
        return residual, y[:, c:]


class WaveNetDecoder(Module):
    """Diffusion decoder f(x_t, t | cond, speaker[, coarse mel][, z]) -> x'_0."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator) -> None:
        super().__init__()
        c = cfg.wavenet_hidden
        self.channels = c
        self.mel_bins = cfg.mel_bins
        self.latent_dim = cfg.latent_dim
        self.input_proj = Conv1d(cfg.mel_bins, c, 1, rng)
        self.step_fc1 = Linear(c, 4 * c, rng)
        self.step_fc2 = Linear(4 * c, c, rng)
        self.speaker = Embedding(cfg.n_speakers, cfg.hidden, rng)
        if cfg.two_stage:
            self.coarse_proj = Conv1d(cfg.mel_bins, c, 1, rng)
        if cfg.latent_dim:
            self.mapping = Linear(cfg.latent_dim, cfg.latent_dim, rng)
        self.blocks = ModuleList(
            [ResidualBlock(c, cfg.hidden, rng, cfg.latent_dim) for _ in range(cfg.n_wavenet_blocks)]
        )
        self.skip_proj = Conv1d(c, c, 1, rng)
        self.output_proj = Conv1d(c, cfg.mel_bins, 1, rng)

    def step_embedding(self, t: int) -> Tensor:
        e = Tensor(sinusoidal_step_embedding(t, self.channels).reshape(1, self.channels))
        return self.step_fc2(tt.swish(self.step_fc1(e)))

    def latent_style(self, z: np.ndarray) -> LatentStyle:
        w = self.mapping(Tensor(np.asarray(z, dtype=np.float64).reshape(1, self.latent_dim)))
        mods = [block.modulation(w) for block in self.blocks]
        return LatentStyle(z=np.asarray(z), w=w, gammas=[g for g, _ in mods], beta_shifts=[b for _, b in mods])

    def __call__(self, x_t, cond: Tensor, t: int, speaker: int, coarse=None, z=None) -> Tensor:
        x_t = tt.as_tensor(x_t)
        if x_t.ndim != 2 or x_t.shape[0] != cond.shape[0] or x_t.shape[1] != self.mel_bins:
            raise ShapeError("wavenet_decoder", x_t.shape, cond.shape)
        x = tt.relu(self.input_proj(x_t))
        if coarse is not None:
            if not hasattr(self, "coarse_proj"):
                raise ValueError("wavenet_decoder: coarse-mel conditioning needs a two-stage decoder")
            x = x + self.coarse_proj(coarse)
        step = self.step_embedding(t)
        cond = cond + self.speaker([speaker])
        style = None
        if self.latent_dim:
            if z is None:
                raise ValueError("wavenet_decoder: latent variant needs z")
            style = self.latent_style(z)
        skips = None
        for i, block in enumerate(self.blocks):
            modulation = (style.gammas[i], style.beta_shifts[i]) if style is not None else None
            x, skip = block(x, cond, step, modulation)
            skips = skip if skips is None else skips + skip
        skips = skips * (1.0 / math.sqrt(len(self.blocks)))
        return self.output_proj(tt.relu(self.skip_proj(skips)))


@dataclass
class DiscriminatorOutput:
    uncond_logits: Tensor
    cond_logits: Tensor
    features: List[Tensor]


class JCUDiscriminator(Module):
    """Joint conditional/unconditional discriminator over (x_{t-1}, x_t) pairs."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator) -> None:
        super().__init__()
        ch, ks, ss = cfg.disc_channels, cfg.disc_kernels, cfg.disc_strides
        self.step_dim = cfg.hidden
        c_in = 2 * cfg.mel_bins
        self.shared = ModuleList(
            [
                Conv1d(c_in, ch[0], ks[0], rng, stride=ss[0]),
                Conv1d(ch[0], ch[1], ks[1], rng, stride=ss[1]),
                Conv1d(ch[1], ch[2], ks[2], rng, stride=ss[2]),
            ]
        )
        self.uncond1 = Conv1d(ch[2], ch[3], ks[3], rng, stride=ss[3])
        self.uncond2 = Conv1d(ch[3], ch[4], ks[4], rng, stride=ss[4])
        self.cond1 = Conv1d(ch[2], ch[3], ks[3], rng, stride=ss[3])
        self.cond2 = Conv1d(ch[3], ch[4], ks[4], rng, stride=ss[4])
        self.step_proj = Linear(cfg.hidden, ch[3], rng)
        self.speaker = Embedding(cfg.n_speakers, ch[3], rng)

    @property
    def n_features(self) -> int:
        return len(self.shared) + 2

    def __call__(self, x_prev, x_t, t: int, speaker: int) -> DiscriminatorOutput:
        x_prev, x_t = tt.as_tensor(x_prev), tt.as_tensor(x_t)
        if x_prev.shape != x_t.shape:
            raise ShapeError("jcu_discriminator", x_prev.shape, x_t.shape)
        h = tt.concat([x_prev, x_t], axis=1)
        features: List[Tensor] = []
        for conv in self.shared:
            h = tt.leaky_relu(conv(h), LEAKY_SLOPE)
            features.append(h)
        u = tt.leaky_relu(self.uncond1(h), LEAKY_SLOPE)
        features.append(u)
        uncond = self.uncond2(u)
        step = Tensor(sinusoidal_step_embedding(t, self.step_dim).reshape(1, self.step_dim))
        aux = self.step_proj(step) + self.speaker([speaker])
        c = tt.leaky_relu(self.cond1(h) + aux, LEAKY_SLOPE)
        features.append(c)
        cond = self.cond2(c)
        return DiscriminatorOutput(uncond_logits=uncond, cond_logits=cond, features=features)


def conv_output_frames(frames: int, kernel: int, stride: int) -> int:
    """Frame count after one conv layer under this package's padding rule."""
    if stride == 1:
        return frames
    pad = (kernel - 1) // 2
    return (frames + 2 * pad - (kernel - 1) - 1) // stride + 1


__all__ = [
    "FFTBlock",
    "length_regulate",
    "inference_durations",
    "VariancePredictor",
    "VarianceTargets",
    "VarianceOutput",
    "VarianceAdaptor",
    "adaln_modulate",
    "LatentStyle",
    "ResidualBlock",
    "WaveNetDecoder",
    "DiscriminatorOutput",
    "JCUDiscriminator",
    "conv_output_frames",
]
