"""Acoustic models: the shared front end, the basic acoustic model and the
diffusion generator (single-stage or two-stage)."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import tensor as tt
from .blocks import FFTBlock, VarianceAdaptor, VarianceOutput, VarianceTargets, WaveNetDecoder
from .config import ModelConfig
from .diffusion import DiffusionSchedule, posterior_params, posterior_sample
from .errors import ShapeError
from .layers import Embedding, Linear, Module, ModuleList, sinusoidal_position_encoding
from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class Utterance:
    uid: str
    tokens: np.ndarray  # int token ids, length n
    speaker: int
    mel: np.ndarray  # [frames x mel_bins]
    durations: np.ndarray  # int, length n
    pitch: np.ndarray
    energy: np.ndarray

    def __post_init__(self) -> None:
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        self.durations = np.asarray(self.durations, dtype=np.int64)
        self.mel = np.asarray(self.mel, dtype=np.float64)
        self.pitch = np.asarray(self.pitch, dtype=np.float64)
        self.energy = np.asarray(self.energy, dtype=np.float64)
        n = self.tokens.shape[0]
        if not (self.durations.shape[0] == self.pitch.shape[0] == self.energy.shape[0] == n):
            raise ValueError(
                f"utterance {self.uid}: tokens/durations/pitch/energy lengths differ "
                f"({n}, {self.durations.shape[0]}, {self.pitch.shape[0]}, {self.energy.shape[0]})"
            )
        if self.mel.ndim != 2 or int(self.durations.sum()) != self.mel.shape[0]:
            raise ValueError(
                f"utterance {self.uid}: sum of durations {int(self.durations.sum())} "
                f"!= mel frames {self.mel.shape[0] if self.mel.ndim == 2 else self.mel.shape}"
            )

    @property
    def frames(self) -> int:
        return self.mel.shape[0]

    @property
    def targets(self) -> VarianceTargets:
        return VarianceTargets(self.durations, self.pitch, self.energy)


@dataclass
class GeneratorOutput:
    x0_pred: Tensor
    d_hat: Tensor  # log-durations
    p_hat: Tensor
    e_hat: Tensor
    x_prev_pred: Optional[Tensor] = None


@dataclass
class Conditioning:
    """Per-utterance decoder conditioning, computed once per request."""

    variance: VarianceOutput
    coarse: Optional[Tensor] = None

    @property
    def frames(self) -> int:
        return self.variance.frames.shape[0]


class FrontEnd(Module):
    """Token embedding, FFT encoder, speaker embedding and variance adaptor."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator) -> None:
        super().__init__()
        self.cfg = cfg
        self.embedding = Embedding(cfg.n_tokens, cfg.hidden, rng)
        self.encoder = ModuleList(
            [FFTBlock(cfg.hidden, cfg.n_heads, cfg.conv_kernel, cfg.conv_filter, rng) for _ in range(cfg.n_fft_blocks)]
        )
        self.speaker = Embedding(cfg.n_speakers, cfg.hidden, rng)
        self.adaptor = VarianceAdaptor(cfg.hidden, cfg.variance_kernel, rng)

    def encode(self, tokens, speaker: int) -> Tensor:
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim != 1 or tokens.size == 0:
            raise ShapeError("encode", tokens.shape)
        if tokens.min() < 0 or tokens.max() >= self.cfg.n_tokens:
            raise ValueError(f"token ids must lie in [0, {self.cfg.n_tokens}), got {tokens.min()}..{tokens.max()}")
        if not 0 <= speaker < self.cfg.n_speakers:
            raise ValueError(f"speaker id {speaker} outside [0, {self.cfg.n_speakers})")
        h = self.embedding(tokens) + sinusoidal_position_encoding(tokens.shape[0], self.cfg.hidden)
        for block in self.encoder:
            h = block(h)
        return h + self.speaker([speaker])

    def __call__(self, tokens, speaker: int, targets: Optional[VarianceTargets] = None,
                 training: Optional[bool] = None) -> VarianceOutput:
        return self.adaptor(self.encode(tokens, speaker), targets, training)


class MelDecoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator) -> None:
        super().__init__()
        self.blocks = ModuleList(
            [FFTBlock(cfg.hidden, cfg.n_heads, cfg.conv_kernel, cfg.conv_filter, rng) for _ in range(cfg.n_fft_blocks)]
        )
        self.proj = Linear(cfg.hidden, cfg.mel_bins, rng)

    def __call__(self, frames: Tensor) -> Tensor:
        h = frames
        for block in self.blocks:
            h = block(h)
        return self.proj(h)


@dataclass
class BasicOutput:
    mel: Tensor  # coarse x_hat_0
    variance: VarianceOutput


class BasicAcousticModel(Module):
    """FastSpeech2-style model emitting a coarse mel directly."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator) -> None:
        super().__init__()
        self.frontend = FrontEnd(cfg, rng)
        self.mel_decoder = MelDecoder(cfg, rng)

    def __call__(self, tokens, speaker: int, targets: Optional[VarianceTargets] = None,
                 training: Optional[bool] = None) -> BasicOutput:
        variance = self.frontend(tokens, speaker, targets, training)
        return BasicOutput(self.mel_decoder(variance.frames), variance)


class AcousticGenerator(Module):
    """G_theta: predicts x'_0 from (x_t, t, text, speaker).

    In two-stage mode the basic model lives under ``basic.`` and is frozen;
    its coarse mel conditions the diffusion decoder.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator) -> None:
        super().__init__()
        self.cfg = cfg
        if cfg.two_stage:
            self.basic = BasicAcousticModel(cfg, rng)
        else:
            self.frontend = FrontEnd(cfg, rng)
        self.decoder = WaveNetDecoder(cfg, rng)

    @property
    def frozen_prefixes(self) -> Tuple[str, ...]:
        return ("basic.",) if self.cfg.two_stage else ()

    def load_basic(self, basic: BasicAcousticModel) -> int:
        """Copy a trained basic model into the frozen two-stage slot."""
        if not self.cfg.two_stage:
            raise ValueError("load_basic: generator is not two-stage")
        loaded = self.basic.load_arrays(basic.state_arrays())
        self.basic.set_requires_grad(False)
        logger.info("Initialized %d frozen tensors from the basic acoustic model", loaded)
        return loaded

    def condition(self, utt_or_tokens, speaker: Optional[int] = None,
                  targets: Optional[VarianceTargets] = None) -> Conditioning:
        """Run the text side once. Passing an Utterance teacher-forces its targets."""
        if isinstance(utt_or_tokens, Utterance):
            tokens, speaker, targets = utt_or_tokens.tokens, utt_or_tokens.speaker, utt_or_tokens.targets
        else:
            tokens = utt_or_tokens
        if self.cfg.two_stage:
            out = self.basic(tokens, speaker, targets)
            return Conditioning(out.variance, out.mel)
        return Conditioning(self.frontend(tokens, speaker, targets))

    def denoise(self, x_t, cond: Conditioning, t: int, speaker: int, z=None) -> Tensor:
        return self.decoder(x_t, cond.variance.frames, t, speaker, coarse=cond.coarse, z=z)

    def __call__(self, utt: Utterance, x_t, t: int, schedule: DiffusionSchedule,
                 noise: np.ndarray, z=None) -> GeneratorOutput:
        """Teacher-forced forward with the posterior sample x'_{t-1}."""
        cond = self.condition(utt)
        x0_pred = self.denoise(x_t, cond, t, utt.speaker, z)
        x_prev = posterior_sample(posterior_params(x0_pred, tt.as_tensor(x_t), t, schedule), Tensor(noise))
        v = cond.variance
        return GeneratorOutput(x0_pred, v.log_d_hat, v.p_hat, v.e_hat, x_prev)


__all__ = [
    "Utterance",
    "GeneratorOutput",
    "Conditioning",
    "FrontEnd",
    "MelDecoder",
    "BasicOutput",
    "BasicAcousticModel",
    "AcousticGenerator",
]
