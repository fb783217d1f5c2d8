"""Sampling: iterative denoising, one-step shallow inference, variation runs."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .diffusion import DiffusionSchedule, diffuse_closed_form, make_variance_schedule, posterior_params, posterior_sample
from .errors import CheckpointError, ScheduleError
from .models import AcousticGenerator, Conditioning
from .store import ParameterStore
from .tensor import no_grad
from .tensorio import write_tensors

logger = logging.getLogger(__name__)


@dataclass
class InferenceRequest:
    tokens: Sequence[int]
    speaker: int
    T_override: Optional[int] = None
    seed: int = 0
    n_samples: int = 1

    def __post_init__(self) -> None:
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        if self.n_samples < 1:
            raise ValueError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.T_override is not None and (int(self.T_override) != self.T_override or self.T_override < 1):
            raise ScheduleError(f"T override must be a positive integer, got {self.T_override!r}")


@dataclass
class InferenceResult:
    mel: np.ndarray
    durations: np.ndarray
    trace: List[Tuple[int, np.ndarray]] = field(default_factory=list)  # (t, x_t) for t = T..1
    decoder_passes: int = 0
    basic_passes: int = 0


def _generator(source) -> AcousticGenerator:
    if isinstance(source, ParameterStore):
        if source.generator is None:
            raise CheckpointError(f"a {source.kind} checkpoint has no diffusion generator")
        return source.generator
    return source


def resolve_schedule(gen: AcousticGenerator, req: InferenceRequest, schedule: Optional[DiffusionSchedule]) -> DiffusionSchedule:
    """The schedule to sample with: ``schedule`` or the checkpoint's, re-spaced to ``req.T_override``."""
    base = schedule if schedule is not None else gen.cfg.schedule()
    if req.T_override is None or req.T_override == base.T:
        return base
    return make_variance_schedule(req.T_override, base.beta_min, base.beta_max)


def run_chain(gen: AcousticGenerator, cond: Conditioning, speaker: int, schedule: DiffusionSchedule,
              rng: np.random.Generator, keep_trace: bool = False) -> Tuple[np.ndarray, List[Tuple[int, np.ndarray]], int]:
    """x_T ~ N(0, I), then T decoder passes through the posterior down to x_0.

    Returns (x_0, trace, decoder passes).
    """
    shape = (cond.frames, gen.cfg.mel_bins)
    z = rng.standard_normal(gen.cfg.latent_dim) if gen.cfg.latent_dim else None
    x = rng.standard_normal(shape)
    trace: List[Tuple[int, np.ndarray]] = []
    passes = 0
    for t in range(schedule.T, 0, -1):
        if keep_trace:
            trace.append((t, x.copy()))
        x0_pred = gen.denoise(x, cond, t, speaker, z).data
        passes += 1
        x = np.asarray(posterior_sample(posterior_params(x0_pred, x, t, schedule), rng.standard_normal(shape)))
    return x, trace, passes


def denoise_chain(req: InferenceRequest, generator, schedule: Optional[DiffusionSchedule] = None,
                  keep_trace: bool = False) -> InferenceResult:
    gen = _generator(generator)
    schedule = resolve_schedule(gen, req, schedule)
    rng = np.random.default_rng(req.seed)
    with no_grad():
        cond = gen.condition(req.tokens, req.speaker)
        mel, trace, passes = run_chain(gen, cond, req.speaker, schedule, rng, keep_trace)
    logger.debug("denoise_chain: T=%d, %d frames, %d decoder passes", schedule.T, mel.shape[0], passes)
    return InferenceResult(mel, cond.variance.durations, trace, passes)


def shallow_step(gen: AcousticGenerator, cond: Conditioning, speaker: int, schedule: DiffusionSchedule,
                 rng: np.random.Generator) -> np.ndarray:
    """x_1 from the coarse mel by the closed form, then one decoder pass at t = 1."""
    coarse = cond.coarse.data
    z = rng.standard_normal(gen.cfg.latent_dim) if gen.cfg.latent_dim else None
    x1 = diffuse_closed_form(coarse, 1, schedule, rng.standard_normal(coarse.shape))
    return gen.denoise(x1, cond, 1, speaker, z).data


def shallow_one_step(req: InferenceRequest, generator, schedule: Optional[DiffusionSchedule] = None) -> InferenceResult:
    """Basic model once, then a single decoder pass at t = 1 on the trained schedule."""
    gen = _generator(generator)
    if not gen.cfg.two_stage:
        raise CheckpointError("shallow one-step inference needs a two-stage checkpoint (no basic model weights)")
    if req.T_override is not None and req.T_override != gen.cfg.T:
        logger.warning("T override %d ignored: two-stage sampling uses the trained T=%d", req.T_override, gen.cfg.T)
    schedule = schedule if schedule is not None else gen.cfg.schedule()
    rng = np.random.default_rng(req.seed)
    with no_grad():
        cond = gen.condition(req.tokens, req.speaker)
        mel = shallow_step(gen, cond, req.speaker, schedule, rng)
    return InferenceResult(mel, cond.variance.durations, [], 1, int(cond.coarse is not None))


def frame_energy(mel: np.ndarray) -> np.ndarray:
    return np.asarray(mel).mean(axis=1)


def spectral_centroid(mel: np.ndarray) -> np.ndarray:
    """Amplitude-weighted mean mel-bin index per frame (pitch proxy)."""
    weights = np.exp(np.asarray(mel))
    bins = np.arange(weights.shape[1])
    return (weights * bins).sum(axis=1) / weights.sum(axis=1)


@dataclass
class VariationResult:
    seeds: List[int]
    mels: List[np.ndarray]
    energy: List[np.ndarray]
    centroid: List[np.ndarray]

    def contour_variance(self) -> float:
        """Mean over frames of the across-sample variance of the centroid contour."""
        frames = min(c.shape[0] for c in self.centroid)
        stack = np.stack([c[:frames] for c in self.centroid])
        return float(stack.var(axis=0).mean())

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["sample", "seed", "frame", "energy", "centroid"])
            for i, (seed, en, ce) in enumerate(zip(self.seeds, self.energy, self.centroid)):
                for f in range(en.shape[0]):
                    writer.writerow([i, seed, f, repr(float(en[f])), repr(float(ce[f]))])
        return path


def variation_analysis(req: InferenceRequest, generator, schedule: Optional[DiffusionSchedule] = None,
                       seeds: Optional[Sequence[int]] = None, mode: str = "chain") -> VariationResult:
    """``n_samples`` runs with seeds ``seed, seed+1, ...`` (or explicit ``seeds``)."""
    seeds = list(seeds) if seeds is not None else [req.seed + i for i in range(req.n_samples)]
    if len(seeds) < 2:
        raise ValueError("variation_analysis needs at least 2 samples")
    run = shallow_one_step if mode == "two-stage" else denoise_chain
    mels = []
    for seed in seeds:
        sample = InferenceRequest(req.tokens, req.speaker, req.T_override, seed)
        mels.append(run(sample, generator, schedule).mel)
    return VariationResult(seeds, mels, [frame_energy(m) for m in mels], [spectral_centroid(m) for m in mels])


def write_pgm(path, mel: np.ndarray) -> Path:
    """8-bit binary graymap: one row per mel bin, one column per frame, min-max scaled."""
    mel = np.asarray(mel, dtype=np.float64)
    image = mel.T
    lo, hi = float(image.min()) if image.size else 0.0, float(image.max()) if image.size else 0.0
    scaled = np.zeros_like(image) if hi == lo else (image - lo) / (hi - lo) * 255.0
    pixels = np.rint(scaled).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii")
    path.write_bytes(header + pixels.tobytes())
    return path


def save_mel(path, result: InferenceResult, req: InferenceRequest, mode: str) -> Path:
    meta = {"mode": mode, "seed": req.seed, "speaker": req.speaker, "decoder_passes": result.decoder_passes}
    return write_tensors(path, {"mel": result.mel, "durations": result.durations}, meta)


__all__ = [
    "InferenceRequest",
    "InferenceResult",
    "resolve_schedule",
    "run_chain",
    "denoise_chain",
    "shallow_step",
    "shallow_one_step",
    "frame_energy",
    "spectral_centroid",
    "VariationResult",
    "variation_analysis",
    "write_pgm",
    "save_mel",
]
