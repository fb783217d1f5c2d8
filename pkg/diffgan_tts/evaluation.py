"""Validation metrics, baselines and step-count/latency benchmarking."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .diffusion import DiffusionSchedule, diffuse_closed_form
from .inference import InferenceRequest, denoise_chain, shallow_one_step, shallow_step, spectral_centroid
from .metrics import mcd_dtw, rmse_dtw, ssim
from .models import Utterance
from .store import ParameterStore
from .tensor import no_grad
from .training import sample_steps

logger = logging.getLogger(__name__)


@dataclass
class MetricReport:
    ssim: float
    mcd24: float
    rmse: float
    decoder_passes: int
    wall_time_per_frame: float

    def __post_init__(self) -> None:
        if not -1.0 - 1e-9 <= self.ssim <= 1.0 + 1e-9:
            raise ValueError(f"ssim out of range: {self.ssim}")
        if self.mcd24 < 0:
            raise ValueError(f"mcd24 must be >= 0, got {self.mcd24}")


def teacher_forced_prediction(store: ParameterStore, utt: Utterance, schedule: DiffusionSchedule,
                              rng: np.random.Generator, t: Optional[int] = None) -> np.ndarray:
    """x'_0 with ground-truth durations/pitch/energy.

    basic: the coarse mel. two-stage: one shallow step from the coarse mel.
    diffgan: one decoder pass on x_t diffused from x_0 at ``t`` (uniform when None).
    """
    with no_grad():
        if store.kind == "basic":
            return store.basic(utt.tokens, utt.speaker, utt.targets).mel.data
        gen = store.generator
        cond = gen.condition(utt)
        if store.kind == "two-stage":
            return shallow_step(gen, cond, utt.speaker, schedule, rng)
        t = int(sample_steps(rng, schedule.T, 1)[0]) if t is None else t
        x_t = diffuse_closed_form(utt.mel, t, schedule, rng.standard_normal(utt.mel.shape))
        z = rng.standard_normal(gen.cfg.latent_dim) if gen.cfg.latent_dim else None
        return gen.denoise(x_t, cond, t, utt.speaker, z).data


def evaluate_teacher_forced(store: ParameterStore, utts: Sequence[Utterance], schedule: Optional[DiffusionSchedule] = None,
                            seed: int = 0, t: Optional[int] = None) -> MetricReport:
    """Mean SSIM / MCD / centroid RMSE of teacher-forced x'_0 against x_0."""
    if not utts:
        raise ValueError("evaluate_teacher_forced: no utterances")
    schedule = schedule if schedule is not None else store.cfg.schedule()
    rng = np.random.default_rng(seed)
    scores = {"ssim": [], "mcd": [], "rmse": []}
    start = time.perf_counter()
    frames = 0
    for utt in utts:
        pred = teacher_forced_prediction(store, utt, schedule, rng, t)
        frames += pred.shape[0]
        scores["ssim"].append(ssim(pred, utt.mel))
        scores["mcd"].append(mcd_dtw(pred, utt.mel))
        scores["rmse"].append(rmse_dtw(spectral_centroid(pred), spectral_centroid(utt.mel)))
    elapsed = time.perf_counter() - start
    passes = 0 if store.kind == "basic" else 1
    return MetricReport(
        float(np.mean(scores["ssim"])),
        float(np.mean(scores["mcd"])),
        float(np.mean(scores["rmse"])),
        passes,
        elapsed / max(frames, 1),
    )


def speaker_means(utts: Sequence[Utterance]) -> Dict[int, np.ndarray]:
    sums: Dict[int, np.ndarray] = {}
    counts: Dict[int, int] = {}
    for u in utts:
        sums[u.speaker] = sums.get(u.speaker, 0.0) + u.mel.sum(axis=0)
        counts[u.speaker] = counts.get(u.speaker, 0) + u.frames
    return {s: sums[s] / counts[s] for s in sums}


def speaker_mean_baseline(train: Sequence[Utterance], valid: Sequence[Utterance]) -> float:
    """Mean SSIM of a constant per-speaker mean frame against each validation mel."""
    means = speaker_means(train)
    overall = np.mean(np.concatenate([u.mel for u in train]), axis=0)
    values = []
    for u in valid:
        frame = means.get(u.speaker, overall)
        values.append(ssim(np.broadcast_to(frame, u.mel.shape), u.mel))
    return float(np.mean(values))


@dataclass
class BenchRow:
    mode: str
    tokens: int
    frames: int
    decoder_passes: int
    basic_passes: int
    seconds: float
    seconds_per_frame: float


BENCH_MODES = ("T=1", "T=2", "T=4", "two-stage")


def bench(stores: Mapping[str, ParameterStore], token_lengths: Sequence[int], speaker: int = 0,
          seed: int = 0, repeats: int = 1, modes: Sequence[str] = BENCH_MODES) -> List[BenchRow]:
    """Time inference per mode and token length.

    ``stores`` maps "chain" to a single-stage checkpoint (run with T
    overridden to 1, 2, 4) and "two-stage" to a two-stage checkpoint.
    Modes without a matching checkpoint are skipped with a warning.
    """
    rows: List[BenchRow] = []
    for mode in modes:
        two_stage = mode == "two-stage"
        store = stores.get("two-stage" if two_stage else "chain")
        if store is None:
            logger.warning("bench: no checkpoint for mode %s, skipped", mode)
            continue
        n_tokens = store.cfg.n_tokens
        for length in token_lengths:
            tokens = np.arange(length) % n_tokens
            T = None if two_stage else int(mode.split("=")[1])
            req = InferenceRequest(tokens, speaker, T_override=T, seed=seed)
            best = np.inf
            result = None
            for _ in range(repeats):
                start = time.perf_counter()
                result = shallow_one_step(req, store) if two_stage else denoise_chain(req, store)
                best = min(best, time.perf_counter() - start)
            frames = result.mel.shape[0]
            rows.append(BenchRow(mode, int(length), frames, result.decoder_passes, result.basic_passes,
                                 best, best / max(frames, 1)))
            logger.debug("bench %s len=%d: %d frames, %.4fs", mode, length, frames, best)
    return rows


def write_bench_csv(path, rows: Sequence[BenchRow]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = list(BenchRow.__dataclass_fields__)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(asdict(row))
    return path


@dataclass
class LatencyFit:
    intercept: float
    slope: float
    quadratic: float
    quadratic_stderr: float

    @property
    def linear_ok(self) -> bool:
        """Positive slope and a quadratic term within 2 standard errors of zero."""
        return self.slope > 0 and abs(self.quadratic) <= 2.0 * self.quadratic_stderr


def fit_latency_curve(lengths: Sequence[float], seconds: Sequence[float]) -> LatencyFit:
    """Least-squares fit of seconds = a + b n + c n^2 with the standard error of c."""
    n = np.asarray(lengths, dtype=np.float64)
    y = np.asarray(seconds, dtype=np.float64)
    if n.shape != y.shape or n.size < 4:
        raise ValueError("fit_latency_curve needs at least 4 (length, time) pairs")
    design = np.stack([np.ones_like(n), n, n * n], axis=1)
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    sigma2 = float(resid @ resid) / (n.size - 3)
    cov = sigma2 * np.linalg.pinv(design.T @ design)
    return LatencyFit(float(coef[0]), float(coef[1]), float(coef[2]), float(np.sqrt(max(cov[2, 2], 0.0))))


__all__ = [
    "MetricReport",
    "teacher_forced_prediction",
    "evaluate_teacher_forced",
    "speaker_means",
    "speaker_mean_baseline",
    "BenchRow",
    "BENCH_MODES",
    "bench",
    "write_bench_csv",
    "LatencyFit",
    "fit_latency_curve",
]
