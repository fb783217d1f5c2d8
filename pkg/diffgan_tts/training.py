"""Training procedures.

``train_step`` performs one discriminator update followed by one
generator update. ``train_diffgan`` and ``train_two_stage`` loop it over
shuffled mini-batches; ``train_stage1_basic`` fits the basic acoustic
model used by the two-stage scheme.

Randomness for step ``k`` comes from ``default_rng([seed, k])`` so a
resumed run draws exactly what an uninterrupted run would have.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import tensor as tt
from .config import TrainConfig
from .diffusion import DiffusionSchedule, diffuse_closed_form, diffuse_stepwise
from .errors import CheckpointError
from .losses import (
    LossReport,
    LossWeights,
    feature_matching_loss,
    generator_total_loss,
    lsgan_d_loss,
    lsgan_g_adv_loss,
    reconstruction_loss,
)
from .models import GeneratorOutput, Utterance
from .store import ParameterStore, checkpoint_path, latest_checkpoint
from .tensor import Tensor

logger = logging.getLogger(__name__)

LR_GROUPS = ("generator", "discriminator", "basic")
LOG_NAME = "train_log.csv"


def lr_value(step: int, config: TrainConfig, which: str) -> float:
    if step < 1:
        raise ValueError(f"lr_value: step must be >= 1, got {step}")
    if which == "basic":
        warmup = config.stage1_warmup
        return config.model.hidden**-0.5 * min(step**-0.5, step * warmup**-1.5)
    if which == "generator":
        base = config.g_lr
    elif which == "discriminator":
        base = config.d_lr
    else:
        raise ValueError(f"lr_value: unknown parameter group {which!r} (choose from {LR_GROUPS})")
    return base * config.decay_rate ** (step // config.decay_interval)


def loss_weights(config: TrainConfig) -> LossWeights:
    return LossWeights(config.lambda_d, config.lambda_p, config.lambda_e, config.use_mel_loss, config.use_fm_loss)


def sample_steps(rng: np.random.Generator, T: int, n: int) -> np.ndarray:
    """Diffusion steps drawn uniformly from {1..T}."""
    return rng.integers(1, T + 1, size=n)


def step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, step])


def batch_indices(n_items: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Indices of the mini-batch used at (0-based) ``step``; each epoch is a fresh permutation."""
    per_epoch = math.ceil(n_items / batch_size)
    epoch, j = divmod(step, per_epoch)
    order = np.random.default_rng([seed, epoch, 1]).permutation(n_items)
    return order[j * batch_size : (j + 1) * batch_size]


@dataclass
class TrainItem:
    utt: Utterance
    t: int
    x_prev: np.ndarray
    x_t: np.ndarray
    post_noise: np.ndarray
    z: Optional[np.ndarray]
    out: Optional[GeneratorOutput] = None


def _draw_items(batch: Sequence[Utterance], schedule: DiffusionSchedule, rng: np.random.Generator,
                latent_dim: int) -> List[TrainItem]:
    items = []
    for utt, t in zip(batch, sample_steps(rng, schedule.T, len(batch))):
        t = int(t)
        shape = utt.mel.shape
        x_prev = diffuse_closed_form(utt.mel, t - 1, schedule, rng.standard_normal(shape))
        x_t = diffuse_stepwise(x_prev, t, schedule, rng.standard_normal(shape))
        z = rng.standard_normal(latent_dim) if latent_dim else None
        items.append(TrainItem(utt, t, np.asarray(x_prev), x_t, rng.standard_normal(shape), z))
    return items


def _finite(x: Tensor) -> bool:
    return bool(np.all(np.isfinite(x.data)))


def prepare_items(batch: Sequence[Utterance], store: ParameterStore, schedule: DiffusionSchedule,
                  rng: np.random.Generator) -> List[TrainItem]:
    """Draw (t, x_{t-1}, x_t, noise, z) per utterance and run the generator forward once."""
    items = _draw_items(batch, schedule, rng, store.cfg.latent_dim)
    for item in items:
        item.out = store.generator(item.utt, item.x_t, item.t, schedule, item.post_noise, item.z)
    return items


def discriminator_step(items: Sequence[TrainItem], store: ParameterStore, config: TrainConfig, step: int,
                       report: LossReport) -> None:
    """Step I: update phi on real vs. detached fake posterior samples; theta is not touched."""
    disc = store.discriminator
    n = float(len(items))
    d_loss = Tensor(0.0)
    for item in items:
        s = item.utt.speaker
        real = disc(item.x_prev, item.x_t, item.t, s)
        fake = disc(item.out.x_prev_pred.detach(), item.x_t, item.t, s)
        d_loss = d_loss + lsgan_d_loss(real, fake)
    d_loss = d_loss * (1.0 / n)
    report.d_loss = d_loss.item()
    d_params = store.trainable("discriminator")
    if _finite(d_loss):
        grads = tt.backward(d_loss, d_params.values())
        applied = store.apply_gradients(
            "discriminator", {k: grads[p] for k, p in d_params.items()},
            lr_value(step, config, "discriminator"), config.adam_betas, config.adam_eps,
        )
        report.skipped |= not applied
    else:
        logger.warning("Non-finite L_D at step %d; discriminator update skipped", step)
        report.skipped = True
    tt.zero_grad(d_params.values())


def generator_step(items: Sequence[TrainItem], store: ParameterStore, config: TrainConfig, step: int,
                   report: LossReport) -> None:
    """Step II: update theta against the frozen discriminator; phi is not touched."""
    disc = store.discriminator
    weights = loss_weights(config)
    n = float(len(items))
    adv = recon = fm = Tensor(0.0)
    parts_sum = {"mel": 0.0, "duration": 0.0, "pitch": 0.0, "energy": 0.0}
    disc.set_requires_grad(False)
    try:
        for item in items:
            s = item.utt.speaker
            real = disc(item.x_prev, item.x_t, item.t, s)
            fake = disc(item.out.x_prev_pred, item.x_t, item.t, s)
            adv = adv + lsgan_g_adv_loss(fake)
            fm = fm + feature_matching_loss(real.features, fake.features)
            item_recon, parts = reconstruction_loss(item.out, item.utt, weights)
            recon = recon + item_recon
            for key, value in parts.items():
                parts_sum[key] += value.item()
    finally:
        disc.set_requires_grad(True)
    adv, recon, fm = adv * (1.0 / n), recon * (1.0 / n), fm * (1.0 / n)
    g_loss, lambda_fm = generator_total_loss(adv, recon, fm, use_fm=weights.use_fm)
    report.adv, report.fm, report.recon = adv.item(), fm.item(), recon.item()
    report.g_loss, report.lambda_fm = g_loss.item(), lambda_fm
    report.mel, report.duration = parts_sum["mel"] / n, parts_sum["duration"] / n
    report.pitch, report.energy = parts_sum["pitch"] / n, parts_sum["energy"] / n
    g_params = store.trainable("generator")
    if _finite(g_loss):
        grads = tt.backward(g_loss, g_params.values())
        applied = store.apply_gradients(
            "generator", {k: grads[p] for k, p in g_params.items()},
            lr_value(step, config, "generator"), config.adam_betas, config.adam_eps,
        )
        report.skipped |= not applied
    else:
        logger.warning("Non-finite L_G at step %d; generator update skipped", step)
        report.skipped = True
    tt.zero_grad(g_params.values())


def train_step(batch: Sequence[Utterance], store: ParameterStore, config: TrainConfig,
               rng: np.random.Generator, schedule: Optional[DiffusionSchedule] = None) -> LossReport:
    """One discriminator then one generator update on ``batch``."""
    if not batch:
        raise ValueError("train_step: empty batch")
    if store.generator is None or store.discriminator is None:
        raise ValueError(f"train_step needs generator and discriminator, store kind is {store.kind!r}")
    schedule = schedule if schedule is not None else config.schedule()
    items = prepare_items(batch, store, schedule, rng)
    step = store.step + 1
    report = LossReport()
    discriminator_step(items, store, config, step, report)
    generator_step(items, store, config, step, report)
    store.step = step
    return report


def stage1_loss(store: ParameterStore, utt: Utterance, config: TrainConfig, schedule: DiffusionSchedule,
                rng: np.random.Generator):
    """Basic-model objective for one utterance; returns (loss, report fields)."""
    weights = loss_weights(config)
    out = store.basic(utt.tokens, utt.speaker, utt.targets)
    gen_out = GeneratorOutput(out.mel, out.variance.log_d_hat, out.variance.p_hat, out.variance.e_hat)
    recon, parts = reconstruction_loss(gen_out, utt, weights)
    fields = {k: v.item() for k, v in parts.items()}
    fields["recon"] = recon.item()
    if config.stage1_objective == "recon":
        return recon, fields
    # diffused: sum over t of MAE between both branches diffused with shared noise
    diff = Tensor(0.0)
    for t in range(schedule.T + 1):
        noise = rng.standard_normal(utt.mel.shape)
        pred_t = diffuse_closed_form(out.mel, t, schedule, noise)
        real_t = diffuse_closed_form(utt.mel, t, schedule, noise)
        diff = diff + tt.mean(tt.tabs(pred_t - real_t))
    variance = recon - parts["mel"] if weights.use_mel else recon
    fields["diff"] = diff.item()
    return diff + variance, fields


@dataclass
class TrainResult:
    store: ParameterStore
    reports: List[LossReport] = field(default_factory=list)
    log_path: Optional[Path] = None
    checkpoints: List[Path] = field(default_factory=list)


class _CsvLog:
    def __init__(self, path: Optional[Path], append: bool, keep_through: int = 0) -> None:
        self.path = path
        if path is None:
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        header = ("step",) + LossReport.CSV_HEADER
        rows = self._rows_through(path, keep_through) if append and path.exists() else []
        # rows past the resumed checkpoint are re-run and would otherwise repeat
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)

    @staticmethod
    def _rows_through(path: Path, step: int) -> List[List[str]]:
        with path.open(newline="", encoding="utf-8") as fh:
            body = list(csv.reader(fh))[1:]
        return [row for row in body if row and row[0].isdigit() and int(row[0]) <= step]

    def append(self, step: int, report: LossReport) -> None:
        if self.path is None:
            return
        try:
            with self.path.open("a", newline="", encoding="utf-8") as fh:
                csv.writer(fh).writerow([step] + report.csv_row())
        except OSError as exc:
            raise CheckpointError(f"cannot append to training log {self.path}: {exc}") from exc


def _resume(store: ParameterStore, out_dir: Optional[Path], resume: bool) -> ParameterStore:
    if not (resume and out_dir):
        return store
    latest = latest_checkpoint(out_dir)
    if latest is None:
        logger.info("No checkpoint under %s; starting fresh", out_dir)
        return store
    loaded = ParameterStore.load(latest)
    if loaded.kind != store.kind:
        raise CheckpointError(f"{latest}: is a {loaded.kind} checkpoint, expected {store.kind}")
    logger.info("Resuming from %s at step %d", latest, loaded.step)
    return loaded


def _loop(dataset: Sequence[Utterance], store: ParameterStore, config: TrainConfig, budget: int,
          out_dir: Optional[Path], resume: bool, step_fn, label: str) -> TrainResult:
    if not dataset:
        raise ValueError(f"{label}: dataset is empty")
    out_dir = Path(out_dir) if out_dir is not None else None
    store = _resume(store, out_dir, resume)
    log = _CsvLog(out_dir / LOG_NAME if out_dir else None, append=resume, keep_through=store.step)
    result = TrainResult(store, log_path=log.path)
    schedule = config.schedule()
    if store.step >= budget:
        logger.info("%s: step budget %d already reached", label, budget)
        return result
    while store.step < budget:
        k = store.step
        batch = [dataset[i] for i in batch_indices(len(dataset), config.batch_size, config.seed, k)]
        report = step_fn(batch, store, config, step_rng(config.seed, k), schedule)
        result.reports.append(report)
        log.append(store.step, report)
        if store.step % config.log_interval == 0 or store.step == 1:
            logger.info(
                "%s step %d/%d L_D=%.4f L_G=%.4f L_mel=%.4f L_recon=%.4f",
                label, store.step, budget, report.d_loss, report.g_loss, report.mel, report.recon,
            )
        if out_dir and (store.step % config.checkpoint_interval == 0 or store.step == budget):
            result.checkpoints.append(store.save(checkpoint_path(out_dir, store.step)))
    return result


def train_diffgan(dataset: Sequence[Utterance], config: TrainConfig, out_dir=None, resume: bool = False,
                  store: Optional[ParameterStore] = None) -> TrainResult:
    """Single-stage adversarial training for ``config.steps`` generator updates."""
    store = store or ParameterStore.create(config.model.replace(two_stage=False), config.seed, "diffgan")
    return _loop(dataset, store, config, config.steps, out_dir, resume, train_step, "train_diffgan")


def _stage1_step(batch, store: ParameterStore, config: TrainConfig, rng, schedule) -> LossReport:
    step = store.step + 1
    total = Tensor(0.0)
    fields_sum: dict = {}
    for utt in batch:
        loss, fields = stage1_loss(store, utt, config, schedule, rng)
        total = total + loss
        for key, value in fields.items():
            fields_sum[key] = fields_sum.get(key, 0.0) + value
    n = float(len(batch))
    total = total * (1.0 / n)
    report = LossReport(**{k: v / n for k, v in fields_sum.items()}, g_loss=total.item())
    params = store.trainable("basic")
    if _finite(total):
        grads = tt.backward(total, params.values())
        applied = store.apply_gradients(
            "basic", {k: grads[p] for k, p in params.items()},
            lr_value(step, config, "basic"), config.stage1_betas, config.adam_eps,
        )
        report.skipped = not applied
    else:
        logger.warning("Non-finite stage-1 loss at step %d; update skipped", step)
        report.skipped = True
    tt.zero_grad(params.values())
    store.step = step
    return report


def train_stage1_basic(dataset: Sequence[Utterance], config: TrainConfig, out_dir=None,
                       resume: bool = False) -> TrainResult:
    """Fit the basic acoustic model for ``config.stage1_iters`` iterations."""
    if config.stage1_iters < 1:
        raise ValueError("train_stage1_basic: stage1_iters must be positive")
    store = ParameterStore.create(config.model.replace(two_stage=False), config.seed, "basic")
    return _loop(dataset, store, config, config.stage1_iters, out_dir, resume, _stage1_step, "stage1")


def train_two_stage(dataset: Sequence[Utterance], config: TrainConfig, basic, out_dir=None,
                    resume: bool = False) -> TrainResult:
    """Stage 2: generator with a frozen copy of the basic model as coarse-mel source.

    ``basic`` is a stage-1 ParameterStore or a path to its checkpoint.
    """
    if basic is None:
        raise CheckpointError("train_two_stage: a stage-1 basic checkpoint is required")
    if not isinstance(basic, ParameterStore):
        path = Path(basic)
        if not path.is_file():
            raise CheckpointError(f"stage-1 checkpoint not found: {path}")
        basic = ParameterStore.load(path)
    if basic.basic is None:
        raise CheckpointError(f"expected a basic checkpoint, got kind {basic.kind!r}")
    store = ParameterStore.create(config.model.replace(two_stage=True), config.seed, "two-stage")
    store.generator.load_basic(basic.basic)
    return _loop(dataset, store, config, config.steps, out_dir, resume, train_step, "train_two_stage")


__all__ = [
    "lr_value",
    "loss_weights",
    "sample_steps",
    "step_rng",
    "batch_indices",
    "TrainItem",
    "prepare_items",
    "discriminator_step",
    "generator_step",
    "train_step",
    "stage1_loss",
    "TrainResult",
    "train_diffgan",
    "train_stage1_basic",
    "train_two_stage",
]
