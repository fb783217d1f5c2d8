"""Training objectives (LS-GAN, feature matching, variance-adapted reconstruction)."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import tensor as tt
from .blocks import DiscriminatorOutput
from .errors import ShapeError
from .models import GeneratorOutput, Utterance
from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    lambda_d: float = 0.1
    lambda_p: float = 0.1
    lambda_e: float = 0.1
    use_mel: bool = True
    use_fm: bool = True


@dataclass
class LossReport:
    d_loss: float = 0.0
    adv: float = 0.0
    fm: float = 0.0
    mel: float = 0.0
    duration: float = 0.0
    pitch: float = 0.0
    energy: float = 0.0
    recon: float = 0.0
    g_loss: float = 0.0
    lambda_fm: float = 0.0
    diff: float = 0.0  # stage-1 diffused-sample divergence
    skipped: bool = False

    CSV_HEADER = (
        "L_D", "L_adv", "L_fm", "L_mel", "L_duration", "L_pitch", "L_energy", "L_recon", "L_G", "lambda_fm",
        "L_diff", "skipped",
    )

    def values(self) -> Tuple:
        return dataclasses.astuple(self)

    def csv_row(self) -> List[str]:
        return [repr(float(v)) for v in self.values()[:-1]] + [str(int(self.skipped))]

    @classmethod
    def mean(cls, reports: Sequence["LossReport"]) -> "LossReport":
        if not reports:
            return cls()
        fields = [f.name for f in dataclasses.fields(cls) if f.name != "skipped"]
        avg = {name: float(np.mean([getattr(r, name) for r in reports])) for name in fields}
        return cls(skipped=any(r.skipped for r in reports), **avg)


def _sq_mean(x: Tensor, target: float) -> Tensor:
    return tt.mean(tt.square(x - target))


def lsgan_d_loss(real: DiscriminatorOutput, fake: DiscriminatorOutput) -> Tensor:
    """Sum over both heads of mean (D_real - 1)^2 + mean D_fake^2."""
    loss = Tensor(0.0)
    for r, f in ((real.uncond_logits, fake.uncond_logits), (real.cond_logits, fake.cond_logits)):
        loss = loss + _sq_mean(r, 1.0) + _sq_mean(f, 0.0)
    return loss


def lsgan_g_adv_loss(fake: DiscriminatorOutput) -> Tensor:
    return _sq_mean(fake.uncond_logits, 1.0) + _sq_mean(fake.cond_logits, 1.0)


def feature_matching_loss(real_feats: Sequence, fake_feats: Sequence) -> Tensor:
    """Sum over layers of mean |real - fake|; real features carry no gradient."""
    if len(real_feats) != len(fake_feats):
        raise ShapeError("feature_matching_loss", (len(real_feats),), (len(fake_feats),))
    loss = Tensor(0.0)
    for real, fake in zip(real_feats, fake_feats):
        real, fake = tt.as_tensor(real), tt.as_tensor(fake)
        if real.shape != fake.shape:
            raise ShapeError("feature_matching_loss", real.shape, fake.shape)
        loss = loss + tt.mean(tt.tabs(real.detach() - fake))
    return loss


def duration_targets(durations) -> np.ndarray:
    return np.log(np.maximum(np.asarray(durations, dtype=np.float64), 1.0))


def reconstruction_loss(out: GeneratorOutput, target: Utterance, w: LossWeights = LossWeights()) -> Tuple[Tensor, Dict[str, Tensor]]:
    """MAE mel + lambda-weighted MSE of log-duration, pitch and energy."""
    x0_pred = tt.as_tensor(out.x0_pred)
    if x0_pred.shape != target.mel.shape:
        raise ShapeError("reconstruction_loss", x0_pred.shape, target.mel.shape)
    for name, pred, ref in (("duration", out.d_hat, target.durations), ("pitch", out.p_hat, target.pitch),
                            ("energy", out.e_hat, target.energy)):
        if tuple(pred.shape) != tuple(np.shape(ref)):
            raise ShapeError(f"reconstruction_loss ({name})", pred.shape, np.shape(ref))
    parts = {
        "mel": tt.mean(tt.tabs(x0_pred - target.mel)),
        "duration": tt.mean(tt.square(out.d_hat - duration_targets(target.durations))),
        "pitch": tt.mean(tt.square(out.p_hat - target.pitch)),
        "energy": tt.mean(tt.square(out.e_hat - target.energy)),
    }
    recon = w.lambda_d * parts["duration"] + w.lambda_p * parts["pitch"] + w.lambda_e * parts["energy"]
    if w.use_mel:
        recon = parts["mel"] + recon
    return recon, parts


def generator_total_loss(adv: Tensor, recon: Tensor, fm: Tensor, use_fm: bool = True) -> Tuple[Tensor, float]:
    """L_G = adv + recon + lambda_fm * fm with lambda_fm = recon / fm held constant."""
    fm_value = float(tt.as_tensor(fm).item())
    if not use_fm or fm_value == 0.0:
        return adv + recon, 0.0
    lambda_fm = float(tt.as_tensor(recon).item()) / fm_value
    return adv + recon + lambda_fm * fm, lambda_fm


__all__ = [
    "LossWeights",
    "LossReport",
    "lsgan_d_loss",
    "lsgan_g_adv_loss",
    "feature_matching_loss",
    "duration_targets",
    "reconstruction_loss",
    "generator_total_loss",
]
