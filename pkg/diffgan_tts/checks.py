"""Analytic validation suite run by ``diffgan check``.

Each check returns a ``CheckResult``; the suite never raises for a failed
check so that every result is reported. The schedule builder is
injectable so a deliberately wrong formula can be shown to fail.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass
from decimal import Decimal, localcontext
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from tabulate import tabulate

from .blocks import (
    DiscriminatorOutput,
    FFTBlock,
    JCUDiscriminator,
    VarianceAdaptor,
    VarianceTargets,
    WaveNetDecoder,
    adaln_modulate,
)
from .config import ModelConfig
from .diffusion import (
    BETA_MAX,
    BETA_MIN,
    DiffusionSchedule,
    diffuse_stepwise,
    make_variance_schedule,
    posterior_params,
)
from .gradcheck import grad_check, projected_loss
from .losses import feature_matching_loss, generator_total_loss, lsgan_d_loss
from .models import BasicAcousticModel
from .tensor import Tensor

logger = logging.getLogger(__name__)

ScheduleFn = Callable[[int, float, float], DiffusionSchedule]

SCHEDULE_T = (1, 2, 4, 1000)
REL_TOL = 1e-12
GRAD_TOL = 1e-4
MC_SAMPLES = 100_000
MC_CHUNK = 10_000


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def decimal_betas(T: int, beta_min: float, beta_max: float, prec: int = 50) -> List[Decimal]:
    """beta_t = 1 - exp(-(beta_min/T + (beta_max - beta_min)(2t - 1)/(2 T^2))) at ``prec`` digits."""
    with localcontext() as ctx:
        ctx.prec = prec
        lo, hi = Decimal(repr(beta_min)), Decimal(repr(beta_max))
        out = []
        for t in range(1, T + 1):
            x = lo / T + (hi - lo) * (2 * t - 1) / (2 * T * T)
            out.append(1 - (-x).exp())
        return out


def check_schedule(schedule_fn: ScheduleFn) -> CheckResult:
    worst = 0.0
    where = ""
    for T in SCHEDULE_T:
        sched = schedule_fn(T, BETA_MIN, BETA_MAX)
        for t, ref in enumerate(decimal_betas(T, BETA_MIN, BETA_MAX), start=1):
            err = _rel(sched.beta(t), float(ref))
            if err > worst:
                worst, where = err, f"T={T} t={t}"
    ok = worst <= REL_TOL
    return CheckResult("schedule", ok, f"max rel err {worst:.2e}" + (f" at {where}" if where else ""))


def decimal_log_alpha_bar(T: int, beta_min: float, beta_max: float, prec: int = 50) -> List[Decimal]:
    """log alpha_bar_t = -sum_{i<=t} x_i for t = 1..T, summed term by term at ``prec`` digits."""
    with localcontext() as ctx:
        ctx.prec = prec
        lo, hi = Decimal(repr(beta_min)), Decimal(repr(beta_max))
        total = Decimal(0)
        out = []
        for t in range(1, T + 1):
            total -= lo / T + (hi - lo) * (2 * t - 1) / (2 * T * T)
            out.append(total)
        return out


def check_alpha_bar(schedule_fn: ScheduleFn) -> CheckResult:
    """alpha_bar and its log against a high-precision running sum of log alpha_t."""
    worst = 0.0
    where = ""
    for T in SCHEDULE_T:
        sched = schedule_fn(T, BETA_MIN, BETA_MAX)
        with localcontext() as ctx:
            ctx.prec = 50
            for t, ref in enumerate(decimal_log_alpha_bar(T, BETA_MIN, BETA_MAX), start=1):
                err = max(_rel(float(sched.log_alphas_cumprod[t]), float(ref)),
                          _rel(sched.alpha_bar(t), float(ref.exp())))
                if err > worst:
                    worst, where = err, f"T={T} t={t}"
    ok = worst <= REL_TOL
    return CheckResult("alpha_bar", ok, f"max rel err {worst:.2e}" + (f" at {where}" if where else ""))


def check_posterior(schedule_fn: ScheduleFn) -> CheckResult:
    rng = np.random.default_rng(0)
    x0 = rng.standard_normal((8, 16))
    xt = rng.standard_normal((8, 16))
    worst = 0.0
    for T in SCHEDULE_T:
        sched = schedule_fn(T, BETA_MIN, BETA_MAX)
        collapse = posterior_params(x0, xt, 1, sched)
        if collapse.variance != 0.0 or not np.array_equal(collapse.mean, x0):
            return CheckResult("posterior", False, f"T={T}: t=1 posterior does not collapse to x0")
        with localcontext() as ctx:
            ctx.prec = 50
            betas = decimal_betas(T, BETA_MIN, BETA_MAX)
            ab = [Decimal(1)]
            for b in betas:
                ab.append(ab[-1] * (1 - b))
            for t in range(2, T + 1):
                ref = (1 - ab[t - 1]) / (1 - ab[t]) * betas[t - 1]
                worst = max(worst, _rel(sched.posterior_coefficients(t)[2], float(ref)))
    return CheckResult("posterior", worst <= REL_TOL, f"collapse exact; variance max rel err {worst:.2e}")


def chain_moments(schedule: DiffusionSchedule, x0: np.ndarray, n: int, rng: np.random.Generator,
                  chunk: int = MC_CHUNK) -> Dict[int, Dict[str, float]]:
    """Pooled residual statistics of the stepwise chain against the closed form, per step."""
    stats = {t: {"sum": 0.0, "sumsq": 0.0, "count": 0} for t in range(1, schedule.T + 1)}
    done = 0
    while done < n:
        m = min(chunk, n - done)
        x = np.broadcast_to(x0, (m,) + x0.shape)
        for t in range(1, schedule.T + 1):
            x = diffuse_stepwise(x, t, schedule, rng.standard_normal(x.shape))
            resid = x - math.sqrt(schedule.alpha_bar(t)) * x0
            s = stats[t]
            s["sum"] += float(resid.sum())
            s["sumsq"] += float((resid * resid).sum())
            s["count"] += resid.size
        done += m
    out = {}
    for t, s in stats.items():
        mean = s["sum"] / s["count"]
        out[t] = {"mean": mean, "var": s["sumsq"] / s["count"] - mean * mean, "count": s["count"]}
    return out


def check_moments(schedule_fn: ScheduleFn, n: int = MC_SAMPLES, seed: int = 0) -> CheckResult:
    sched = schedule_fn(4, BETA_MIN, BETA_MAX)
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal((8, 16))
    worst_z, worst_var = 0.0, 0.0
    for t, m in chain_moments(sched, x0, n, rng).items():
        expected_var = sched.one_minus_alpha_bar(t)
        stderr = math.sqrt(expected_var / m["count"])
        worst_z = max(worst_z, abs(m["mean"]) / stderr if stderr > 0 else abs(m["mean"]))
        worst_var = max(worst_var, abs(m["var"] - expected_var) / expected_var)
    ok = worst_z <= 4.0 and worst_var <= 0.02
    return CheckResult("moments", ok, f"mean dev {worst_z:.2f} SE, var dev {100 * worst_var:.3f}%")


def _grad_cases(seed: int = 0) -> Dict[str, Callable]:
    """Name -> zero-argument builder returning (loss_fn, params)."""
    cfg = ModelConfig.from_preset("tiny")

    def rng():
        return np.random.default_rng(seed)

    def fft():
        r = rng()
        block = FFTBlock(cfg.hidden, cfg.n_heads, cfg.conv_kernel, cfg.conv_filter, r)
        x = r.standard_normal((4, cfg.hidden))
        return (lambda: projected_loss(block(x))), block.named_parameters()

    def adaptor():
        r = rng()
        ad = VarianceAdaptor(cfg.hidden, cfg.variance_kernel, r)
        h = r.standard_normal((3, cfg.hidden))
        targets = VarianceTargets(np.array([2, 1, 3]), r.standard_normal(3), r.standard_normal(3))

        def loss():
            out = ad(Tensor(h), targets)
            return (projected_loss(out.frames) + projected_loss(out.log_d_hat, 1)
                    + projected_loss(out.p_hat, 2) + projected_loss(out.e_hat, 3))

        return loss, ad.named_parameters()

    def decoder(latent_dim: int = 0, two_stage: bool = False):
        def build():
            r = rng()
            dec = WaveNetDecoder(cfg.replace(latent_dim=latent_dim, two_stage=two_stage), r)
            x_t = r.standard_normal((6, cfg.mel_bins))
            cond = Tensor(r.standard_normal((6, cfg.hidden)))
            coarse = r.standard_normal((6, cfg.mel_bins)) if two_stage else None
            z = r.standard_normal(latent_dim) if latent_dim else None
            return (lambda: projected_loss(dec(x_t, cond, 2, 1, coarse=coarse, z=z))), dec.named_parameters()

        return build

    def discriminator():
        r = rng()
        disc = JCUDiscriminator(cfg, r)
        x_prev = r.standard_normal((16, cfg.mel_bins))
        x_t = r.standard_normal((16, cfg.mel_bins))

        def loss():
            out = disc(x_prev, x_t, 3, 2)
            total = projected_loss(out.uncond_logits, 1) + projected_loss(out.cond_logits, 2)
            for i, f in enumerate(out.features):
                total = total + projected_loss(f, 10 + i)
            return total

        return loss, disc.named_parameters()

    def basic():
        r = rng()
        model = BasicAcousticModel(cfg, r)
        tokens = np.array([1, 5, 7])
        targets = VarianceTargets(np.array([1, 2, 2]), r.standard_normal(3), r.standard_normal(3))

        def loss():
            out = model(tokens, 1, targets)
            return projected_loss(out.mel) + projected_loss(out.variance.log_d_hat, 1)

        return loss, model.named_parameters()

    def adaln():
        r = rng()
        params = {
            "h": Tensor(r.standard_normal((5, 8)), requires_grad=True),
            "gamma": Tensor(r.standard_normal((1, 8)), requires_grad=True),
            "beta_shift": Tensor(r.standard_normal((1, 8)), requires_grad=True),
        }
        return (lambda: projected_loss(adaln_modulate(params["h"], params["gamma"], params["beta_shift"]))), params

    return {
        "fft_block": fft,
        "variance_adaptor": adaptor,
        "wavenet_decoder": decoder(),
        "wavenet_decoder_two_stage": decoder(two_stage=True),
        "wavenet_decoder_latent": decoder(latent_dim=4),
        "jcu_discriminator": discriminator,
        "basic_acoustic_model": basic,
        "adaln_modulate": adaln,
    }


def check_gradients(max_coords: Optional[int] = 6, tolerance: float = GRAD_TOL,
                    names: Optional[Sequence[str]] = None) -> CheckResult:
    cases = _grad_cases()
    failures = []
    worst = 0.0
    for name, build in cases.items():
        if names is not None and name not in names:
            continue
        loss_fn, params = build()
        report = grad_check(loss_fn, params, tolerance=tolerance, max_coords=max_coords)
        worst = max(worst, report.max_error)
        if not report.passed:
            bad = report.worst()
            failures.append(f"{name}:{bad.name} ({bad.max_rel_error:.2e})")
        logger.debug("grad check %s: max rel err %.2e", name, report.max_error)
    detail = f"max rel err {worst:.2e}" + (f"; failing {', '.join(failures)}" if failures else "")
    return CheckResult("gradients", not failures, detail)


def check_losses(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    feats = [rng.standard_normal((4, 3)) for _ in range(5)]
    fm_zero = feature_matching_loss(feats, [f.copy() for f in feats]).item()
    ones, zeros = np.ones((4, 1)), np.zeros((4, 1))
    perfect = lsgan_d_loss(DiscriminatorOutput(ones, ones, []), DiscriminatorOutput(zeros, zeros, [])).item()
    recon, fm = Tensor(rng.uniform(0.1, 2.0)), Tensor(rng.uniform(0.1, 2.0))
    _, lam = generator_total_loss(Tensor(0.0), recon, fm)
    balance = abs(lam * fm.item() - recon.item())
    ok = fm_zero == 0.0 and perfect == 0.0 and balance <= 4 * np.finfo(float).eps * recon.item()
    return CheckResult("losses", ok, f"L_fm(same)={fm_zero}, L_D(perfect)={perfect}, |lambda*fm - recon|={balance:.1e}")


CHECK_NAMES = ("schedule", "alpha_bar", "posterior", "moments", "gradients", "losses")


def run_checks(schedule_fn: ScheduleFn = make_variance_schedule, mc_samples: int = MC_SAMPLES,
               grad_coords: Optional[int] = 6, only: Optional[Sequence[str]] = None) -> List[CheckResult]:
    runners = {
        "schedule": lambda: check_schedule(schedule_fn),
        "alpha_bar": lambda: check_alpha_bar(schedule_fn),
        "posterior": lambda: check_posterior(schedule_fn),
        "moments": lambda: check_moments(schedule_fn, mc_samples),
        "gradients": lambda: check_gradients(grad_coords),
        "losses": check_losses,
    }
    results = []
    for name in CHECK_NAMES:
        if only is not None and name not in only:
            continue
        start = time.perf_counter()
        try:
            result = runners[name]()
        except Exception as exc:  # a crashing check is a failing check
            logger.debug("check %s raised", name, exc_info=True)
            result = CheckResult(name, False, f"{type(exc).__name__}: {exc}")
        result.seconds = time.perf_counter() - start
        results.append(result)
        logger.info("check %-10s %s (%.2fs)", name, "ok" if result.passed else "FAILED", result.seconds)
    return results


def first_failure(results: Sequence[CheckResult]) -> Optional[CheckResult]:
    return next((r for r in results if not r.passed), None)


def format_report(results: Sequence[CheckResult]) -> str:
    rows = [(r.name, "PASS" if r.passed else "FAIL", f"{r.seconds:.2f}", r.detail) for r in results]
    return tabulate(rows, headers=["check", "status", "seconds", "detail"], tablefmt="github")


def report_json(results: Sequence[CheckResult]) -> str:
    failure = first_failure(results)
    payload = {
        "passed": failure is None,
        "first_failure": failure.name if failure else None,
        "checks": [asdict(r) for r in results],
    }
    return json.dumps(payload, indent=2)


__all__ = [
    "CheckResult",
    "CHECK_NAMES",
    "decimal_betas",
    "decimal_log_alpha_bar",
    "check_schedule",
    "check_alpha_bar",
    "check_posterior",
    "chain_moments",
    "check_moments",
    "check_gradients",
    "check_losses",
    "run_checks",
    "first_failure",
    "format_report",
    "report_json",
]
