"""Command-line entry point.

Examples:
    python scripts/diffgan.py gen-data --out data/toy
    python scripts/diffgan.py train --corpus data/toy --out runs/toy --steps 200 --seed 11
    python scripts/diffgan.py train-two-stage --corpus data/toy --out runs/two --steps 200
    python scripts/diffgan.py infer --checkpoint runs/toy/ckpt_000200.dgtt --tokens 1,2,3 --out mel.dgtt --pgm mel.pgm
    python scripts/diffgan.py check --json
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from decouple import Csv
from tabulate import tabulate

from .checks import CHECK_NAMES, MC_SAMPLES, first_failure, format_report, report_json, run_checks
from .config import PRESETS, TrainConfig, load_train_config, parse_overrides
from .diffusion import BETA_MAX, BETA_MIN, DiffusionSchedule, make_variance_schedule
from .errors import EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, CheckpointError, DiffGanError, exit_code
from .evaluation import BENCH_MODES, bench, fit_latency_curve, write_bench_csv
from .inference import (
    InferenceRequest,
    denoise_chain,
    save_mel,
    shallow_one_step,
    variation_analysis,
    write_pgm,
)
from .store import ParameterStore
from .synthdata import CorpusSpec, generate_corpus, load_corpus, save_corpus
from .training import TrainResult, train_diffgan, train_stage1_basic, train_two_stage

logger = logging.getLogger(__name__)

COMMANDS = ("gen-data", "train", "train-two-stage", "infer", "check", "bench", "variation")


def _int_list(text: str) -> list[int]:
    try:
        values = Csv(cast=int)(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return values


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--corpus", required=True, help="Corpus directory written by gen-data")
    p.add_argument("--out", required=True, help="Run directory for checkpoints and train_log.csv")
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--steps", type=int, default=None, help="Generator updates to run (total, including resumed ones)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--preset", choices=sorted(PRESETS), default=None)
    p.add_argument("--T", type=int, default=None, help="Diffusion steps")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="Override any config key (repeatable)")
    p.add_argument("--resume", action="store_true", help="Continue from the latest checkpoint in --out")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="diffgan", description="Desk-scale denoising diffusion GAN acoustic model")
    verbosity = p.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    verbosity.add_argument("--quiet", "-q", action="store_true", help="Warnings and errors only")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    g = sub.add_parser("gen-data", help="Write a synthetic multi-speaker corpus")
    g.add_argument("--out", required=True, help="Corpus directory")
    g.add_argument("--speakers", type=int, default=4)
    g.add_argument("--tokens", type=int, default=24, help="Token vocabulary size")
    g.add_argument("--utterances", type=int, default=64)
    g.add_argument("--mel-bins", type=int, default=16)
    g.add_argument("--min-frames", type=int, default=16)
    g.add_argument("--max-frames", type=int, default=48)
    g.add_argument("--noise", type=float, default=0.05)
    g.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="Single-stage adversarial training")
    _add_train_flags(t)

    ts = sub.add_parser("train-two-stage", help="Basic model (stage 1) then shallow diffusion generator (stage 2)")
    _add_train_flags(ts)
    ts.add_argument("--basic", default=None, help="Stage-1 checkpoint; stage 1 is trained into OUT/stage1 when omitted")
    ts.add_argument("--stage1-iters", type=int, default=None)

    i = sub.add_parser("infer", help="Synthesize a mel spectrogram")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--tokens", type=_int_list, required=True, help="Comma-separated token ids, e.g. 1,2,3")
    i.add_argument("--speaker", type=int, default=0)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--mode", choices=["chain", "two-stage"], default="chain")
    i.add_argument("--T", type=int, default=None, help="Override the checkpoint's step count (chain mode)")
    i.add_argument("--out", required=True, help="Output tensor file (mel + durations)")
    i.add_argument("--pgm", default=None, help="Optional PGM image of the mel")
    i.add_argument("--trace", default=None, metavar="DIR", help="Write one PGM per intermediate x_t (chain mode)")

    c = sub.add_parser("check", help="Run the analytic validation suite")
    c.add_argument("--json", action="store_true", help="Machine-readable report")
    c.add_argument("--T", type=int, default=4, help="Step count of the schedule table printed before the report")
    c.add_argument("--only", nargs="+", choices=CHECK_NAMES, default=None)
    c.add_argument("--mc-samples", type=int, default=MC_SAMPLES)
    c.add_argument("--grad-coords", type=int, default=6, help="Coordinates checked per parameter (0 = all)")

    b = sub.add_parser("bench", help="Decoder passes and wall time per mode and token length")
    b.add_argument("--checkpoint", default=None, help="Single-stage checkpoint for the T=1/2/4 modes")
    b.add_argument("--two-stage", dest="two_stage", default=None, help="Two-stage checkpoint for the shallow mode")
    b.add_argument("--lengths", type=_int_list, default=[8, 16, 32, 64])
    b.add_argument("--modes", nargs="+", choices=BENCH_MODES, default=list(BENCH_MODES))
    b.add_argument("--speaker", type=int, default=0)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--out", default=None, help="CSV output path")

    v = sub.add_parser("variation", help="Repeated sampling of one input; energy and pitch-proxy contours")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--tokens", type=_int_list, required=True)
    v.add_argument("--speaker", type=int, default=0)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--samples", type=int, default=4)
    v.add_argument("--mode", choices=["chain", "two-stage"], default="chain")
    v.add_argument("--T", type=int, default=None)
    v.add_argument("--out", default=None, help="CSV output path")
    return p


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("diffgan_tts").setLevel(level)


def cmd_gen_data(args: argparse.Namespace) -> int:
    spec = CorpusSpec(
        n_speakers=args.speakers,
        n_tokens=args.tokens,
        n_utterances=args.utterances,
        min_frames=args.min_frames,
        max_frames=args.max_frames,
        mel_bins=args.mel_bins,
        seed=args.seed,
        noise=args.noise,
    )
    utts, _ = generate_corpus(spec)
    save_corpus(args.out, utts, spec)
    return EXIT_OK


def _train_config(args: argparse.Namespace) -> TrainConfig:
    overrides = parse_overrides(args.set)
    flags = {
        "steps": args.steps,
        "seed": args.seed,
        "batch_size": args.batch_size,
        "preset": args.preset,
        "T": args.T,
        "stage1_iters": getattr(args, "stage1_iters", None),
    }
    overrides.update({k: v for k, v in flags.items() if v is not None})
    return load_train_config(args.config, overrides)


def _load_dataset(args: argparse.Namespace, config: TrainConfig):
    corpus = Path(args.corpus)
    if not corpus.is_dir():
        logger.error("--corpus: corpus directory does not exist: %s", corpus)
        return None
    utts = load_corpus(corpus)
    bins = {u.mel.shape[1] for u in utts}
    if bins and bins != {config.model.mel_bins}:
        logger.warning("corpus mel bins %s differ from model mel_bins=%d", sorted(bins), config.model.mel_bins)
    return utts


def _print_summary(result: TrainResult, label: str) -> None:
    rows = [("kind", result.store.kind), ("step", result.store.step), ("checkpoints", len(result.checkpoints))]
    if result.log_path is not None:
        rows.append(("log", str(result.log_path)))
    if result.reports:
        last = result.reports[-1]
        rows += [("L_D", f"{last.d_loss:.5f}"), ("L_G", f"{last.g_loss:.5f}"), ("L_mel", f"{last.mel:.5f}"),
                 ("L_recon", f"{last.recon:.5f}"), ("skipped steps", sum(r.skipped for r in result.reports))]
    print(f"{label}")
    print(tabulate(rows, tablefmt="github"))


def cmd_train(args: argparse.Namespace) -> int:
    config = _train_config(args)
    utts = _load_dataset(args, config)
    if utts is None:
        return EXIT_USAGE
    result = train_diffgan(utts, config, out_dir=args.out, resume=args.resume)
    _print_summary(result, "train")
    return EXIT_OK


def cmd_train_two_stage(args: argparse.Namespace) -> int:
    config = _train_config(args)
    utts = _load_dataset(args, config)
    if utts is None:
        return EXIT_USAGE
    out = Path(args.out)
    if args.basic:
        basic = Path(args.basic)
    else:
        stage1 = train_stage1_basic(utts, config, out_dir=out / "stage1", resume=args.resume)
        _print_summary(stage1, "stage 1")
        basic = stage1.store
    result = train_two_stage(utts, config, basic, out_dir=out, resume=args.resume)
    _print_summary(result, "stage 2")
    return EXIT_OK


def cmd_infer(args: argparse.Namespace) -> int:
    store = ParameterStore.load(args.checkpoint)
    req = InferenceRequest(args.tokens, args.speaker, T_override=args.T, seed=args.seed)
    if args.mode == "two-stage":
        if args.trace:
            logger.warning("--trace is ignored in two-stage mode (single decoder pass)")
        result = shallow_one_step(req, store)
    else:
        result = denoise_chain(req, store, keep_trace=bool(args.trace))
    save_mel(args.out, result, req, args.mode)
    logger.info("Wrote %s (%d frames, %d decoder passes)", args.out, result.mel.shape[0], result.decoder_passes)
    if args.pgm:
        write_pgm(args.pgm, result.mel)
    if args.trace:
        trace_dir = Path(args.trace)
        for t, x in result.trace:
            write_pgm(trace_dir / f"x_t{t:04d}.pgm", x)
        logger.info("Wrote %d trace images to %s", len(result.trace), trace_dir)
    return EXIT_OK


def cmd_check(json_out: bool = False, schedule_fn: Callable[..., DiffusionSchedule] = make_variance_schedule,
              T: int = 4, only: Optional[Sequence[str]] = None, mc_samples: int = MC_SAMPLES,
              grad_coords: Optional[int] = 6) -> int:
    """Run the validation suite and report; exit 0 iff every check passes."""
    if not json_out:
        print(schedule_fn(T, BETA_MIN, BETA_MAX).to_csv(), end="")
        print()
    results = run_checks(schedule_fn, mc_samples=mc_samples, grad_coords=grad_coords, only=only)
    print(report_json(results) if json_out else format_report(results))
    failure = first_failure(results)
    if failure is not None:
        logger.error("check failed: %s (%s)", failure.name, failure.detail)
        return EXIT_VALIDATION
    return EXIT_OK


def _load_optional(path: Optional[str]) -> Optional[ParameterStore]:
    return ParameterStore.load(path) if path else None


def cmd_bench(args: argparse.Namespace) -> int:
    stores = {"chain": _load_optional(args.checkpoint), "two-stage": _load_optional(args.two_stage)}
    stores = {k: v for k, v in stores.items() if v is not None}
    if not stores:
        raise CheckpointError("bench needs --checkpoint and/or --two-stage")
    rows = bench(stores, args.lengths, args.speaker, args.seed, args.repeats, args.modes)
    table = [(r.mode, r.tokens, r.frames, r.decoder_passes, r.basic_passes, f"{r.seconds:.5f}",
              f"{r.seconds_per_frame:.6f}") for r in rows]
    print(tabulate(table, headers=["mode", "tokens", "frames", "decoder", "basic", "seconds", "s/frame"],
                   tablefmt="github"))
    for mode in args.modes:
        series = [r for r in rows if r.mode == mode]
        if len(series) >= 4:
            fit = fit_latency_curve([r.tokens for r in series], [r.seconds for r in series])
            logger.info("%s latency fit: slope=%.3g quadratic=%.3g (+/- %.3g) linear_ok=%s",
                        mode, fit.slope, fit.quadratic, fit.quadratic_stderr, fit.linear_ok)
    if args.out:
        write_bench_csv(args.out, rows)
        logger.info("Saved bench results to %s", args.out)
    return EXIT_OK


def cmd_variation(args: argparse.Namespace) -> int:
    store = ParameterStore.load(args.checkpoint)
    req = InferenceRequest(args.tokens, args.speaker, T_override=args.T, seed=args.seed, n_samples=args.samples)
    result = variation_analysis(req, store, mode=args.mode)
    table = [(seed, m.shape[0], f"{float(np.mean(e)):.4f}", f"{float(np.mean(c)):.4f}")
             for seed, m, e, c in zip(result.seeds, result.mels, result.energy, result.centroid)]
    print(tabulate(table, headers=["seed", "frames", "mean energy", "mean centroid"], tablefmt="github"))
    print(f"\nCentroid contour variance across samples: {result.contour_variance():.6f}")
    if args.out:
        result.write_csv(args.out)
        logger.info("Saved contours to %s", args.out)
    return EXIT_OK


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args)
    try:
        if args.command == "gen-data":
            return cmd_gen_data(args)
        if args.command == "train":
            return cmd_train(args)
        if args.command == "train-two-stage":
            return cmd_train_two_stage(args)
        if args.command == "infer":
            return cmd_infer(args)
        if args.command == "check":
            return cmd_check(args.json, T=args.T, only=args.only, mc_samples=args.mc_samples,
                             grad_coords=args.grad_coords or None)
        if args.command == "bench":
            return cmd_bench(args)
        return cmd_variation(args)
    except (DiffGanError, OSError, ValueError) as exc:
        logger.error("%s: %s", args.command, exc)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
