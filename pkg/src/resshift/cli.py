"""Command-line entry point: ``resshift <verb> [options]``.

Verbs: schedule, degrade, train, sample, eval, verify.  Exit status is 0 on
success, 1 on a domain failure (failed oracle, diverged training, bad
input data) and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from resshift import __version__
from resshift.degrade import TOY_KINDS, DegradationSpec, degrade, toy_images
from resshift.oracle import SUITES, format_table, run_suite
from resshift.pipeline import _from_dict, evaluate, load_config, sample, train
from resshift.predictor import load_checkpoint
from resshift.rng import make_rng
from resshift.schedule import ScheduleParams, build_schedule, format_schedule_csv, write_schedule_csv
from resshift.tensor_io import load_image_or_tensor, read_tensor, save_image_or_tensor, write_tensor

log = logging.getLogger("resshift")


class UsageError(Exception):
    pass


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _banner(verb: str, config, seed) -> None:
    log.info("resshift %s | verb=%s | config_digest=%s | seed=%s", __version__, verb, _digest(config), seed)


def _dump_json(obj, path) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


# --- verbs -------------------------------------------------------------------


def cmd_schedule(args) -> int:
    try:
        params = ScheduleParams(
            T=args.T, p=args.p, kappa=args.kappa, eta_1_cap=args.eta_1_cap, eta_T=args.eta_T
        )
    except ValueError as err:
        raise UsageError(str(err)) from err
    _banner("schedule", dataclasses.asdict(params), None)
    s = build_schedule(params)
    if args.export:
        write_schedule_csv(s, args.export, args.signal_power)
    else:
        sys.stdout.write(format_schedule_csv(s, args.signal_power))
    return 0


def _load_degradation_spec(path) -> DegradationSpec:
    if path is None:
        return DegradationSpec()
    try:
        with open(path, encoding="utf-8") as fh:
            return _from_dict(DegradationSpec, json.load(fh), "degradation")
    except (ValueError, TypeError) as err:
        raise UsageError(f"invalid degradation spec {path}: {err}") from err


def cmd_degrade(args) -> int:
    spec = _load_degradation_spec(args.spec)
    _banner("degrade", dataclasses.asdict(spec), args.seed)
    if args.toy:
        x0 = toy_images(args.toy, args.count, args.size, make_rng(args.seed, 1), args.channels)
    else:
        x0 = load_image_or_tensor(args.input)
    single = x0.ndim == 3
    batch = x0[None] if single else x0
    if batch.ndim != 4:
        raise ValueError(f"expected (C,H,W) or (N,C,H,W) input, got {x0.shape}")
    y = np.stack([degrade(x, spec, make_rng(args.seed, 2, i)) for i, x in enumerate(batch)])
    save_image_or_tensor(args.out, y[0] if single else y)
    if args.hq_out:
        save_image_or_tensor(args.hq_out, x0)
    if args.pair:
        write_tensor(args.pair, np.stack([y, batch]))
    return 0


def cmd_train(args) -> int:
    try:
        config = load_config(args.config)
    except (ValueError, TypeError, json.JSONDecodeError) as err:
        raise UsageError(f"invalid config {args.config}: {err}") from err
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    _banner("train", config.to_dict(), config.seed)
    if args.data:
        data = read_tensor(args.data)
    else:
        data = toy_images(args.toy, args.count, args.size, make_rng(config.seed, 99), config.predictor.channels)
    report = train(config, data, out_dir=args.out, log_every=args.log_every)
    log.info("trained %d iterations in %.1fs -> %s", config.iterations, report.wall_clock, report.checkpoint_path)
    return 0


def _schedule_from_ckpt(ckpt):
    sched = ckpt.meta.get("schedule")
    if sched is None:
        raise ValueError("checkpoint carries no schedule metadata")
    return build_schedule(ScheduleParams(**sched))


def cmd_sample(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    s = _schedule_from_ckpt(ckpt)
    _banner("sample", {"ckpt": ckpt.meta, "input": str(args.input)}, args.seed)
    y = load_image_or_tensor(args.input)
    x0, states = sample(ckpt.params, y, s, make_rng(args.seed, 3), trace=True)
    save_image_or_tensor(args.out, np.clip(x0, 0.0, 1.0))
    if args.trace:
        trace_dir = Path(args.trace)
        trace_dir.mkdir(parents=True, exist_ok=True)
        for i, x in enumerate(states):
            write_tensor(trace_dir / f"x_{s.T - i:04d}.rsten", x)
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    s = _schedule_from_ckpt(ckpt)
    _banner("eval", {"ckpt": ckpt.meta, "testset": str(args.testset)}, args.seed)
    pairs = read_tensor(args.testset)
    if pairs.ndim != 5 or pairs.shape[0] != 2:
        raise ValueError(f"test set must have shape (2, N, C, H, W), got {pairs.shape}")
    metrics = evaluate(ckpt.params, (pairs[0], pairs[1]), s, seed=args.seed)
    metrics.pop("restored")
    _dump_json(metrics, args.out)
    return 0


def cmd_verify(args) -> int:
    _banner("verify", {"suite": args.suite, "chains": args.chains}, args.seed)
    reports = run_suite(args.suite, seed=args.seed, n_chains=args.chains)
    table = format_table(reports)
    sys.stdout.write(table + "\n")
    records = [r.to_dict() for r in reports]
    if args.out:
        _dump_json(records, args.out)
    failed = [r for r in reports if not r.passed]
    if failed:
        sys.stderr.write(format_table(failed) + "\n")
        sys.stderr.write(json.dumps([r.to_dict() for r in failed], indent=2, sort_keys=True) + "\n")
        return 1
    return 0


# --- parser --------------------------------------------------------------------


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="resshift", description="Residual-shifting diffusion toolkit.")
    parser.add_argument("--version", action="version", version=f"resshift {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="verb", required=True, metavar="VERB")
    parser.set_defaults(verbs=sub.choices)

    p = sub.add_parser("schedule", help="export the shifting schedule as CSV")
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--kappa", type=float, required=True)
    p.add_argument("--eta-1-cap", type=float, default=0.001)
    p.add_argument("--eta-T", type=float, default=0.999)
    p.add_argument("--signal-power", type=float, default=1.0)
    p.add_argument("--export", metavar="CSV", help="write CSV here instead of stdout")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("degrade", help="synthesize LQ images")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--in", dest="input", metavar="PATH", help="RSTEN tensor or PGM/PPM image")
    src.add_argument("--toy", choices=TOY_KINDS, help="generate procedural HQ images instead")
    p.add_argument("--count", type=int, default=16, help="toy image count")
    p.add_argument("--size", type=int, default=32, help="toy image side")
    p.add_argument("--channels", type=int, default=1, help="toy image channels")
    p.add_argument("--spec", metavar="JSON", help="degradation spec (default: super-resolution)")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", required=True, metavar="PATH")
    p.add_argument("--hq-out", metavar="PATH", help="also write the HQ input")
    p.add_argument("--pair", metavar="PATH", help="also write a (2, N, C, H, W) LQ/HQ test set")
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("train", help="train the predictor")
    p.add_argument("--config", required=True, metavar="JSON")
    p.add_argument("--data", metavar="RSTEN", help="(N, C, H, W) HQ images; default: procedural")
    p.add_argument("--toy", choices=TOY_KINDS, default="blobs")
    p.add_argument("--count", type=int, default=256)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=_seed, default=None, help="override the config seed")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--log-every", type=int, default=100)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="restore an LQ image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True, metavar="PATH")
    p.add_argument("--out", required=True, metavar="PATH")
    p.add_argument("--trace", metavar="DIR", help="write every x_t")
    p.add_argument("--seed", type=_seed, default=0)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="PSNR/MSE/SSIM on a paired test set")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--testset", required=True, metavar="RSTEN")
    p.add_argument("--out", metavar="JSON")
    p.add_argument("--seed", type=_seed, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run the oracle suite")
    p.add_argument("--suite", choices=("all",) + SUITES, default="all")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--chains", type=int, default=100_000)
    p.add_argument("--out", metavar="JSON", help="machine-readable report")
    p.set_defaults(func=cmd_verify)
    return parser


def _thread_limit():
    n = int(os.environ.get("RESSHIFT_THREADS", "0") or 0)
    if n <= 0:
        return contextlib.nullcontext()
    return threadpool_limits(limits=n)


def parse_and_dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        with _thread_limit():
            return args.func(args)
    except UsageError as err:
        args.verbs[args.verb].print_usage(sys.stderr)
        sys.stderr.write(f"resshift {args.verb}: error: {err}\n")
        return 2
    except (ValueError, OSError, FloatingPointError, RuntimeError) as err:
        sys.stderr.write(f"error: {err}\n")
        return 1


def main() -> None:
    sys.exit(parse_and_dispatch())


if __name__ == "__main__":
    main()
