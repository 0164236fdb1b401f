"""``dbuffer`` command line: train, enhance, verify, bench, make-synth-data.

Exit codes: 0 ok, 1 usage, 2 validation, 3 runtime.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("diffusion_buffer")


class ValidationError(Exception):
    """Bad user input detected after argument parsing (exit code 2)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _common(p):
    p.add_argument("--config", help="INI run configuration")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--sde", choices=("ouve", "bbed"), default=None, help="override the SDE preset")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dbuffer", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("train", help="train the score network")
    _common(p)
    p.add_argument("--data", help="training directory (overrides data.train_dir)")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--buffer", type=int, metavar="B")
    p.add_argument("--resume", metavar="CKPT", help="continue from a checkpoint written by train")

    p = sub.add_parser("enhance", help="enhance a WAV file")
    _common(p)
    p.add_argument("input")
    p.add_argument("output")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--oracle-clean", metavar="WAV",
                     help="use the ideal per-bin Gaussian score built from this clean reference")
    p.add_argument("--mode", choices=("db", "vanilla"), default="db")
    p.add_argument("--buffer", type=int, metavar="B")
    p.add_argument("--steps", type=int, metavar="N", default=60, help="reverse steps in vanilla mode")
    p.add_argument("--K", type=int, help="window length in frames")
    p.add_argument("--reference", metavar="WAV", help="clean reference for SI-SDR / segSNR")
    p.add_argument("--report", metavar="PATH")
    p.add_argument("--timings", metavar="CSV", help="per-hop timings")

    p = sub.add_parser("verify", help="run the oracle verification suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", metavar="PATH")

    p = sub.add_parser("bench", help="streaming RTF of the reference network")
    _common(p)
    p.add_argument("--mode", choices=("db", "vanilla"), default="db")
    p.add_argument("--buffer", type=int, metavar="B", default=20)
    p.add_argument("--steps", type=int, metavar="N", default=1)
    p.add_argument("--frames", type=int, default=40)
    p.add_argument("--report", metavar="PATH")

    p = sub.add_parser("make-synth-data", help="write paired clean/noisy WAVs")
    p.add_argument("out_dir")
    p.add_argument("--pairs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=2.0)
    p.add_argument("--snr", type=float, default=None, help="fixed SNR in dB (default: uniform 0..15)")
    return parser


# --------------------------------------------------------------------------
# helpers


def _run_config(args):
    from .config import RunConfig, load_config
    from .sde import PRESETS

    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "sde", None):
        cfg.sde = PRESETS[f"{args.sde}-paper"]
        cfg.sde_preset = f"{args.sde}-paper"
    if getattr(args, "seed", None) is not None:
        cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
    return cfg


def load_pair_dir(path, stft):
    """Read a make-synth-data directory into compressed ``(clean, noisy)`` spectrogram pairs."""
    from .spectral import analysis
    from .wavio import read_wav

    manifest_path = os.path.join(path, "manifest.json")
    if not os.path.isfile(manifest_path):
        raise ValidationError(f"dataset not found: {manifest_path} does not exist")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    pairs = []
    for entry in manifest["pairs"]:
        clean = read_wav(os.path.join(path, entry["clean"]), expected_rate=stft.sample_rate)
        noisy = read_wav(os.path.join(path, entry["noisy"]), expected_rate=stft.sample_rate)
        pairs.append((analysis(clean, stft).data, analysis(noisy, stft).data))
    if not pairs:
        raise ValidationError(f"dataset {path} is empty")
    return pairs


def _rng_state_to_json(rng):
    return json.loads(json.dumps(rng.bit_generator.state))


def _restore_training(ckpt, state):
    import torch

    from .checkpoint import load_weights
    from .train import AdamMoments

    load_weights(state.net, ckpt.group("params"))
    ema = ckpt.group("ema")
    if ema:
        for k, v in ema.items():
            state.ema.shadow[k] = torch.from_numpy(np.array(v)).to(state.ema.shadow[k].dtype)
    m, v = ckpt.group("adam_m"), ckpt.group("adam_v")
    steps = ckpt.header.get("adam", {}).get("steps", {})
    for k in state.optimizer.moments:
        if k in m:
            state.optimizer.moments[k] = AdamMoments(m=np.array(m[k]), v=np.array(v[k]), step=int(steps.get(k, 0)))
    info = ckpt.header["extra"].get("train", {})
    state.iteration = int(info.get("iteration", 0))
    state.epoch = int(info.get("epoch", 0))
    if "rng" in info:
        state.rng.bit_generator.state = info["rng"]


# --------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    import torch

    from .checkpoint import check_compatible, load_checkpoint, save_checkpoint
    from .dbuffer import linear_grid
    from .score import ScoreNet
    from .train import LossTrace, TrainState, train_epoch

    cfg = _run_config(args)
    if args.epochs is not None:
        cfg.train = dataclasses.replace(cfg.train, epochs=args.epochs)
    if args.buffer is not None:
        cfg.train = dataclasses.replace(cfg.train, B=args.buffer)
    data_dir = args.data or cfg.data.get("train_dir")
    if not data_dir:
        raise ValidationError("no training data: pass --data or set data.train_dir")
    out_dir = args.out or cfg.output.get("dir", ".")
    os.makedirs(out_dir, exist_ok=True)
    ckpt_path = cfg.output.get("checkpoint") or os.path.join(out_dir, "model.ckpt")
    trace_path = cfg.output.get("trace") or os.path.join(out_dir, "loss_trace.csv")

    dataset = load_pair_dir(data_dir, cfg.stft)
    torch.set_num_threads(1)
    torch.manual_seed(cfg.train.seed)
    net = ScoreNet(cfg.net, cfg.sde)
    state = TrainState.create(net, cfg.train)
    grid = linear_grid(cfg.sde, cfg.train.B)
    if args.resume:
        ckpt = load_checkpoint(args.resume)
        check_compatible(ckpt, sde=cfg.sde, grid=grid, K=cfg.train.K, stft=cfg.stft)
        _restore_training(ckpt, state)
        log.info("resumed at epoch %d, iteration %d", state.epoch, state.iteration)
    elif os.path.exists(trace_path):
        os.remove(trace_path)
    trace = LossTrace(trace_path)
    try:
        while state.epoch < cfg.train.epochs:
            state, losses = train_epoch(state, dataset, cfg.train, cfg.sde, trace_writer=trace)
            print(f"epoch {state.epoch}/{cfg.train.epochs}  loss {np.mean(losses):.6g}")
            extra = {"train": {"iteration": state.iteration, "epoch": state.epoch,
                               "rng": _rng_state_to_json(state.rng), "config": cfg.train.to_dict()}}
            save_checkpoint(ckpt_path, net, grid, cfg.train.K, cfg.stft, ema=state.ema,
                            adam=state.optimizer, extra=extra)
    finally:
        trace.close()
    print(f"checkpoint: {ckpt_path}")
    print(f"loss trace: {trace_path}")
    return EXIT_OK


def cmd_enhance(args) -> int:
    import torch

    from .checkpoint import check_compatible, load_checkpoint
    from .dbuffer import linear_grid
    from .score import LearnedScore, OracleWienerScore
    from .spectral import analysis
    from .stream import run_enhancement_job
    from .wavio import read_wav

    cfg = _run_config(args)
    torch.set_num_threads(1)
    params, stft, grid = cfg.sde, cfg.stft, None
    K = args.K or cfg.train.K
    reference = args.reference
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        stft = ckpt.stft
        if args.sde or args.config:
            check_compatible(ckpt, sde=params)
        params = ckpt.sde
        if args.buffer is not None and args.mode == "db":
            check_compatible(ckpt, grid=linear_grid(params, args.buffer))
        if args.K is not None:
            check_compatible(ckpt, K=args.K)
        grid, K = ckpt.grid, ckpt.K
        score = LearnedScore(ckpt.build_net(use_ema=True))
    else:
        clean = analysis(read_wav(args.oracle_clean, expected_rate=stft.sample_rate), stft)
        noisy = analysis(read_wav(args.input, expected_rate=stft.sample_rate), stft)
        if clean.data.shape != noisy.data.shape:
            raise ValidationError("--oracle-clean and input differ in length")
        score = OracleWienerScore(params, clean, noisy, mode="stream" if args.mode == "db" else "utterance")
        reference = reference or args.oracle_clean
    B = len(grid) if grid is not None else (args.buffer or cfg.train.B)
    report = run_enhancement_job(args.input, args.output, score, params, args.mode, report_path=args.report,
                                 B=B, N=args.steps, K=K, seed=cfg.train.seed, stft=stft, grid=grid,
                                 reference_wav=reference, timings_csv=args.timings)
    print(report.to_text())
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_verification

    results = run_verification(seed=args.seed, sigma_fn=_sigma_hook())
    lines = [r.line() for r in results]
    for line in lines:
        print(line)
    failed = [r.name for r in results if not r.passed]
    summary = f"{len(results) - len(failed)}/{len(results)} checks passed"
    if failed:
        summary += "; failed: " + ", ".join(failed)
    print(summary)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write("\n".join(lines + [summary]) + "\n")
    return EXIT_VALIDATION if failed else EXIT_OK


def _sigma_hook():
    """Fault injection for the verification suite: ``DBUFFER_CORRUPT_SIGMA=<rel>``
    scales the closed-form sigma by ``1 + rel``."""
    rel = os.environ.get("DBUFFER_CORRUPT_SIGMA")
    if not rel:
        return None
    from . import sde

    factor = 1.0 + float(rel)
    return lambda params, t: sde.sigma(params, t) * factor


def cmd_bench(args) -> int:
    import torch

    from .dbuffer import linear_grid
    from .score import LearnedScore, ScoreNet
    from .sde import complex_normal
    from .stream import DbEngine, VanillaPerHopEngine, measure_rtf

    cfg = _run_config(args)
    torch.set_num_threads(1)
    rng = np.random.default_rng(cfg.train.seed)
    torch.manual_seed(cfg.train.seed)
    score = LearnedScore(ScoreNet(cfg.net, cfg.sde))
    F, K = cfg.stft.num_freqs, cfg.train.K
    if args.mode == "db":
        engine = DbEngine(score, cfg.sde, linear_grid(cfg.sde, args.buffer), K, F, rng)
    else:
        engine = VanillaPerHopEngine(score, cfg.sde, args.steps, K, F, rng)
    source = 0.1 * complex_normal(rng, (F, args.frames))
    report = measure_rtf(engine, source, warmup_steps=min(5, args.frames - 1), hop_ms=cfg.stft.hop_ms)
    report.score_calls = engine.score_calls
    text = report.to_text()
    print(text)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(text)
    return EXIT_OK


def cmd_make_synth_data(args) -> int:
    from .synth import make_dataset

    if args.pairs < 1:
        raise ValidationError("--pairs must be at least 1")
    try:
        manifest = make_dataset(args.out_dir, args.pairs, seed=args.seed, duration=args.duration,
                                snr_db=args.snr)
    except OSError as exc:
        raise ValidationError(f"cannot write to {args.out_dir}: {exc}") from None
    print(f"wrote {2 * len(manifest['pairs'])} files and manifest.json to {args.out_dir}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "enhance": cmd_enhance, "verify": cmd_verify, "bench": cmd_bench,
            "make-synth-data": cmd_make_synth_data}


def main(argv=None) -> int:
    from .checkpoint import CheckpointError
    from .config import ConfigError
    from .wavio import WavFormatError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ValidationError, ConfigError, CheckpointError, WavFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - last-resort runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
