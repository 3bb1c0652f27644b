"""Command-line interface.

Exit codes: 0 success, 1 invalid input (flags, config, files), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
GRADCHECK_TOLERANCE = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="TOML experiment config")
    p.add_argument("--seed", type=_u64, help="root seed (overrides RFMASK_SEED and the config)")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--quiet", action="store_true", help="suppress progress output")


def _u64(s: str) -> int:
    try:
        v = int(s, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {s!r}")
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _prob(s: str) -> float:
    v = float(s)
    if not 0 <= v <= 1:
        raise argparse.ArgumentTypeError("probability must lie in [0, 1]")
    return v


def build_parser() -> argparse.ArgumentParser:
    from .experiments import EXPERIMENTS

    parser = _Parser(prog="rfmask", description="Fingerprint masking simulator and benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="simulate the measurement grid and write IQ recordings")
    _common(p)

    p = sub.add_parser("train", help="train a model on a dataset and save a checkpoint")
    _common(p)
    p.add_argument("--model", choices=("classifier", "autoencoder", "rawiq"), default="classifier")
    p.add_argument("--dataset", type=Path, help="directory of recordings (simulated inline when absent)")
    p.add_argument("--kind", default="gaussian", help="noise kind of the training cells")
    p.add_argument("--sigmas", type=float, nargs="+", default=[0.0], help="noise levels to train on")
    p.add_argument("--device", type=int, default=0, help="target device (autoencoder)")

    p = sub.add_parser("evaluate", help="run one or all experiments, writing CSV/JSON reports")
    _common(p)
    p.add_argument("--experiment", choices=EXPERIMENTS + ("all",), default="accuracy-vs-sigma")
    p.add_argument("--dataset", type=Path, help="directory of recordings (simulated inline when absent)")

    p = sub.add_parser("protocol-sim", help="Monte-Carlo selective-disclosure simulation")
    _common(p)
    p.add_argument("--dataset", type=Path)
    p.add_argument("--iterations", type=int, help="Monte-Carlo iterations (default from config)")

    p = sub.add_parser("psucc", help="majority-vote success probability")
    _common(p)
    p.add_argument("--p", type=_prob, default=0.96, help="per-round success probability")
    p.add_argument("--w", type=int, help="rounds; prints a single value")
    p.add_argument("--deltas", type=float, nargs="*", default=[0.1, 0.2, 0.3, 0.4, 0.5])
    p.add_argument("--w-max", type=int, default=15)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks of every model")
    _common(p)
    return parser


def _log(args):
    if args.quiet:
        return lambda *_: None
    return lambda *a: print(*a, file=sys.stderr, flush=True)


def _cmd_generate(args, cfg, log) -> int:
    from .dataset import generate_dataset

    t0 = time.perf_counter()
    out = Path(cfg.out) / "dataset"
    recs = generate_dataset(cfg, out)
    log(f"wrote {len(recs)} recordings to {out} in {time.perf_counter() - t0:.1f}s")
    return EXIT_OK


def _cmd_train(args, cfg, log) -> int:
    from ..learn import save_model, train_autoencoder, train_classifier, train_rawiq_classifier
    from .dataset import Dataset
    from .experiments import Runner

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    runner = Runner(cfg, Dataset(cfg, args.dataset), out, log)
    rng = np.random.default_rng([cfg.seed, 7])
    if args.model == "classifier":
        trained = runner.model_for(args.kind, args.sigmas, "cli")
        path = save_model(trained, out / "classifier.ckpt")
    elif args.model == "autoencoder":
        if not 0 <= args.device < cfg.dataset.devices:
            raise ConfigError("device out of range")
        sp = runner.split_images("none", 0.0)
        x = np.concatenate([sp["train"][0][sp["train"][1] == args.device], sp["val"][0][sp["val"][1] == args.device]])
        trained, th = train_autoencoder(x, cfg.autoencoder, rng)
        path = save_model(trained, out / f"autoencoder_dev{args.device:02d}.ckpt", th)
    else:
        xs, ys = [], []
        for d in range(cfg.dataset.devices):
            for s in args.sigmas:
                ch = runner.ds.chunks(d, args.kind, s, cfg.rawiq.length)
                xs.append(ch)
                ys.append(np.full(len(ch), d))
        trained = train_rawiq_classifier(np.concatenate(xs), np.concatenate(ys), cfg.rawiq, rng)
        path = save_model(trained, out / "rawiq.ckpt")
    log(f"saved {path}")
    print(path)
    return EXIT_OK


def _cmd_evaluate(args, cfg, log) -> int:
    from .dataset import Dataset
    from .experiments import EXPERIMENTS, Runner

    runner = Runner(cfg, Dataset(cfg, args.dataset), log=log)
    names = EXPERIMENTS if args.experiment == "all" else (args.experiment,)
    for name in names:
        s = runner.run(name)
        log(f"{name}: done in {s['wall_clock_s']:.1f}s -> {runner.out / s['csv']}")
    return EXIT_OK


def _cmd_protocol(args, cfg, log) -> int:
    from .dataset import Dataset
    from .experiments import Runner

    if args.iterations is not None and args.iterations < 1:
        raise ConfigError("--iterations must be >= 1")
    runner = Runner(cfg, Dataset(cfg, args.dataset), log=log)
    s = runner.disclosure(args.iterations)
    print(json.dumps({k: s[k] for k in ("legit_accuracy", "adversary_accuracy", "gap")}, sort_keys=True))
    return EXIT_OK


def _cmd_psucc(args, cfg, log) -> int:
    from .. import protocol

    if args.w is not None:
        if args.w < 1:
            raise ConfigError("--w must be >= 1")
        print(f"{protocol.p_succ(args.w, args.p):.6f}")
        return EXIT_OK
    if args.w_max < 1:
        raise ConfigError("--w-max must be >= 1")
    table = protocol.psucc_curves(args.p, tuple(args.deltas), args.w_max)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = table.to_csv(out / "psucc.csv")
    log(f"wrote {path}")
    return EXIT_OK


def run_gradchecks(seed: int = 0) -> dict:
    """Relative gradient errors of every trainable architecture on small random batches."""
    from ..learn import ImageClassifier, LinearModel, RawIQClassifier, SparseAutoencoder, gradient_check

    rng = np.random.default_rng(seed)
    results = {}
    lin = LinearModel(6, 2, rng)
    results["linear"] = gradient_check(lin, rng.standard_normal((8, 6)), rng.standard_normal((8, 2)), rng=rng)
    clf = ImageClassifier(32, 10, rng=rng)
    _jitter(clf, rng)
    results["image_classifier"] = gradient_check(clf, rng.uniform(0, 1, (4, 32, 32)), np.arange(4), rng=rng)
    raw = RawIQClassifier(64, 10, rng=rng)
    _jitter(raw, rng)
    results["rawiq_classifier"] = gradient_check(raw, rng.standard_normal((4, 128)), np.arange(4), rng=rng)
    ae = SparseAutoencoder(64, 16, rng=rng)
    results["sparse_autoencoder"] = gradient_check(ae, rng.uniform(0, 1, (6, 64)), rng=rng)
    return results


def _jitter(model, rng):
    # non-zero biases keep ReLUs off their kink; a larger output layer gives gradients some size
    for k, v in model.params.items():
        if k.endswith("_b"):
            v += rng.normal(0, 0.1, v.shape)
    out = [k for k in model.params if k.endswith("_w")][-1]
    model.params[out] *= 300


def _cmd_gradcheck(args, cfg, log) -> int:
    res = run_gradchecks(cfg.seed)
    ok = True
    for name, err in res.items():
        good = err < GRADCHECK_TOLERANCE
        ok &= good
        print(f"{name:20s} {err:.3e} {'ok' if good else 'FAIL'}")
    return EXIT_OK if ok else EXIT_RUNTIME


COMMANDS = {"generate": _cmd_generate, "train": _cmd_train, "evaluate": _cmd_evaluate,
            "protocol-sim": _cmd_protocol, "psucc": _cmd_psucc, "gradcheck": _cmd_gradcheck}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as e:  # --help
        return EXIT_OK if not e.code else EXIT_INVALID
    try:
        cfg = load_config(args.config, seed=args.seed, out=str(args.out) if args.out else None)
        return COMMANDS[args.command](args, cfg, _log(args))
    except (ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as e:  # noqa: BLE001 - the CLI maps every other failure to exit 2
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
