"""Command-line entry point: ``weavematch {generate,solve,train,eval,bench}``.

Every flag can also be given in a JSON file passed with ``--config``; keys are
the flag names with dashes replaced by underscores, and explicit flags win.
Outputs go to ``--out``, else to $WEAVEMATCH_OUT, else to ``./weavematch-out``.

Exit codes: 0 success, 2 invalid configuration or input, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .evalharness import NETWORK, run_benchmark
from .generator import SETTINGS, DatasetSpec, Manifest, read_dataset, write_dataset
from .instance import PreferenceInstance
from .loss import LOSS_KINDS, LossWeights
from .model import ModelConfig, WeaveNet
from .solvers import COST_KINDS, SOLVERS, solve
from .trainer import NumericalError, TrainConfig, train

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
OUT_ENV = "WEAVEMATCH_OUT"
VARIANT_ALIASES = {"sym": "symmetric", "asym": "asymmetric", "dual": "dual",
                   "symmetric": "symmetric", "asymmetric": "asymmetric"}
DEFAULT_BASELINES = "gs_best,polymin,dacc,powerbalance,oracle"


class ConfigError(ValueError):
    pass


def _out_dir(args) -> Path:
    out = args.out or os.environ.get(OUT_ENV) or "weavematch-out"
    return Path(out)


def _dataset_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dist", choices=sorted(SETTINGS), default="UU", help="preference setting")
    p.add_argument("--n", type=int, default=10, help="agents per side")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--histogram", help="JSON histogram for the Lib setting (default: bundled example)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="weavematch", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    parser.commands = {}  # name -> subparser, used by --config handling

    def command(name: str, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_)
        parser.commands[name] = p
        p.add_argument("--config", help="JSON file mirroring the flags")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./weavematch-out)")
        return p

    g = command("generate", "sample a dataset directory")
    _dataset_args(g)
    g.add_argument("--count", type=int, default=1000)

    s = command("solve", "run one classical solver")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--data", help="dataset directory or manifest")
    src.add_argument("--instance", help="single instance JSON; the matching is printed")
    s.add_argument("--algo", choices=sorted(SOLVERS), default="gs")
    s.add_argument("--cost", choices=COST_KINDS, default="seq")

    t = command("train", "train WeaveNet on freshly sampled instances")
    _dataset_args(t)
    t.add_argument("--arch", default="18,32,64", help="L,D,Dp")
    t.add_argument("--variant", choices=sorted(VARIANT_ALIASES), default="sym")
    t.add_argument("--loss", choices=LOSS_KINDS, default="sm")
    t.add_argument("--lm", choices=("cosine", "euclidean"), default="cosine", help="matrix-constraint loss")
    t.add_argument("--iters", type=int, default=200_000)
    t.add_argument("--batch-size", type=int, default=8)
    t.add_argument("--lr", type=float, default=1e-4)
    defaults = LossWeights()
    for key in ("m", "s", "f", "b"):
        t.add_argument(f"--lambda-{key}", type=float, default=getattr(defaults, key))
    t.add_argument("--val", help="validation dataset directory (default: sample --val-count instances)")
    t.add_argument("--val-count", type=int, default=1000)
    t.add_argument("--val-seed", type=int, help="seed of the sampled validation set (default: seed + 1)")
    t.add_argument("--val-every", type=int, default=1000)
    t.add_argument("--grad-clip", type=float)

    e = command("eval", "evaluate a checkpoint on a dataset")
    e.add_argument("--data", required=False)
    e.add_argument("--checkpoint", required=False)
    e.add_argument("--binarize", choices=("argmax", "hungarian"), default="argmax")
    e.add_argument("--cost", choices=COST_KINDS, default="seq")

    b = command("bench", "compare baselines (and optionally a checkpoint)")
    b.add_argument("--data", required=False)
    b.add_argument("--methods", default=DEFAULT_BASELINES, help="comma-separated solver names")
    b.add_argument("--checkpoint")
    b.add_argument("--binarize", choices=("argmax", "hungarian"), default="argmax")
    b.add_argument("--cost", choices=COST_KINDS, default="seq")
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    try:
        cfg = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    sp = parser.commands[args.command]
    known = {a.dest for a in sp._actions}
    unknown = sorted(set(cfg) - known - {"command"})
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    sp.set_defaults(**{k: v for k, v in cfg.items() if k != "command"})
    return parser.parse_args(argv)


def _require(args, *names: str) -> None:
    missing = [n for n in names if not getattr(args, n, None)]
    if missing:
        raise ConfigError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


def cmd_generate(args) -> int:
    if args.count < 0 or args.n < 1:
        raise ConfigError("--n must be positive and --count non-negative")
    spec = DatasetSpec.named(args.dist, args.n, args.seed, args.count, args.histogram)
    path = write_dataset(spec, _out_dir(args))
    print(path)
    return EXIT_OK


def cmd_solve(args) -> int:
    if args.instance:
        inst = PreferenceInstance.load(args.instance)
        print(json.dumps(solve(inst, args.algo, args.cost).to_dict()))
        return EXIT_OK
    _require(args, "data")
    man = read_dataset(args.data)
    report = run_benchmark(man.instances, [args.algo], args.cost, ids=man.ids)
    for p in report.write(_out_dir(args), f"solve-{args.algo}"):
        print(p)
    return EXIT_OK


def cmd_train(args) -> int:
    spec = DatasetSpec.named(args.dist, args.n, args.seed, 1, args.histogram)
    if args.val:
        val = read_dataset(args.val)
    else:
        val_seed = args.seed + 1 if args.val_seed is None else args.val_seed
        val = Manifest.from_spec(DatasetSpec.named(args.dist, args.n, val_seed, args.val_count, args.histogram))
    mcfg = ModelConfig.from_arch(args.arch, VARIANT_ALIASES[args.variant])
    weights = LossWeights(args.lambda_m, args.lambda_s, args.lambda_f, args.lambda_b)
    tcfg = TrainConfig(dataset=spec, val_set=val, iterations=args.iters, batch_size=args.batch_size, lr=args.lr,
                       weights=weights, loss=args.loss, lm_variant=args.lm, val_every=args.val_every,
                       seed=args.seed, grad_clip=args.grad_clip)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    model = WeaveNet(mcfg, seed=args.seed)
    best, logbook = train(model, tcfg, on_validate=lambda r: print(
        f"iter {r['iteration']}: stable {r['stable_rate']:.1f}%  ls {r['ls']:.5f}", flush=True))
    extra = {"loss": args.loss, "dist": args.dist, "n": args.n, "seed": args.seed, "iterations": args.iters}
    model.save(out / "final.wnckpt", extra)
    model.load_state_arrays(best)
    model.save(out / "best.wnckpt", extra)
    logbook.write_csv(out / "trainlog.csv")
    (out / "config.json").write_text(json.dumps(
        {k: v for k, v in vars(args).items() if k not in ("config", "verbose")}, indent=2))
    print(out / "best.wnckpt")
    return EXIT_OK


def _load_checkpoint(path: str) -> WeaveNet:
    try:
        model, _ = WeaveNet.load(path)
    except (OSError, KeyError) as exc:
        raise ConfigError(f"cannot load checkpoint {path}: {exc}") from exc
    return model


def cmd_eval(args) -> int:
    _require(args, "data", "checkpoint")
    man = read_dataset(args.data)
    model = _load_checkpoint(args.checkpoint)
    report = run_benchmark(man.instances, [NETWORK], args.cost, model, args.binarize, man.ids)
    for p in report.write(_out_dir(args), "eval"):
        print(p)
    m = report.summary["methods"][NETWORK]
    print(f"stable {m['stable_rate']:.1f}%  mean {args.cost} {m[f'mean_{args.cost}']}")
    return EXIT_OK


def cmd_bench(args) -> int:
    _require(args, "data")
    man = read_dataset(args.data)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    model = None
    if args.checkpoint:
        model = _load_checkpoint(args.checkpoint)
        methods.append(NETWORK)
    report = run_benchmark(man.instances, methods, args.cost, model, args.binarize, man.ids)
    for p in report.write(_out_dir(args), "bench"):
        print(p)
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "solve": cmd_solve, "train": cmd_train, "eval": cmd_eval, "bench": cmd_bench}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
        return COMMANDS[args.command](args)
    except SystemExit as exc:  # argparse usage errors
        return EXIT_CONFIG if exc.code else EXIT_OK
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FloatingPointError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
