"""Command-line entry point: ``hetsheaf <command> ...``.

Exit codes: 0 on success, 1 on validation errors (bad input, config or
usage), 2 on numeric errors (non-finite values, failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import load_dataset, save_dataset
from .errors import NumericError, ValidationError
from .synth import SYNTH_KINDS, generate
from .train import (RunConfig, build_model, evaluate, gradcheck_model, prepare_problem, run_seeds, schema_of,
                    sweep, train)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _key_values(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValidationError(f"expected key=value, got {item!r}")
        out[key] = _parse_value(value)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hetsheaf", description="Heterogeneous sheaf diffusion networks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model (or one per seed) from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", type=int, default=None, help="run seeds 0..N-1 and report mean/std")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=None, help="split seed (default: the training seed)")

    p = sub.add_parser("synth", help="write a synthetic dataset directory")
    p.add_argument("--kind", required=True, choices=SYNTH_KINDS)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", action="append", metavar="KEY=VALUE", help="generator argument, e.g. n=400")

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model on the 6-node fixture")
    p.add_argument("--config", required=True)
    p.add_argument("--tolerance", type=float, default=1e-4)

    p = sub.add_parser("inspect-sheaf", help="dump the dense normalized Laplacian of an untrained model")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--layer", type=int, default=0)

    p = sub.add_parser("sweep", help="train every point of a Cartesian grid")
    p.add_argument("--grid", required=True)
    p.add_argument("--out", default=None)
    return parser


def _load_config(args) -> RunConfig:
    run = RunConfig.from_file(args.config)
    overrides = _key_values(getattr(args, "set", None))
    return run.replace(**overrides) if overrides else run


def _cmd_train(args) -> int:
    run = _load_config(args)
    if args.seeds:
        result = run_seeds(run, range(args.seeds))
        print(json.dumps(result["summary"], indent=2, sort_keys=True))
    else:
        print(train(run).report.to_json())
    return 0


def _cmd_eval(args) -> int:
    if not Path(args.ckpt).exists():
        raise ValidationError(f"checkpoint not found: {args.ckpt}")
    print(evaluate(args.ckpt, args.data, args.seed).to_json())
    return 0


def _cmd_synth(args) -> int:
    dataset = generate(args.kind, args.seed, **_key_values(args.size))
    save_dataset(dataset, args.out)
    print(f"wrote {args.kind} ({dataset.graph}) to {args.out}")
    return 0


def _cmd_gradcheck(args) -> int:
    report = gradcheck_model(_load_config(args), tolerance=args.tolerance)
    print(report.summary())
    if not report.passed:
        raise NumericError(f"gradient check failed for {len(report.failures)} parameter(s)")
    return 0


def _cmd_inspect(args) -> int:
    run = _load_config(args)
    dataset = load_dataset(run.dataset)
    if not 0 <= args.layer < run.model.layers:
        raise ValidationError(f"layer must lie in [0, {run.model.layers}), got {args.layer}")
    problem = prepare_problem(dataset, run)
    model = build_model(run, schema_of(dataset), dataset.labels.num_classes if dataset.task == "nc" else None)
    encoder = model.encoder
    with ad.no_grad():
        H = encoder(problem.graph, problem.inputs)
        delta = encoder.laplacian(problem.graph, H.layers[args.layer], args.layer)
    np.savetxt(args.out, delta.to_dense(), fmt="%.17g", delimiter="\t")
    print(f"wrote {delta.num_nodes * delta.d}x{delta.num_nodes * delta.d} Laplacian of layer {args.layer} to {args.out}")
    return 0


def _cmd_sweep(args) -> int:
    path = Path(args.grid)
    try:
        grid = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ValidationError(f"cannot read grid {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    results = sweep(grid, args.out)
    print(json.dumps(results[0], indent=2, sort_keys=True))
    return 0


COMMANDS = {"train": _cmd_train, "eval": _cmd_eval, "synth": _cmd_synth, "gradcheck": _cmd_gradcheck,
            "inspect-sheaf": _cmd_inspect, "sweep": _cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
