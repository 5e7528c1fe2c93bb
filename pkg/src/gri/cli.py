"""Command-line entry point: gen-data, train, eval, ood.

Every run resolves its configuration (file values overridden by flags),
echoes it to <out>/resolved.json, and derives all randomness from --seed.
Exit codes: 0 success, 2 configuration or input error, 3 training
divergence (the last finite checkpoint is still written).

Output paths are joined under $GRI_OUTPUT_ROOT when it is set.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import torch

from . import __version__
from .data import (
    generate_dataset,
    load_dataset,
    load_natural_log,
    make_ood_dataset,
    write_dataset,
    write_standin_log,
)
from .errors import DivergenceError, GriError, InvalidArgumentError
from .evaluation import EvalReport, evaluate_model, ood_evaluate
from .models import ModelBundle, build_bundle, tensorize
from .scenarios import get_scenario
from .training import (
    TRAINERS,
    TrainConfig,
    read_log,
    train_expert,
    write_log,
)

NATURAL = ("cf_natural", "lc_natural")


def _out_dir(path: str) -> str:
    root = os.environ.get("GRI_OUTPUT_ROOT", "")
    full = os.path.join(root, path) if root else path
    os.makedirs(full, exist_ok=True)
    return full


def _write_resolved(out: str, payload: dict) -> None:
    payload = dict(payload)
    payload["package_version"] = __version__
    with open(os.path.join(out, "resolved.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _train_config(args) -> TrainConfig:
    base = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            base = json.load(fh)
    cfg = TrainConfig.from_dict(base)
    for name in ("iterations", "batch_size", "lr", "seed"):
        val = getattr(args, name, None)
        if val is not None:
            setattr(cfg, "n_iterations" if name == "iterations" else name, val)
    return cfg


def cmd_gen_data(args) -> int:
    if args.n < 1:
        raise InvalidArgumentError("need at least one sample")
    scenario = get_scenario(args.scenario)
    out = _out_dir(args.out)
    if args.scenario in NATURAL:
        log_path = args.log
        if log_path is None and args.standin_segments:
            log_path = os.path.join(out, "standin_log.csv")
            write_standin_log(log_path, scenario, args.standin_segments, args.seed)
        if log_path is None or not os.path.exists(log_path):
            raise InvalidArgumentError(
                "natural scenarios need --log (or --standin-segments)"
            )
        samples = load_natural_log(log_path, scenario)[: args.n]
        if len(samples) < args.n:
            raise InvalidArgumentError(
                f"log provides {len(samples)} segments, {args.n} requested"
            )
    else:
        if args.expert is None or not os.path.exists(args.expert):
            raise InvalidArgumentError("expert checkpoint not found")
        bundle = ModelBundle.load(args.expert)
        if bundle.scenario.name != scenario.name:
            raise InvalidArgumentError(
                f"checkpoint is for {bundle.scenario.name!r}, not {args.scenario!r}"
            )
        samples = generate_dataset(scenario, bundle, args.n, args.seed)
    manifest = write_dataset(out, scenario, samples, seed=args.seed)
    _write_resolved(out, {
        "command": "gen-data",
        "scenario": args.scenario,
        "n": args.n,
        "seed": args.seed,
        "counts": manifest.counts,
    })
    print(f"wrote {sum(manifest.counts.values())} samples to {out}")
    return 0


def cmd_train(args) -> int:
    scenario = get_scenario(args.scenario)
    cfg = _train_config(args)
    out = _out_dir(args.out)
    _write_resolved(out, {
        "command": "train",
        "scenario": args.scenario,
        "model": args.model,
        "train_config": cfg.to_dict(),
        "data": args.data,
        "seed": cfg.seed,
    })
    if args.dry_run:
        print("configuration valid")
        return 0

    ckpt = os.path.join(out, "checkpoint.npz")
    log_path = os.path.join(out, "train_log.jsonl")
    prev_rows: list[dict] = []
    start = 0
    if args.resume:
        if not (os.path.exists(ckpt) and os.path.exists(log_path)):
            raise InvalidArgumentError("nothing to resume from")
        bundle = ModelBundle.load(ckpt)
        prev_rows = read_log(log_path)
        start = prev_rows[-1]["iteration"] + 1 if prev_rows else 0
    else:
        bundle = build_bundle(scenario, args.model, seed=cfg.seed)

    kwargs = {"bundle": bundle, "start_iteration": start}
    if args.model == "expert":
        runner = lambda: train_expert(scenario, cfg, **kwargs)
    else:
        if args.data is None:
            raise InvalidArgumentError(f"model {args.model!r} trains from --data")
        data_scenario, samples = load_dataset(args.data, "train")
        if data_scenario.name != scenario.name:
            raise InvalidArgumentError("dataset scenario does not match --scenario")
        batch = tensorize(samples)
        _, val = load_dataset(args.data, "val")
        kwargs["eval_batch"] = tensorize(val) if val else None
        runner = lambda: TRAINERS[args.model](scenario, batch, cfg, **kwargs)

    try:
        result = runner()
    except DivergenceError as exc:
        # the trainer restored the last finite parameters before raising
        bundle.save(ckpt)
        print(f"error: {exc}", file=sys.stderr)
        return 3
    result.bundle.save(ckpt)
    write_log(prev_rows + result.log, log_path)
    last = result.log[-1]
    print(f"trained {args.model} for {len(result.log)} iterations; final {last}")
    return 0


def cmd_eval(args) -> int:
    if not os.path.exists(args.checkpoint):
        raise InvalidArgumentError("checkpoint not found")
    bundle = ModelBundle.load(args.checkpoint)
    split_file = os.path.join(args.data, f"{args.split}.traj")
    if not os.path.exists(split_file):
        raise InvalidArgumentError(f"split {args.split!r} not found in {args.data}")
    scenario, samples = load_dataset(args.data, args.split)
    if scenario.name != bundle.scenario.name:
        raise InvalidArgumentError(
            f"checkpoint is for {bundle.scenario.name!r}, dataset for {scenario.name!r}"
        )
    batch = tensorize(samples)
    report = evaluate_model(bundle, batch, permute=args.permute)
    out = _out_dir(args.out)
    report.save(out)
    _write_resolved(out, {
        "command": "eval",
        "checkpoint": args.checkpoint,
        "data": args.data,
        "split": args.split,
        "permute": args.permute,
        "seed": args.seed,
    })
    print(report.to_text(), end="")
    return 0


def cmd_ood(args) -> int:
    if not os.path.exists(args.checkpoint):
        raise InvalidArgumentError("checkpoint not found")
    bundle = ModelBundle.load(args.checkpoint)
    scenario, samples = load_dataset(args.data, args.split)
    if scenario.name != bundle.scenario.name:
        raise InvalidArgumentError("checkpoint and dataset scenarios differ")
    if args.deltas is None and args.dx is None:
        raise InvalidArgumentError("pass --deltas or --dx")
    sweep = args.deltas if args.deltas is not None else args.dx
    key = "delta" if args.deltas is not None else "dx"
    rows = []
    for value in sweep:
        cases = make_ood_dataset(samples, scenario, **{key: value})
        if not cases:
            print(f"warning: sweep point {value} produced no cases", file=sys.stderr)
            continue
        metrics = ood_evaluate(
            bundle, tensorize(cases), delta_f=args.delta_f, delta_c=args.delta_c
        )
        metrics[key] = value
        rows.append(metrics)
    report = EvalReport(
        scenario=scenario.name,
        model=bundle.model,
        n_samples=len(samples),
        metrics={},
        ood={"sweep": rows, "key": key},
    )
    out = _out_dir(args.out)
    report.save(out)
    _write_resolved(out, {
        "command": "ood",
        "checkpoint": args.checkpoint,
        "data": args.data,
        "split": args.split,
        "sweep": {key: list(sweep)},
        "delta_f": args.delta_f,
        "delta_c": args.delta_c,
        "seed": args.seed,
    })
    print(report.to_text(), end="")
    return 0


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gri", description=__doc__)
    parser.add_argument("--threads", type=int, default=None, help="cap torch worker threads")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate or ingest a dataset")
    p.add_argument("--scenario", required=True)
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--expert", default=None, help="expert checkpoint (synthetic scenarios)")
    p.add_argument("--log", default=None, help="recorded log CSV (natural scenarios)")
    p.add_argument("--standin-segments", type=int, default=0,
                   help="synthesize a stand-in log with this many segments")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--scenario", required=True)
    p.add_argument("--model", required=True,
                   choices=("expert", "gri", "gri_airl", "gri_vairl", "nri", "supervised"))
    p.add_argument("--data", default=None, help="dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="training config JSON")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dry-run", action="store_true")
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--permute", action="store_true",
                   help="also report the best label-permutation accuracy")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ood", help="headway-perturbation sweep on the studied pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--deltas", type=_float_list, default=None,
                   help="comma-separated relative headway shifts")
    p.add_argument("--dx", type=_float_list, default=None,
                   help="comma-separated absolute initial headways")
    p.add_argument("--delta-f", dest="delta_f", type=float, default=2.0)
    p.add_argument("--delta-c", dest="delta_c", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ood)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads:
        torch.set_num_threads(args.threads)
    try:
        return args.func(args)
    except (GriError, FileNotFoundError, json.JSONDecodeError) as exc:
        if isinstance(exc, DivergenceError):
            print(f"error: {exc}", file=sys.stderr)
            return 3
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
