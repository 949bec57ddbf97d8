"""Command-line interface: train, eval, ablate, gradcheck, gen-data, verify."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import ConfigError


def _load_base_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return RunConfig.from_json(Path(path).read_text())


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    over = {}
    mapping = {"seed": "seed", "precision": "precision", "frames": "frames_train",
               "input_mode": "input_mode", "mask_mode": "mask_mode", "steps": "steps"}
    for attr, field in mapping.items():
        val = getattr(args, attr, None)
        if val is not None:
            over[field] = val
    if getattr(args, "mvm", None) is not None:
        over["mvm"] = args.mvm == "on"
    return cfg.replace(**over) if over else cfg


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--seed", type=int)
    p.add_argument("--precision", choices=["f32", "f64"])
    p.add_argument("--frames", type=int, help="training frame count")
    p.add_argument("--input-mode", dest="input_mode",
                   choices=["joint-st", "meanpool", "global-local"])
    p.add_argument("--mask-mode", dest="mask_mode",
                   choices=["off", "static", "dynamic-normal", "dynamic-uniform"])
    p.add_argument("--mvm", choices=["on", "off"])
    p.add_argument("--steps", type=int)


def cmd_train(args: argparse.Namespace) -> int:
    from .trainer import final_eval, train
    cfg = _apply_overrides(_load_base_config(args.config), args)
    _, records = train(cfg, args.out)
    acc = final_eval(records)
    print(f"trained {cfg.steps} steps (config {cfg.config_hash()})")
    for fc, a in sorted(acc.items()):
        print(f"  accuracy @ {fc} frames: {a:.3f}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    from .autodiff import Array
    from .checkpoint import load
    from .trainer import evaluate
    raw_params, cfg_dict = load(args.checkpoint)
    cfg = RunConfig.from_dict(cfg_dict)
    if cfg.precision != "f32":
        cfg = cfg.replace(precision="f32")  # checkpoint payloads are float32
    params = {k: Array(v) for k, v in raw_params.items()}
    rng = np.random.default_rng(args.seed if args.seed is not None else cfg.seed)
    for fc in (args.frames_list or cfg.frames_eval):
        acc = evaluate(params, cfg, fc, args.samples, rng)
        print(f"accuracy @ {fc} frames: {acc:.3f}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    from .trainer import run_ablation, table5_grid, table7_grid, table8_grid
    base = _apply_overrides(_load_base_config(args.config), args)
    seeds = tuple(args.seeds) if args.seeds else (0, 1, 2)
    if args.table == 5:
        cells = table5_grid(base, seeds)
    elif args.table == 7:
        base = base.replace(input_mode="global-local")
        cells = table7_grid(base, seeds)
    elif args.table == 8:
        cells = table8_grid(base, seeds)
    else:
        raise ConfigError(f"unknown ablation table {args.table}")
    rows = run_ablation(cells, args.out, jobs=args.jobs, force=args.force)
    for row in rows:
        accs = " ".join(f"{k}={v:.3f}" for k, v in sorted(row.items()) if k.startswith("acc@"))
        print(f"{row['label']:<22s} seed={row['seed']} {accs}")
    print(f"summary written to {Path(args.out) / 'summary.csv'}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    from .verify import full_model_gradcheck
    err = full_model_gradcheck(seed=args.seed or 0, n_entries=args.samples)
    print(f"max relative error over {args.samples} sampled parameters: {err:.3e}")
    if err < 1e-4:
        print("PASS (threshold 1e-4)")
        return 0
    print("FAIL (threshold 1e-4)")
    return 1


def cmd_gen_data(args: argparse.Namespace) -> int:
    from .data import dump_tasks, gen_batch
    rng = np.random.default_rng(args.seed or 0)
    tasks = gen_batch(args.task, args.n, args.frames or 16, rng,
                      g=args.grid_size, split=args.split)
    dump_tasks(args.out, tasks)
    print(f"wrote {len(tasks)} {args.task} tasks to {args.out}")
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    from .verify import run_all
    failures = run_all(verbose=True)
    print(f"{'OK' if failures == 0 else 'FAILED'}: {failures} failing invariant(s)")
    return 0 if failures == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stseq",
                                     description="spatial-temporal token sequence lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write metrics + checkpoint")
    _add_common_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint at given frame counts")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--frames", dest="frames_list", type=int, action="append",
                   help="frame count; repeatable")
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="run a preset ablation grid")
    _add_common_flags(p)
    p.add_argument("--table", type=int, required=True, choices=[5, 7, 8])
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--force", action="store_true", help="overwrite existing cells")
    p.add_argument("--seeds", type=int, nargs="+")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=50)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("gen-data", help="dump synthetic tasks as JSON lines")
    p.add_argument("--task", required=True, choices=["reversal", "direction", "count", "static"])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--frames", type=int)
    p.add_argument("--grid-size", dest="grid_size", type=int, default=16)
    p.add_argument("--seed", type=int)
    p.add_argument("--split", choices=["train", "test", "all"], default="all")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("verify", help="run the full invariant suite")
    p.set_defaults(fn=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
