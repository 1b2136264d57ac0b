"""Command-line interface.

Subcommands: ``generate`` (episode files), ``train`` (checkpoint + loss
curve + manifest), ``eval`` (accuracy report CSV), ``trace`` (per-step
JSON + heatmaps), ``selftest`` (gradient/invariant suites).

Every command is driven by an optional JSON config file plus flags;
flags win. Exit codes: 0 success, 1 runtime failure, 2 configuration
error, 3 for a training run that hit the episode cap without reaching
the early-stop threshold. The output root directory comes from
``--out-dir``, else the ``DWM_OUTPUT_ROOT`` environment variable, else
``./runs``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .baseline import BaselineConfig, RecurrentBaseline
from .checkpoint import build_id, load_checkpoint, save_checkpoint, write_manifest
from .errors import ConfigError
from .evaluation import evaluate, record_trace, render_heatmap, write_report_csv, write_trace
from .model import Dwm, DwmConfig
from .selftest import run_all
from .tasks import (
    PHASES,
    TASK_NAMES,
    TaskSpec,
    generate,
    regime_for,
    write_episodes,
)
from .training import TrainConfig, TrainingDivergedError, train, write_curve_csv

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_EPISODE_CAP = 3

MODEL_KINDS = ("dwm", "baseline")


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return data


def _resolve(args, config: dict, key: str, default=None):
    """Flag value if given, else config-file value, else default."""
    flag = getattr(args, key.replace("-", "_"), None)
    if flag is not None:
        return flag
    return config.get(key, default)


def _out_root(args, config: dict) -> Path:
    root = _resolve(args, config, "out_dir") or os.environ.get("DWM_OUTPUT_ROOT", "runs")
    return Path(root)


def build_model(kind: str, task_spec: TaskSpec, model_config: dict, seed: int):
    """Model with widths derived from the task encoding."""
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {kind!r}; choose from {MODEL_KINDS}")
    overrides = dict(model_config)
    for key in ("input_width", "output_width"):
        if key in overrides and overrides[key] not in (None, task_spec.input_width if key == "input_width" else task_spec.data_bits):
            raise ConfigError(f"{key} is derived from the task encoding; remove it from the config")
        overrides.pop(key, None)
    if kind == "dwm":
        cfg = DwmConfig(
            input_width=task_spec.input_width,
            output_width=task_spec.data_bits,
            **overrides,
        )
        return Dwm(cfg, seed=seed)
    cfg = BaselineConfig(
        input_width=task_spec.input_width,
        output_width=task_spec.data_bits,
        **overrides,
    )
    return RecurrentBaseline(cfg, seed=seed)


# -- generate ---------------------------------------------------------------


def cmd_generate(args) -> int:
    config = _load_config(args.config)
    task = _resolve(args, config, "task")
    if task is None:
        raise ConfigError("generate needs --task (or 'task' in the config)")
    phase = _resolve(args, config, "regime", "train")
    seed = int(_resolve(args, config, "seed", 0))
    batch_size = int(_resolve(args, config, "batch_size", 16))
    num_batches = int(_resolve(args, config, "num_batches", 1))
    out = _resolve(args, config, "out")
    if out is None:
        raise ConfigError("generate needs --out (or 'out' in the config)")
    spec = TaskSpec(task, seed=seed)
    regime = regime_for(task, phase)
    episodes = []
    for b in range(num_batches):
        batch = generate(spec, regime, batch_size, batch_index=b)
        for ep in batch:
            ep.meta["batch_index"] = b
        episodes.extend(batch)
    write_episodes(out, episodes)
    lengths = sorted({ep.length for ep in episodes})
    print(
        f"wrote {len(episodes)} episodes ({task}, {phase}) to {out}; "
        f"input width {spec.input_width}, lengths {lengths[0]}..{lengths[-1]}"
    )
    return EXIT_OK


# -- train ------------------------------------------------------------------


def _train_one(payload: dict) -> dict:
    """One training run (worker for --jobs); returns a manifest summary."""
    task_spec = TaskSpec(payload["task"], seed=payload["data_seed"])
    train_cfg = TrainConfig(**payload["training"])
    start_episode = 0
    if payload.get("resume"):
        model, meta = load_checkpoint(payload["resume"])
        start_episode = int(meta.get("episodes", 0))
        if meta.get("task") not in (None, payload["task"]):
            raise ConfigError(
                f"checkpoint was trained on {meta.get('task')!r}, not {payload['task']!r}"
            )
    else:
        model = build_model(
            payload["model"], task_spec, payload["model_config"], payload["param_seed"]
        )
    run_dir = Path(payload["run_dir"])
    run_dir.mkdir(parents=True, exist_ok=True)
    started = time.time()
    result = train(model, task_spec, train_cfg, start_episode=start_episode)
    # persist the best-validation parameters
    for name, arr in result.best_params.items():
        model.params[name].data = arr
    ckpt_path = run_dir / "checkpoint.json"
    save_checkpoint(
        ckpt_path,
        model,
        meta={
            "task": payload["task"],
            "model": payload["model"],
            "seed": payload["param_seed"],
            "episodes": result.episodes,
            "stop_reason": result.stop_reason,
            "best_val_loss": result.best_val_loss,
            "best_val_accuracy": result.best_val_accuracy,
        },
    )
    curve_path = run_dir / "curve.csv"
    write_curve_csv(curve_path, result.curve)
    manifest = {
        "command": "train",
        "task": payload["task"],
        "model": payload["model"],
        "model_config": model.config.to_dict(),
        "training": payload["training"],
        "param_seed": payload["param_seed"],
        "data_seed": payload["data_seed"],
        "resume": payload.get("resume"),
        "build": build_id(),
        "started": payload["started_iso"],
        "elapsed_seconds": round(time.time() - started, 3),
        "episodes": result.episodes,
        "stop_reason": result.stop_reason,
        "best_val_loss": result.best_val_loss,
        "best_val_accuracy": result.best_val_accuracy,
        "artifacts": {"checkpoint": str(ckpt_path), "curve": str(curve_path)},
    }
    write_manifest(run_dir / "manifest.json", manifest)
    return manifest


def cmd_train(args) -> int:
    config = _load_config(args.config)
    task = _resolve(args, config, "task")
    if task is None:
        raise ConfigError("train needs --task (or 'task' in the config)")
    kind = _resolve(args, config, "model", "dwm")
    seeds = args.seed if args.seed else config.get("seeds", [0])
    model_config = dict(config.get("model_config", {}))
    training = dict(config.get("training", {}))
    for key in ("learning_rate", "batch_size", "max_episodes", "memory_size"):
        flag = getattr(args, key, None)
        if flag is not None:
            training[key] = flag
    data_seed = int(_resolve(args, config, "data_seed", config.get("seed", 0)))
    out_root = _out_root(args, config)
    started_iso = time.strftime("%Y-%m-%dT%H:%M:%S")
    if args.resume and len(seeds) > 1:
        raise ConfigError("--resume works with a single seed")
    payloads = []
    for seed in seeds:
        run_dir = out_root / f"{task}-{kind}-seed{seed}"
        payloads.append(
            {
                "task": task,
                "model": kind,
                "model_config": model_config,
                "training": {**training, "seed": int(seed)},
                "param_seed": int(seed),
                "data_seed": data_seed + int(seed),
                "run_dir": str(run_dir),
                "resume": args.resume,
                "started_iso": started_iso,
            }
        )
    # validate configs before spawning workers
    for payload in payloads:
        TrainConfig(**payload["training"])
        if not payload["resume"]:
            build_model(kind, TaskSpec(task, seed=0), model_config, 0)
    if args.jobs > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            manifests = list(pool.map(_train_one, payloads))
    else:
        manifests = [_train_one(p) for p in payloads]
    converged = False
    for manifest in manifests:
        print(
            f"seed {manifest['param_seed']}: {manifest['stop_reason']} after "
            f"{manifest['episodes']} episodes, best val loss {manifest['best_val_loss']:.3g}, "
            f"checkpoint {manifest['artifacts']['checkpoint']}"
        )
        if manifest["stop_reason"] in ("validation-threshold", "train-accuracy"):
            converged = True
    return EXIT_OK if converged else EXIT_EPISODE_CAP


# -- eval -------------------------------------------------------------------


def cmd_eval(args) -> int:
    config = _load_config(args.config)
    model = None
    meta = {}
    if args.oracle:
        model = "oracle"
    elif args.constant:
        model = "constant-half"
    else:
        ckpt = _resolve(args, config, "checkpoint")
        if ckpt is None:
            raise ConfigError("eval needs --checkpoint (or --oracle / --constant)")
        model, meta = load_checkpoint(ckpt)
    task = _resolve(args, config, "task", meta.get("task"))
    if task is None:
        raise ConfigError("eval needs --task (not recorded in the checkpoint)")
    seed = int(_resolve(args, config, "seed", 1000))
    phases = [args.regime] if args.regime else list(PHASES)
    spec = TaskSpec(task, seed=seed)
    rows = []
    for phase in phases:
        row = evaluate(
            model,
            spec,
            phase,
            num_batches=args.num_batches,
            batch_size=args.batch_size,
            memory_size=args.memory_size,
        )
        rows.append(row)
        loss = f", mean loss {row.mean_loss:.4g}" if row.mean_loss is not None else ""
        print(
            f"{row.task} [{row.phase}] {row.model_id}: accuracy {row.accuracy:.4f} "
            f"over {row.episodes} episodes ({row.masked_bits} bits){loss}"
        )
    out = _resolve(args, config, "out")
    if out:
        write_report_csv(out, rows)
        print(f"report written to {out}")
    return EXIT_OK


# -- trace ------------------------------------------------------------------


def cmd_trace(args) -> int:
    config = _load_config(args.config)
    ckpt = _resolve(args, config, "checkpoint")
    if ckpt is None:
        raise ConfigError("trace needs --checkpoint")
    model, meta = load_checkpoint(ckpt)
    if model.kind != "dwm":
        raise ConfigError("traces need a memory model checkpoint (model kind 'dwm')")
    task = _resolve(args, config, "task", meta.get("task"))
    if task is None:
        raise ConfigError("trace needs --task (not recorded in the checkpoint)")
    seed = int(_resolve(args, config, "seed", 2000))
    spec = TaskSpec(task, seed=seed)
    regime = regime_for(task, args.regime)
    episodes = generate(spec, regime, max(1, args.episode_index + 1), batch_index=args.batch_index)
    episode = episodes[args.episode_index]
    out_dir = _out_root(args, config) / f"trace-{task}-{args.regime}"
    out_dir.mkdir(parents=True, exist_ok=True)
    trace, outputs = record_trace(
        model, episode, trace_memory=args.trace_memory, memory_size=args.memory_size
    )
    trace_path = out_dir / "trace.jsonl"
    write_trace(trace_path, trace, episode, outputs=outputs)
    print(f"trace ({episode.length} steps) written to {trace_path}")
    for field in args.heatmap or []:
        img_path = out_dir / f"{field}.pgm"
        render_heatmap(trace_path, field, img_path)
        print(f"heatmap {field} written to {img_path}")
    return EXIT_OK


# -- selftest ---------------------------------------------------------------


def cmd_selftest(args) -> int:
    results = run_all(trials=args.trials)
    failed = 0
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        failed += 0 if ok else 1
    if failed:
        print(f"{failed} of {len(results)} checks failed")
        return EXIT_RUNTIME
    print(f"all {len(results)} checks passed")
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dwm",
        description="Differentiable working memory: task generation, training, evaluation, tracing.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write episode files (line-delimited JSON)")
    gen.add_argument("--config", help="JSON config file")
    gen.add_argument("--task", choices=TASK_NAMES)
    gen.add_argument("--regime", choices=PHASES)
    gen.add_argument("--seed", type=int)
    gen.add_argument("--batch-size", type=int, dest="batch_size")
    gen.add_argument("--num-batches", type=int, dest="num_batches")
    gen.add_argument("--out", help="output .jsonl path")
    gen.set_defaults(func=cmd_generate)

    tr = sub.add_parser("train", help="train a model; writes checkpoint, curve, manifest")
    tr.add_argument("--config", help="JSON config file")
    tr.add_argument("--task", choices=TASK_NAMES)
    tr.add_argument("--model", choices=MODEL_KINDS)
    tr.add_argument("--seed", type=int, nargs="+", help="one or more parameter seeds")
    tr.add_argument("--jobs", type=int, default=1, help="parallel runs for independent seeds")
    tr.add_argument("--learning-rate", type=float, dest="learning_rate")
    tr.add_argument("--batch-size", type=int, dest="batch_size")
    tr.add_argument("--max-episodes", type=int, dest="max_episodes")
    tr.add_argument("--memory-size", type=int, dest="memory_size")
    tr.add_argument("--resume", help="checkpoint to continue from (single seed)")
    tr.add_argument("--out-dir", dest="out_dir")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="accuracy report over one or all regimes")
    ev.add_argument("--config", help="JSON config file")
    ev.add_argument("--checkpoint")
    ev.add_argument("--oracle", action="store_true", help="score the reference solver")
    ev.add_argument("--constant", action="store_true", help="score the constant-0.5 predictor")
    ev.add_argument("--task", choices=TASK_NAMES)
    ev.add_argument("--regime", choices=PHASES, help="default: all three")
    ev.add_argument("--seed", type=int)
    ev.add_argument("--num-batches", type=int, dest="num_batches", default=4)
    ev.add_argument("--batch-size", type=int, dest="batch_size", default=16)
    ev.add_argument("--memory-size", type=int, dest="memory_size")
    ev.add_argument("--out", help="report CSV path")
    ev.set_defaults(func=cmd_eval)

    trc = sub.add_parser("trace", help="record per-step internals and render heatmaps")
    trc.add_argument("--config", help="JSON config file")
    trc.add_argument("--checkpoint")
    trc.add_argument("--task", choices=TASK_NAMES)
    trc.add_argument("--regime", choices=PHASES, default="train")
    trc.add_argument("--seed", type=int)
    trc.add_argument("--batch-index", type=int, dest="batch_index", default=0)
    trc.add_argument("--episode-index", type=int, dest="episode_index", default=0)
    trc.add_argument("--trace-memory", action="store_true", dest="trace_memory")
    trc.add_argument("--memory-size", type=int, dest="memory_size")
    trc.add_argument(
        "--heatmap",
        action="append",
        help="field to render (attention, bookmark<N>, shift, erase, add, memory, ...); repeatable",
    )
    trc.add_argument("--out-dir", dest="out_dir")
    trc.set_defaults(func=cmd_trace)

    st = sub.add_parser("selftest", help="run the gradient-check and invariant suites")
    st.add_argument("--trials", type=int, default=200)
    st.set_defaults(func=cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergedError as err:
        print(f"training diverged: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as err:  # noqa: BLE001 -- CLI boundary
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
