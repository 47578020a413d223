"""Unified command-line entry point with reproducible run directories.

Every run writes `resolved-config.json`, `metrics.jsonl` and its result
artifacts into the output directory. All randomness is derived from the
single `--seed` flag; reruns with the same resolved config are bit-identical
at a fixed thread count.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from pathlib import Path

import torch

from . import analysis, baselines, bench, latentopt, netcore
from .autoenc import (
    AutoencoderConfig,
    TrainSpec,
    load_checkpoint,
    mean_min_loss,
    sample_heldout,
    train_autoencoder,
)
from .matrep import RepLayout


class ConfigError(ValueError):
    """Malformed run configuration."""


def _reject_unknown(doc: dict, allowed: set[str], context: str) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {context}: {sorted(unknown)}")


def _dataclass_from(cls, doc: dict, context: str):
    fields = {f.name for f in dataclasses.fields(cls)}
    _reject_unknown(doc, fields, context)
    converted = dict(doc)
    for key in ("depth_range", "width_range", "decoder_set"):
        if converted.get(key) is not None and key in fields:
            converted[key] = tuple(converted[key])
    return cls(**converted)


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    return doc


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _write_jsonl(path: Path, records: list[dict]) -> None:
    with open(path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def _prepare_out(args, resolved: dict) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "resolved-config.json", resolved)
    return out


def _apply_threads(args) -> int:
    threads = args.threads
    if threads is None:
        env = os.environ.get("SWATNN_THREADS")
        threads = int(env) if env else None
    if threads is not None:
        torch.set_num_threads(threads)
    return torch.get_num_threads()


def _run_record(run: latentopt.DecoderRun) -> dict:
    return {
        "id": f"decoder-{run.decoder_index}",
        "decoder_index": run.decoder_index,
        "train_mse": run.train_mse,
        "test_mse": run.test_mse,
        "nonzero_weights": run.nonzero_weights,
        "active_neurons": list(run.active_neurons),
        "t_s": run.t_s,
        "diverged": run.diverged,
    }


def _cmd_train_ae(args) -> int:
    doc = _load_config_file(args.config)
    _reject_unknown(doc, {"layout", "autoencoder", "train"}, "config")
    layout = RepLayout.from_dict(doc.get("layout", {})) if doc.get("layout") else RepLayout()
    ae_doc = dict(doc.get("autoencoder", {}))
    _reject_unknown(ae_doc, {"d_model", "n_heads", "n_layers", "precision"}, "autoencoder")
    config = AutoencoderConfig(layout=layout, **ae_doc)
    train_doc = dict(doc.get("train", {}))
    if args.seed is not None:
        train_doc["seed"] = args.seed
    spec = _dataclass_from(TrainSpec, train_doc, "train")

    resolved = {
        "command": "train-ae",
        "autoencoder": config.to_dict(),
        "train": spec.to_dict(),
        "threads": _apply_threads(args),
    }
    out = _prepare_out(args, resolved)
    model, metrics = train_autoencoder(config, spec, out_dir=out)
    held = sample_heldout(config.layout, n_mlps=32, inputs_per_mlp=128, seed=spec.seed + 1,
                          spec=spec)
    metrics.append({"heldout_mean_min_loss": mean_min_loss(model, held)})
    _write_jsonl(out / "metrics.jsonl", metrics)
    return 0


def _resolve_penalty(value: str) -> latentopt.PenaltyConfig:
    if value in latentopt.PENALTY_LEVELS:
        return latentopt.PENALTY_LEVELS[value]
    doc = json.loads(Path(value).read_text())
    return _dataclass_from(latentopt.PenaltyConfig, doc, f"penalty file {value}")


def _cmd_search(args) -> int:
    model = load_checkpoint(args.ae)
    dataset = bench.load_dataset(args.task)
    penalties = _resolve_penalty(args.penalty)
    decoder_set = (
        tuple(int(v) for v in args.decoders.split(",")) if args.decoders else None
    )
    anneal = latentopt.AnnealSchedule(e_anneal=args.anneal_epochs)
    cfg = latentopt.SearchConfig(
        steps=args.steps,
        lr=args.lr,
        seed=args.seed,
        decoder_set=decoder_set,
        penalties=penalties,
        anneal=anneal,
    )
    resolved = {
        "command": "search",
        "checkpoint": str(args.ae),
        "task": dataset.spec.to_dict(),
        "penalty": dataclasses.asdict(penalties),
        "steps": cfg.steps,
        "lr": cfg.lr,
        "seed": cfg.seed,
        "decoder_set": list(decoder_set) if decoder_set else None,
        "anneal": dataclasses.asdict(anneal),
        "threads": _apply_threads(args),
    }
    out = _prepare_out(args, resolved)
    result = latentopt.run_search(model, dataset, cfg)
    selected = latentopt.select_best(result.runs, cfg.selection_tolerance)

    doc = {
        "schema": "swatnn-result",
        "version": 1,
        "task": dataset.spec.name,
        "method": "latent-search",
        "seed": cfg.seed,
        "runs": [_run_record(r) for r in result.runs],
        "selected": _run_record(selected),
    }
    _write_json(out / "result.json", doc)
    (out / "network.json").write_text(netcore.mlp_to_json(selected.mlp))
    with open(out / "trajectory.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["decoder", "step", "loss"])
        for run in result.runs:
            for step, loss in enumerate(run.trajectory):
                writer.writerow([run.decoder_index, step, repr(loss)])
    _write_jsonl(out / "metrics.jsonl", [_run_record(r) for r in result.runs])
    return 0


def _parse_arch(text: str) -> baselines.Architecture:
    try:
        depth, width, act = text.split(",")
        kind = netcore.ActivationKind(act.strip())
        return baselines.Architecture(depth=int(depth), width=int(width), activation=kind)
    except (ValueError, KeyError) as exc:
        raise ConfigError(
            f"bad --arch {text!r}: expected 'depth,width,activation' with activation in "
            f"{[k.value for k in netcore.ActivationKind]}"
        ) from exc


def _cmd_baseline(args) -> int:
    dataset = bench.load_dataset(args.task)
    arch = _parse_arch(args.arch)
    resolved = {
        "command": f"baseline-{args.mode}",
        "task": dataset.spec.to_dict(),
        "arch": {
            "depth": arch.depth,
            "width": arch.width,
            "activation": arch.activation.value,
        },
        "epochs": args.epochs,
        "lr": args.lr,
        "seed": args.seed,
        "threads": _apply_threads(args),
    }
    out = _prepare_out(args, resolved)

    net, metrics = baselines.train_traditional(
        arch, dataset, epochs=args.epochs, lr=args.lr, seed=args.seed
    )
    runs = []
    if args.mode == "traditional":
        selected = {
            "id": "traditional",
            "decoder_index": None,
            "train_mse": metrics["train_mse"],
            "test_mse": metrics["test_mse"],
            "nonzero_weights": metrics["nonzero_weights"],
            "active_neurons": list(netcore.active_neuron_counts(net)),
            "diverged": metrics["diverged"],
        }
        runs = [selected]
        (out / "network.json").write_text(netcore.mlp_to_json(net))
    else:
        admm_cfg = baselines.AdmmConfig(
            rho=args.rho, threshold=args.threshold
        )
        resolved["admm"] = dataclasses.asdict(admm_cfg)
        _write_json(out / "resolved-config.json", resolved)
        pruned, report = baselines.admm_prune(net, dataset, admm_cfg)
        selected = {
            "id": "admm",
            "decoder_index": None,
            "train_mse": report["after"]["train_mse"],
            "test_mse": report["after"]["test_mse"],
            "nonzero_weights": report["after"]["nonzero_weights"],
            "active_neurons": list(netcore.active_neuron_counts(pruned)),
            "diverged": report["diverged"],
        }
        runs = [
            {
                "id": "pre-admm",
                "decoder_index": None,
                "train_mse": report["before"]["train_mse"],
                "test_mse": report["before"]["test_mse"],
                "nonzero_weights": report["before"]["nonzero_weights"],
                "active_neurons": list(netcore.active_neuron_counts(net)),
                "diverged": False,
            },
            selected,
        ]
        (out / "network.json").write_text(netcore.mlp_to_json(pruned))
    doc = {
        "schema": "swatnn-result",
        "version": 1,
        "task": dataset.spec.name,
        "method": args.mode,
        "seed": args.seed,
        "runs": runs,
        "selected": selected,
    }
    _write_json(out / "result.json", doc)
    _write_jsonl(out / "metrics.jsonl", runs)
    return 0


def _cmd_bench_gen(args) -> int:
    if args.task == "all":
        specs = bench.builtin_suite(args.train_count, args.test_count)
    else:
        specs = [
            bench.task_by_name(
                args.task, train_count=args.train_count, test_count=args.test_count
            )
        ]
    if args.seed is not None:
        specs = [dataclasses.replace(s, seed=args.seed) for s in specs]
    resolved = {
        "command": "bench-gen",
        "tasks": [s.to_dict() for s in specs],
        "threads": _apply_threads(args),
    }
    out = _prepare_out(args, resolved)
    records = []
    for spec in specs:
        dataset = bench.generate(spec)
        bench.save_dataset(dataset, out / f"{spec.name}.task")
        records.append(
            {
                "task": spec.name,
                "train_count": spec.train_count,
                "test_count": spec.test_count,
                "output_scale": dataset.normalization.output_scale,
            }
        )
    _write_jsonl(out / "metrics.jsonl", records)
    return 0


def _cmd_probe_smoothness(args) -> int:
    model = load_checkpoint(args.ae)
    resolved = {
        "command": "probe-smoothness",
        "checkpoint": str(args.ae),
        "decoder": args.decoder,
        "seed": args.seed,
        "neighbors": args.neighbors,
        "noise_std": args.noise_std,
        "grid_step": args.grid_step,
        "grid_range": args.grid_range,
        "inputs": args.inputs,
        "threads": _apply_threads(args),
    }
    out = _prepare_out(args, resolved)
    grid = analysis.smoothness_probe(
        model,
        decoder_index=args.decoder,
        seed=args.seed,
        n_neighbors=args.neighbors,
        noise_std=args.noise_std,
        grid_step=args.grid_step,
        grid_range=args.grid_range,
        n_inputs=args.inputs,
    )
    with open(out / "grid.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "beta", "mse"])
        for i, a in enumerate(grid.alphas):
            for j, b in enumerate(grid.betas):
                writer.writerow([repr(float(a)), repr(float(b)), repr(float(grid.mse[i, j]))])
    _write_jsonl(
        out / "metrics.jsonl",
        [
            {
                "cells": int(grid.mse.size),
                "max_mse": float(grid.mse.max()),
                "origin_mse": float(grid.mse[len(grid.alphas) // 2, len(grid.betas) // 2]),
                "rank_deficient": grid.rank_deficient,
            }
        ],
    )
    return 0


def _cmd_compress(args) -> int:
    model = load_checkpoint(args.ae)
    deep = netcore.mlp_from_json(Path(args.mlp).read_text())
    target_depths = tuple(int(v) for v in args.target_depths.split(","))
    cuts = tuple(int(v) for v in args.cuts.split(",")) if args.cuts else None
    penalties = _resolve_penalty(args.penalty)
    cfg = latentopt.SearchConfig(
        steps=args.steps,
        lr=args.lr,
        seed=args.seed,
        penalties=penalties,
        anneal=latentopt.AnnealSchedule(e_anneal=args.anneal_epochs),
    )
    resolved = {
        "command": "compress",
        "checkpoint": str(args.ae),
        "network": str(args.mlp),
        "target_depths": list(target_depths),
        "cuts": list(cuts) if cuts else None,
        "steps": cfg.steps,
        "lr": cfg.lr,
        "seed": cfg.seed,
        "penalty": dataclasses.asdict(penalties),
        "threads": _apply_threads(args),
    }
    out = _prepare_out(args, resolved)
    composed, report = analysis.compress(
        deep, model, target_depths=target_depths, search_cfg=cfg, cuts=cuts,
        seed=args.seed,
    )
    (out / "network.json").write_text(netcore.mlp_to_json(composed))
    _write_json(out / "report.json", report)
    _write_jsonl(
        out / "metrics.jsonl",
        [
            {
                "part": p["part"],
                "interface_mse": p["interface_mse"],
                "nonzero_weights": p["nonzero_weights"],
                "diverged": p["diverged"],
            }
            for p in report["parts"]
        ]
        + [{"output_mse": report["output_mse"]}],
    )
    return 0


def _cmd_report(args) -> int:
    inputs = [Path(p) for p in args.inputs.split(",")]
    resolved = {
        "command": "report",
        "inputs": [str(p) for p in inputs],
        "threads": _apply_threads(args),
    }
    out = _prepare_out(args, resolved)
    results = []
    for root in inputs:
        for path in sorted(root.rglob("result.json")):
            results.append(json.loads(path.read_text()))
    with open(out / "best_models.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "method", "seed", "test_mse", "nonzero_weights"])
        for doc in results:
            sel = doc["selected"]
            writer.writerow(
                [doc["task"], doc["method"], doc["seed"],
                 repr(sel["test_mse"]), sel["nonzero_weights"]]
            )
    by_task: dict[str, list] = {}
    for doc in results:
        for run in doc["runs"]:
            by_task.setdefault(doc["task"], []).append(
                (run["test_mse"], run["nonzero_weights"], doc["method"])
            )
    with open(out / "pareto.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "test_mse", "nonzero_weights"])
        for task, rows in sorted(by_task.items()):
            front = analysis.pareto_extract([(m, n) for m, n, _ in rows])
            for mse, nonzeros in front:
                writer.writerow([task, repr(mse), nonzeros])
    _write_jsonl(out / "metrics.jsonl", [{"results": len(results)}])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swatnn",
        description="Discover sparse, compact networks by gradient descent in a "
        "learned functional embedding space.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=None)

    p = sub.add_parser("train-ae", help="train the multi-scale autoencoder")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--seed", type=int, default=None)
    common(p)
    p.set_defaults(handler=_cmd_train_ae)

    p = sub.add_parser("search", help="latent-space search on a task dataset")
    p.add_argument("--ae", required=True, help="autoencoder checkpoint")
    p.add_argument("--task", required=True, help="dataset file from bench-gen")
    p.add_argument("--penalty", default="none",
                   help="none|small|medium|large or a JSON file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--decoders", default=None, help="comma list, e.g. 1,2")
    p.add_argument("--anneal-epochs", type=int, default=1500)
    common(p)
    p.set_defaults(handler=_cmd_search)

    p = sub.add_parser("baseline", help="comparison methods")
    p.add_argument("mode", choices=["traditional", "admm"])
    p.add_argument("--task", required=True)
    p.add_argument("--arch", required=True, help="depth,width,activation")
    p.add_argument("--epochs", type=int, default=6000)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rho", type=float, default=2.0)
    p.add_argument("--threshold", type=float, default=0.1)
    common(p)
    p.set_defaults(handler=_cmd_baseline)

    p = sub.add_parser("bench-gen", help="generate task datasets")
    p.add_argument("--task", required=True, help="task name or 'all'")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--train-count", type=int, default=3750)
    p.add_argument("--test-count", type=int, default=1250)
    common(p)
    p.set_defaults(handler=_cmd_bench_gen)

    p = sub.add_parser("probe-smoothness", help="latent smoothness grid")
    p.add_argument("--ae", required=True)
    p.add_argument("--decoder", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--neighbors", type=int, default=200)
    p.add_argument("--noise-std", type=float, default=0.1)
    p.add_argument("--grid-step", type=float, default=0.25)
    p.add_argument("--grid-range", type=float, default=3.0)
    p.add_argument("--inputs", type=int, default=1024)
    common(p)
    p.set_defaults(handler=_cmd_probe_smoothness)

    p = sub.add_parser("compress", help="compress a deep network part by part")
    p.add_argument("--ae", required=True)
    p.add_argument("--mlp", required=True, help="network JSON file")
    p.add_argument("--target-depths", required=True, help="comma list per part")
    p.add_argument("--cuts", default=None, help="comma list of cut layers")
    p.add_argument("--penalty", default="none")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--anneal-epochs", type=int, default=1500)
    common(p)
    p.set_defaults(handler=_cmd_compress)

    p = sub.add_parser("report", help="aggregate result JSONs into CSV tables")
    p.add_argument("--inputs", required=True, help="comma list of directories")
    common(p)
    p.set_defaults(handler=_cmd_report)

    return parser


def dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except Exception as exc:  # categorized error record, nonzero exit
        record = {"error": type(exc).__name__, "message": str(exc)}
        out = getattr(args, "out", None)
        if out is not None:
            try:
                Path(out).mkdir(parents=True, exist_ok=True)
                _write_json(Path(out) / "error.json", record)
            except OSError:
                pass
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
