"""Command-line entry point: pretrain, distill, generate, evaluate,
crossarch, ablate, grid, tables.

Config precedence is defaults < budget preset < config file < flags; every
run writes a manifest beside its outputs and can be replayed bit-for-bit
with ``--from-manifest`` in deterministic mode.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time

import torch

from . import __version__
from .checkpoint import GeneratorCheckpoint
from .data import DATASET_CHANNELS, download_dataset, load_dataset
from .deploy import export_distilled, generate_distilled, import_distilled
from .distill import DistillConfig, distill, pool_from_arch_ids
from .evalharness import (
    EvalRunConfig,
    ablate_local_weight,
    benchmark,
    cross_architecture,
    read_repeat_csv,
    write_repeat_csv,
    write_summary_csv,
)
from .exceptions import (
    ConfigError,
    ConstructionError,
    GendistillError,
    UnsupportedArchitectureError,
    UnsupportedDatasetError,
)
from .gantrain import GanTrainConfig, pretrain_gan
from .report import GridLayout, render_ablation, render_grid, render_tables

_USAGE_ERRORS = (
    ConfigError,
    UnsupportedDatasetError,
    UnsupportedArchitectureError,
    ConstructionError,
)

BUDGETS = {
    "smoke": {
        "pretrain": {"epochs": 1, "iters": 50},
        "distill": {"epochs": 1, "iters": 20},
        "evaluate": {"epochs": 30, "repeats": 2},
    },
    "desk": {
        "pretrain": {"epochs": 20, "iters": 400},
        "distill": {"epochs": 10, "iters": 100},
        "evaluate": {"epochs": 300, "repeats": 5},
    },
    "paper": {
        "pretrain": {"epochs": 100, "iters": 500},
        "distill": {"epochs": 50, "iters": 200},
        "evaluate": {"epochs": 300, "repeats": 5},
    },
}

_DEFAULTS = {
    "pretrain": {
        "dataset": "mnist",
        "data_dir": "data",
        "out": "runs/pretrain",
        "epochs": 20,
        "iters": 400,
        "batch": 64,
        "lr": 2e-4,
        "noise_dim": 100,
        "seed": 0,
        "download": False,
        "deterministic": False,
    },
    "distill": {
        "ckpt": "",
        "dataset": "mnist",
        "data_dir": "data",
        "out": "runs/distill",
        "omega_g": 0.01,
        "omega_l": 0.001,
        "batch_per_class": 64,
        "epochs": 10,
        "iters": 100,
        "lr": 2e-5,
        "pool": "convnet3,resnet10,resnet18",
        "reinit_every": 1,
        "seed": 0,
        "deterministic": False,
    },
    "generate": {
        "ckpt": "",
        "out": "runs/generate",
        "ipc": 10,
        "seed": 0,
        "grids": False,
        "deterministic": False,
    },
    "evaluate": {
        "ckpt": "",
        "dataset": "mnist",
        "data_dir": "data",
        "out": "runs/evaluate",
        "ipc": 10,
        "arch": "convnet3",
        "epochs": 300,
        "lr": 1e-3,
        "repeats": 5,
        "seed": 0,
        "fixed_set": False,
        "deterministic": False,
    },
    "crossarch": {
        "ckpt": "",
        "dataset": "cifar10",
        "data_dir": "data",
        "out": "runs/crossarch",
        "ipc": 10,
        "archs": "convnet3,resnet18,alexnet,vgg11",
        "epochs": 300,
        "lr": 1e-3,
        "repeats": 5,
        "seed": 0,
        "deterministic": False,
    },
    "ablate": {
        "ckpt": "",
        "dataset": "cifar10",
        "data_dir": "data",
        "out": "runs/ablate",
        "ipc": 1,
        "omega_g": 0.01,
        "omega_l_values": "0,1e-4,1e-3,1e-2,1e-1",
        "pool": "convnet3,resnet10,resnet18",
        "batch_per_class": 64,
        "distill_epochs": 10,
        "distill_iters": 100,
        "distill_lr": 2e-5,
        "arch": "convnet3",
        "eval_epochs": 300,
        "repeats": 5,
        "seed": 0,
        "from_csv": "",
        "deterministic": False,
    },
    "grid": {"archive": "", "out": "grid.png", "cols": 0},
    "tables": {"csv": "", "out": "tables.md"},
}


def file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def parse_config_file(path: str) -> dict:
    """Flat ``key = value`` lines, ``#`` comments."""
    values = {}
    try:
        with open(path) as f:
            for lineno, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                key, _, raw = line.partition("=")
                values[key.strip().replace("-", "_")] = raw.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return values


def _coerce(raw: str, template):
    if isinstance(template, bool):
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"expected boolean, got {raw!r}")
    if isinstance(template, int):
        return int(raw)
    if isinstance(template, float):
        return float(raw)
    return raw


def resolve_config(command: str, flags: dict, budget: str = None, config_file: str = None):
    """Merge defaults < budget < file < flags; flags win with a warning."""
    config = dict(_DEFAULTS[command])
    if budget is not None:
        if budget not in BUDGETS:
            raise ConfigError(f"unknown budget {budget!r}; use smoke, desk, or paper")
        slice_name = {
            "evaluate": "evaluate",
            "crossarch": "evaluate",
        }.get(command, command)
        for key, value in BUDGETS[budget].get(slice_name, {}).items():
            if key in config:
                config[key] = value
        if command == "ablate":
            config["distill_epochs"] = BUDGETS[budget]["distill"]["epochs"]
            config["distill_iters"] = BUDGETS[budget]["distill"]["iters"]
            config["eval_epochs"] = BUDGETS[budget]["evaluate"]["epochs"]
            config["repeats"] = BUDGETS[budget]["evaluate"]["repeats"]
    warnings = []
    file_values = parse_config_file(config_file) if config_file else {}
    for key, raw in file_values.items():
        if key not in config:
            raise ConfigError(f"unknown config key {key!r} for command {command}")
        config[key] = _coerce(raw, _DEFAULTS[command][key])
    for key, value in flags.items():
        if value is None or key not in config:
            continue
        if key in file_values and config[key] != value:
            warnings.append(
                f"flag --{key.replace('_', '-')}={value} overrides config file value {config[key]}"
            )
        config[key] = value
    _validate_ranges(command, config)
    return config, warnings


def _validate_ranges(command: str, config: dict) -> None:
    for key in ("omega_g", "omega_l"):
        if key in config and config[key] < 0:
            raise ConfigError(f"{key} must be >= 0, got {config[key]}")
    if "omega_l_values" in config:
        for w in _parse_floats(config["omega_l_values"]):
            if w < 0:
                raise ConfigError(f"omega_l values must be >= 0, got {w}")
    for key in ("epochs", "iters", "repeats", "ipc", "batch", "batch_per_class",
                "distill_epochs", "distill_iters", "eval_epochs", "reinit_every"):
        if key in config and config[key] < 1:
            raise ConfigError(f"{key} must be >= 1, got {config[key]}")
    for key in ("lr", "distill_lr"):
        if key in config and config[key] <= 0:
            raise ConfigError(f"{key} must be > 0, got {config[key]}")
    if "dataset" in config and config["dataset"] not in DATASET_CHANNELS:
        raise UnsupportedDatasetError(f"unsupported dataset {config['dataset']!r}")


def _parse_list(raw: str):
    return [item.strip() for item in raw.split(",") if item.strip()]


def _parse_floats(raw: str):
    return [float(x) for x in _parse_list(raw)]


def write_manifest(out_dir: str, command: str, config: dict, inputs: dict, outputs: dict, extra: dict = None) -> str:
    manifest = {
        "tool_version": __version__,
        "command": command,
        "config": config,
        "seed": config.get("seed"),
        "config_hash": config_hash(config),
        "inputs": {
            name: {"path": path, "sha256": file_sha256(path) if os.path.exists(path) else None}
            for name, path in inputs.items()
        },
        "outputs": {
            name: {"path": path, "sha256": file_sha256(path)}
            for name, path in outputs.items()
        },
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return path


def _metadata(config: dict) -> dict:
    meta = {"tool_version": __version__, "config_hash": config_hash(config)}
    # wall-clock stamp breaks bit-for-bit replay, so deterministic mode omits it
    meta["created"] = None if config.get("deterministic") else int(time.time())
    return meta


def _apply_determinism(config: dict) -> None:
    if config.get("deterministic"):
        torch.use_deterministic_algorithms(True)


def _load_handle(config: dict, split: str):
    if config.get("download"):
        download_dataset(config["dataset"], config["data_dir"])
    return load_dataset(config["dataset"], split, config["data_dir"])


def cmd_pretrain(config: dict) -> dict:
    _apply_determinism(config)
    handle = _load_handle(config, "train")
    cfg = GanTrainConfig(
        epochs=config["epochs"],
        iters_per_epoch=config["iters"],
        batch_size=config["batch"],
        lr=config["lr"],
        noise_dim=config["noise_dim"],
        seed=config["seed"],
    )
    os.makedirs(config["out"], exist_ok=True)
    loss_path = os.path.join(config["out"], "gan_losses.csv")
    with open(loss_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "iter", "d_loss", "g_loss"])
        sink = lambda r: writer.writerow([r.epoch, r.iteration, repr(r.d_loss), repr(r.g_loss)])
        ckpt = pretrain_gan(
            handle, cfg, record_sink=sink, checkpoint_dir=config["out"], metadata=_metadata(config)
        )
    ckpt_path = os.path.join(config["out"], "generator_stage1.ckpt")
    ckpt.save(ckpt_path)
    return {"checkpoint": ckpt_path, "losses": loss_path}


def cmd_distill(config: dict) -> dict:
    _apply_determinism(config)
    handle = _load_handle(config, "train")
    ckpt = GeneratorCheckpoint.load(config["ckpt"])
    pool = pool_from_arch_ids(
        _parse_list(config["pool"]),
        num_classes=handle.num_classes,
        input_channels=handle.channels,
        reinit_every=config["reinit_every"],
    )
    cfg = DistillConfig(
        omega_g=config["omega_g"],
        omega_l=config["omega_l"],
        batch_per_class=config["batch_per_class"],
        epochs=config["epochs"],
        iters_per_epoch=config["iters"],
        lr=config["lr"],
        seed=config["seed"],
    )
    os.makedirs(config["out"], exist_ok=True)
    loss_path = os.path.join(config["out"], "distill_losses.csv")
    with open(loss_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "iter", "arch_id", "global", "local", "cgan", "total"])
        sink = lambda r: writer.writerow(
            [r.epoch, r.iteration, r.arch_id or "", repr(r.global_loss), repr(r.local_loss), repr(r.cgan_loss), repr(r.total)]
        )
        out_ckpt = distill(
            ckpt, handle, pool, cfg, record_sink=sink, checkpoint_dir=config["out"], metadata=_metadata(config)
        )
    ckpt_path = os.path.join(config["out"], "generator_stage2.ckpt")
    out_ckpt.save(ckpt_path)
    return {"checkpoint": ckpt_path, "losses": loss_path}


def cmd_generate(config: dict) -> dict:
    _apply_determinism(config)
    ckpt = GeneratorCheckpoint.load(config["ckpt"])
    ds = generate_distilled(ckpt, config["ipc"], config["seed"])
    os.makedirs(config["out"], exist_ok=True)
    archive = os.path.join(
        config["out"], f"distilled_ipc{config['ipc']}_seed{config['seed']}.gdds"
    )
    export_distilled(ds, archive, format="archive")
    outputs = {"archive": archive}
    if config["grids"]:
        grid_path = os.path.join(
            config["out"], f"grid_ipc{config['ipc']}_seed{config['seed']}.png"
        )
        export_distilled(ds, grid_path, format="grid")
        outputs["grid"] = grid_path
    return outputs


def cmd_evaluate(config: dict) -> dict:
    _apply_determinism(config)
    test = _load_handle(config, "test")
    ckpt = GeneratorCheckpoint.load(config["ckpt"])
    cfg = EvalRunConfig(
        arch=config["arch"],
        epochs=config["epochs"],
        lr=config["lr"],
        repeats=config["repeats"],
        seed_base=config["seed"],
        regenerate_per_repeat=not config["fixed_set"],
    )
    report = benchmark(ckpt, test, config["ipc"], cfg)
    os.makedirs(config["out"], exist_ok=True)
    repeat_path = os.path.join(config["out"], "accuracy_repeats.csv")
    summary_path = os.path.join(config["out"], "accuracy_summary.csv")
    write_repeat_csv([report], repeat_path)
    write_summary_csv([report], summary_path)
    print(f"{report.dataset} ipc={report.ipc} {report.arch}: "
          f"{100 * report.mean:.1f}±{100 * report.std:.1f}")
    return {"repeats": repeat_path, "summary": summary_path}


def cmd_crossarch(config: dict) -> dict:
    _apply_determinism(config)
    test = _load_handle(config, "test")
    ckpt = GeneratorCheckpoint.load(config["ckpt"])
    cfg = EvalRunConfig(
        epochs=config["epochs"],
        lr=config["lr"],
        repeats=config["repeats"],
        seed_base=config["seed"],
    )
    reports = cross_architecture(ckpt, test, config["ipc"], _parse_list(config["archs"]), cfg)
    os.makedirs(config["out"], exist_ok=True)
    repeat_path = os.path.join(config["out"], "accuracy_repeats.csv")
    summary_path = os.path.join(config["out"], "accuracy_summary.csv")
    write_repeat_csv(reports, repeat_path)
    write_summary_csv(reports, summary_path)
    for report in reports:
        print(f"{report.arch}: {100 * report.mean:.1f}±{100 * report.std:.1f}")
    return {"repeats": repeat_path, "summary": summary_path}


def cmd_ablate(config: dict) -> dict:
    _apply_determinism(config)
    os.makedirs(config["out"], exist_ok=True)
    plot_path = os.path.join(config["out"], "ablation.svg")
    csv_path = os.path.join(config["out"], "ablation.csv")
    if config["from_csv"]:
        results = _read_ablation_csv(config["from_csv"])
        render_ablation(results, plot_path)
        return {"plot": plot_path}
    train = _load_handle(config, "train")
    test = load_dataset(config["dataset"], "test", config["data_dir"])
    ckpt = GeneratorCheckpoint.load(config["ckpt"])
    pool = pool_from_arch_ids(
        _parse_list(config["pool"]), train.num_classes, train.channels
    )
    dcfg = DistillConfig(
        omega_g=config["omega_g"],
        batch_per_class=config["batch_per_class"],
        epochs=config["distill_epochs"],
        iters_per_epoch=config["distill_iters"],
        lr=config["distill_lr"],
        seed=config["seed"],
    )
    ecfg = EvalRunConfig(
        arch=config["arch"],
        epochs=config["eval_epochs"],
        repeats=config["repeats"],
        seed_base=config["seed"],
    )
    results = ablate_local_weight(
        ckpt, train, test, config["ipc"], _parse_floats(config["omega_l_values"]), pool, dcfg, ecfg
    )
    _write_ablation_csv(results, csv_path)
    render_ablation(results, plot_path)
    return {"csv": csv_path, "plot": plot_path}


def _write_ablation_csv(results, path: str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["omega_l", "dataset", "ipc", "arch", "repeat", "accuracy"])
        for w, report in results:
            for r, acc in enumerate(report.accuracies):
                writer.writerow([repr(w), report.dataset, report.ipc, report.arch, r, repr(acc)])


def _read_ablation_csv(path: str):
    from .evalharness import EvalReport

    groups = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            key = (float(row["omega_l"]), row["dataset"], int(row["ipc"]), row["arch"])
            groups.setdefault(key, []).append((int(row["repeat"]), float(row["accuracy"])))
    results = []
    for (w, dataset, ipc, arch), rows in sorted(groups.items()):
        rows.sort()
        results.append((w, EvalReport.from_accuracies(dataset, ipc, arch, [a for _, a in rows])))
    return results


def cmd_grid(config: dict) -> dict:
    ds = import_distilled(config["archive"])
    layout = GridLayout(cols=config["cols"] or None)
    render_grid(ds, layout, config["out"])
    return {"grid": config["out"]}


def cmd_tables(config: dict) -> dict:
    reports = read_repeat_csv(config["csv"])
    render_tables(reports, config["out"])
    return {"tables": config["out"]}


_HANDLERS = {
    "pretrain": cmd_pretrain,
    "distill": cmd_distill,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "crossarch": cmd_crossarch,
    "ablate": cmd_ablate,
    "grid": cmd_grid,
    "tables": cmd_tables,
}

_FLAG_TYPES = {bool: None, int: int, float: float, str: str}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gendistill",
        description="Distill datasets into a conditional generative model and evaluate the result.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--from-manifest", metavar="JSON", help="replay a recorded run")
    parser.add_argument("--out", help="output directory override for --from-manifest")
    sub = parser.add_subparsers(dest="command")
    for command, defaults in _DEFAULTS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--show-config", action="store_true", help="print resolved config and exit")
        if command not in ("grid", "tables"):
            p.add_argument("--budget", choices=sorted(BUDGETS), help="epoch/iteration preset")
        for key, default in defaults.items():
            flag = "--" + key.replace("_", "-")
            if isinstance(default, bool):
                p.add_argument(flag, action="store_const", const=True, default=None, dest=key)
            else:
                p.add_argument(flag, type=type(default), default=None, dest=key)
    return parser


def _run_command(command: str, config: dict, warnings) -> int:
    for warning in warnings:
        print(f"warning: {warning}", file=sys.stderr)
    out_dir = config.get("out")
    outputs = _HANDLERS[command](config)
    if out_dir:
        inputs = {}
        for key in ("ckpt", "archive", "csv", "from_csv"):
            if config.get(key):
                inputs[key] = config[key]
        extra = {"training_steps": 0} if command in ("generate", "grid", "tables") else None
        os.makedirs(out_dir, exist_ok=True)
        write_manifest(out_dir, command, config, inputs, outputs, extra)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.from_manifest:
            with open(args.from_manifest) as f:
                manifest = json.load(f)
            command = manifest["command"]
            config = dict(manifest["config"])
            if args.out:
                config["out"] = args.out
            if command not in _HANDLERS:
                raise ConfigError(f"manifest names unknown command {command!r}")
            return _run_command(command, config, [])
        if not args.command:
            parser.print_usage(sys.stderr)
            return 2
        flags = {key: getattr(args, key) for key in _DEFAULTS[args.command]}
        config, warnings = resolve_config(
            args.command, flags, getattr(args, "budget", None), args.config
        )
        if "data_dir" in config and flags.get("data_dir") is None and "GENDISTILL_DATA_DIR" in os.environ:
            config["data_dir"] = os.environ["GENDISTILL_DATA_DIR"]
        if args.show_config:
            print(json.dumps(config, indent=2, sort_keys=True))
            return 0
        return _run_command(args.command, config, warnings)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (GendistillError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
