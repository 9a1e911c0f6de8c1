"""Visual and tabular artifacts: distilled-image grids, the local-weight
ablation curve, and markdown accuracy tables. Renderers only format persisted
results; they never aggregate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from .data import denormalize_pixels
from .exceptions import ConfigError


@dataclass
class GridLayout:
    cols: int = None  # None -> min(ipc, 10)
    cell_px: int = 32  # must be a multiple of the native 32
    class_order: list = None  # None -> ascending label order


def render_grid(ds, layout: GridLayout, path: str) -> str:
    """Write a PNG grid, one row per class, one column per sample index.

    Cells are the de-normalized pixels; at native cell size no resampling
    happens (larger cells repeat pixels by an integer factor).
    """
    k = ds.num_classes
    ipc = ds.ipc
    cols = layout.cols if layout.cols is not None else min(ipc, 10)
    if cols > ipc:
        raise ConfigError(f"grid cols {cols} exceeds ipc {ipc}")
    if layout.cell_px % 32 != 0 or layout.cell_px < 32:
        raise ConfigError("cell_px must be a positive multiple of 32")
    order = layout.class_order if layout.class_order is not None else list(range(k))

    images = ds.images.detach().cpu()
    labels = ds.labels.detach().cpu().numpy()
    channels = images.shape[1]
    unit = denormalize_pixels(images).clamp(0.0, 1.0).numpy()
    u8 = np.round(unit * 255.0).astype(np.uint8)

    scale = layout.cell_px // 32
    grid = np.zeros((k * layout.cell_px, cols * layout.cell_px, channels), dtype=np.uint8)
    for row, cls in enumerate(order):
        idx = np.flatnonzero(labels == cls)[:cols]
        if len(idx) < cols:
            raise ConfigError(f"class {cls} has fewer than {cols} samples")
        for col, i in enumerate(idx):
            cell = np.transpose(u8[i], (1, 2, 0))  # HWC
            if scale > 1:
                cell = cell.repeat(scale, axis=0).repeat(scale, axis=1)
            grid[
                row * layout.cell_px : (row + 1) * layout.cell_px,
                col * layout.cell_px : (col + 1) * layout.cell_px,
            ] = cell
    if channels == 1:
        Image.fromarray(grid[:, :, 0], mode="L").save(path, format="PNG")
    else:
        Image.fromarray(grid, mode="RGB").save(path, format="PNG")
    return path


def render_ablation(results, path: str) -> str:
    """Log-x curve of mean accuracy vs local-loss weight with std error bars.

    A zero weight cannot sit on a log axis; it is drawn one decade left of
    the smallest positive weight and tick-labeled "0".
    """
    if len(results) < 2:
        raise ConfigError("ablation plot needs at least 2 points")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    points = sorted(results, key=lambda item: item[0])
    weights = [w for w, _ in points]
    means = [100.0 * r.mean for _, r in points]
    stds = [100.0 * r.std for _, r in points]

    positive = [w for w in weights if w > 0]
    sentinel = (min(positive) / 10.0) if positive else 1e-4
    xs = [w if w > 0 else sentinel for w in weights]

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(xs, means, yerr=stds, marker="o", capsize=3)
    ax.set_xscale("log")
    ax.set_xticks(xs)
    ax.set_xticklabels(["0" if w == 0 else f"{w:g}" for w in weights])
    ax.set_xlabel("local loss weight")
    ax.set_ylabel("accuracy (%)")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def format_mean_std(mean: float, std: float) -> str:
    """Percent cell like "97.3±0.3" (one decimal, round-half-even)."""
    return f"{100.0 * mean:.1f}±{100.0 * std:.1f}"


def render_tables(reports, path: str) -> str:
    """Markdown tables: per architecture a dataset-by-IPC table, then a
    per-(dataset, IPC) architecture comparison when several archs exist."""
    if not reports:
        raise ConfigError("no reports to render")
    lines = []

    archs = sorted({r.arch for r in reports})
    for arch in archs:
        rows = [r for r in reports if r.arch == arch]
        datasets = sorted({r.dataset for r in rows})
        ipcs = sorted({r.ipc for r in rows})
        lines.append(f"## Accuracy by dataset and IPC ({arch})")
        lines.append("")
        lines.append("| Dataset | " + " | ".join(f"IPC={i}" for i in ipcs) + " |")
        lines.append("|---" * (len(ipcs) + 1) + "|")
        for dataset in datasets:
            cells = []
            for ipc in ipcs:
                match = [r for r in rows if r.dataset == dataset and r.ipc == ipc]
                cells.append(format_mean_std(match[0].mean, match[0].std) if match else "-")
            lines.append(f"| {dataset} | " + " | ".join(cells) + " |")
        lines.append("")

    pairs = sorted({(r.dataset, r.ipc) for r in reports})
    for dataset, ipc in pairs:
        rows = [r for r in reports if r.dataset == dataset and r.ipc == ipc]
        if len(rows) < 2:
            continue
        rows.sort(key=lambda r: r.arch)
        lines.append(f"## Cross-architecture accuracy ({dataset}, IPC={ipc})")
        lines.append("")
        lines.append("| " + " | ".join(r.arch for r in rows) + " |")
        lines.append("|---" * len(rows) + "|")
        lines.append("| " + " | ".join(format_mean_std(r.mean, r.std) for r in rows) + " |")
        lines.append("")

    with open(path, "w") as f:
        f.write("\n".join(lines))
    return path
