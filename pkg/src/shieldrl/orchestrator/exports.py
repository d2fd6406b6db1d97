"""Plot-ready CSV bundles from run metrics.

Learning curves and catastrophe counts are binned onto a common step grid and
aggregated across seeds (mean + population std); interception exports become a
heatmap table with log-normalized probabilities.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np


def _read_metrics(run_dir):
    path = Path(run_dir) / "metrics.csv"
    rows = []
    with open(path) as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows.append(row)
    return rows


def _binned_series(rows, value_field, grid, mode):
    """Resample a per-step series onto the grid.

    mode 'episode': mean of non-empty values in each bin, forward-filled;
    mode 'last': last value at or before each grid point.
    """
    if not rows:
        return [math.nan for _ in grid]
    steps = np.array([int(r["step"]) for r in rows])
    out = []
    if mode == "episode":
        vals = [(int(r["step"]), float(r[value_field])) for r in rows
                if r.get(value_field) not in ("", None)]
        prev = math.nan
        for lo, hi in zip([0] + list(grid[:-1]), grid):
            in_bin = [v for s, v in vals if lo < s <= hi]
            if in_bin:
                prev = float(np.mean(in_bin))
            out.append(prev)
    else:
        series = np.array([float(r[value_field]) for r in rows])
        for g in grid:
            idx = np.searchsorted(steps, g, side="right") - 1
            out.append(float(series[idx]) if idx >= 0 else math.nan)
    return out


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def export_plots(run_dirs, out_dir, bin_size: int = 2000):
    """Aggregate one or more seed runs into plot CSVs under out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    all_rows = [_read_metrics(d) for d in run_dirs]
    max_step = max((int(rows[-1]["step"]) for rows in all_rows if rows), default=0)
    grid = list(range(bin_size, max_step + 1, bin_size))
    if max_step and (not grid or grid[-1] != max_step):
        grid.append(max_step)

    def aggregate(field, mode):
        per_seed = [_binned_series(rows, field, grid, mode) for rows in all_rows]
        data = np.array(per_seed, dtype=float)
        if data.size == 0:
            return []
        mean = np.nanmean(data, axis=0)
        std = np.nanstd(data, axis=0)
        return [(g, m, s) for g, m, s in zip(grid, mean, std)]

    _write_csv(out_dir / "learning_curve.csv", ["step", "mean_return", "std_return"],
               aggregate("ep_return", "episode") if all_rows else [])
    _write_csv(out_dir / "cumulative_catastrophes.csv",
               ["step", "mean_catastrophes", "std_catastrophes"],
               aggregate("catastrophes_cum", "last") if all_rows else [])
    _write_csv(out_dir / "lambda_trace.csv", ["step", "mean_lambda", "std_lambda"],
               aggregate("lam", "last") if all_rows else [])

    heat_rows = []
    skipped = 0
    for run_dir in run_dirs:
        path = Path(run_dir) / "interceptions.jsonl"
        if not path.exists():
            continue
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                    heat_rows.append((rec["state"], float(rec["p"])))
                except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                    skipped += 1
    export_interception_heatmap(heat_rows, out_dir / "interception_heatmap.csv")
    return {"grid_points": len(grid), "interceptions": len(heat_rows),
            "skipped_rows": skipped}


def export_interception_heatmap(rows, path):
    """rows: list of (state_vector, p).  p is normalized on a log scale."""
    if not rows:
        _write_csv(path, ["p", "p_lognorm"], [])
        return
    dim = len(rows[0][0])
    header = [f"s{i}" for i in range(dim)] + ["p", "p_lognorm"]
    logs = np.log(np.maximum([p for _, p in rows], 1e-12))
    lo, hi = logs.min(), logs.max()
    span = hi - lo
    out = []
    for (state, p), lp in zip(rows, logs):
        norm = 1.0 if span == 0 else (lp - lo) / span
        out.append([*state, p, norm])
    _write_csv(path, header, out)
