"""Per-layer and overall RMSE in nm, mean-predictor baselines and scatter exports."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class EvaluationError(ValueError):
    pass


def _pair(preds, truths):
    p = np.asarray(preds, dtype=float)
    t = np.asarray(truths, dtype=float)
    if p.ndim == 1:
        p = p[None]
    if t.ndim == 1:
        t = t[None]
    if p.ndim != 2 or t.ndim != 2:
        raise EvaluationError("predictions and truths must be 2-D (records x layers)")
    if len(p) == 0 or len(t) == 0:
        raise EvaluationError("empty record set")
    if p.shape != t.shape:
        raise EvaluationError(f"shape mismatch: predictions {p.shape}, truths {t.shape}")
    return p, t


def rmse_per_layer(preds, truths) -> np.ndarray:
    """Root-mean-square error of each column over the records."""
    p, t = _pair(preds, truths)
    return np.sqrt(np.mean((p - t) ** 2, axis=0))


def overall_rmse(per_layer) -> float:
    """Euclidean norm of the per-layer RMSEs.

    Equivalently, the RMSE of the per-record error-vector norm.
    """
    v = np.asarray(per_layer, dtype=float).ravel()
    if v.size == 0:
        raise EvaluationError("per-layer RMSE vector is empty")
    return float(np.sqrt(np.sum(v * v)))


def baseline_mean_predictor(train_truths, test_truths) -> np.ndarray:
    """Per-layer RMSE of predicting the training mean for every test record."""
    tr = np.asarray(train_truths, dtype=float)
    te = np.asarray(test_truths, dtype=float)
    if tr.ndim != 2 or len(tr) == 0 or te.ndim != 2 or len(te) == 0:
        raise EvaluationError("baseline needs non-empty 2-D training and test sets")
    if tr.shape[1] != te.shape[1]:
        raise EvaluationError(f"layer count mismatch: train {tr.shape[1]}, test {te.shape[1]}")
    return rmse_per_layer(np.broadcast_to(tr.mean(axis=0), te.shape), te)


@dataclass(frozen=True)
class MetricsReport:
    """RMSE summary in nm."""

    names: tuple
    per_layer_rmse: tuple
    overall_rmse: float
    per_layer_baseline_rmse: tuple
    count: int

    @property
    def baseline_overall(self) -> float:
        return overall_rmse(self.per_layer_baseline_rmse)

    def layers_beating_baseline(self) -> int:
        return int(sum(m < b for m, b in zip(self.per_layer_rmse, self.per_layer_baseline_rmse)))

    def to_dict(self):
        return {
            "names": list(self.names),
            "per_layer_rmse": list(self.per_layer_rmse),
            "overall_rmse": self.overall_rmse,
            "per_layer_baseline_rmse": list(self.per_layer_baseline_rmse),
            "baseline_overall_rmse": self.baseline_overall,
            "count": self.count,
        }

    def format(self) -> str:
        width = max(len("overall"), *(len(n) for n in self.names))
        lines = [f"{'layer':<{width}}  {'rmse_nm':>10}  {'baseline_nm':>11}"]
        for n, m, b in zip(self.names, self.per_layer_rmse, self.per_layer_baseline_rmse):
            lines.append(f"{n:<{width}}  {m:10.4f}  {b:11.4f}")
        lines.append(f"{'overall':<{width}}  {self.overall_rmse:10.4f}  {self.baseline_overall:11.4f}")
        lines.append(f"records: {self.count}")
        return "\n".join(lines)


def metrics_report(preds, truths, train_truths, names=None) -> MetricsReport:
    per = rmse_per_layer(preds, truths)
    base = baseline_mean_predictor(train_truths, np.atleast_2d(np.asarray(truths, float)))
    names = tuple(names) if names is not None else tuple(f"layer{i}" for i in range(len(per)))
    if len(names) != len(per):
        raise EvaluationError(f"{len(names)} names for {len(per)} layers")
    return MetricsReport(
        names, tuple(float(v) for v in per), overall_rmse(per), tuple(float(v) for v in base), len(np.atleast_2d(truths))
    )


def _svg(truth, pred, name, lo, hi, size=360, pad=48):
    span = hi - lo if hi > lo else 1.0

    def sx(v):
        return pad + (v - lo) / span * (size - 2 * pad)

    def sy(v):
        return size - pad - (v - lo) / span * (size - 2 * pad)

    inner = size - 2 * pad
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect x="{pad}" y="{pad}" width="{inner}" height="{inner}" fill="white" stroke="black"/>',
        f'<line x1="{sx(lo):.2f}" y1="{sy(lo):.2f}" x2="{sx(hi):.2f}" y2="{sy(hi):.2f}" stroke="red" stroke-width="1"/>',
    ]
    for t, p in zip(truth, pred):
        # clamp to the frame so wild predictions stay visible on the border
        x = sx(min(max(t, lo), hi))
        y = sy(min(max(p, lo), hi))
        out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="1.5" fill="steelblue" fill-opacity="0.6"/>')
    out += [
        f'<text x="{size / 2}" y="{pad / 2}" text-anchor="middle" font-size="14">{name}</text>',
        f'<text x="{size / 2}" y="{size - 10}" text-anchor="middle" font-size="12">true (nm)</text>',
        f'<text x="14" y="{size / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {size / 2})">predicted (nm)</text>',
        f'<text x="{pad}" y="{size - pad + 14}" font-size="10">{lo:g}</text>',
        f'<text x="{size - pad}" y="{size - pad + 14}" text-anchor="end" font-size="10">{hi:g}</text>',
        "</svg>",
    ]
    return "\n".join(out) + "\n"


def export_scatter(preds, truths, names, out_dir, ranges=None) -> list[Path]:
    """Write ``<name>.csv`` (truth_nm, pred_nm) and ``<name>.svg`` per layer.

    ``ranges`` gives (lower, upper) axis limits per layer; defaults to the
    joint data range.  Nothing is written if the inputs are invalid.
    """
    p, t = _pair(preds, truths)
    names = list(names)
    if len(names) != p.shape[1]:
        raise EvaluationError(f"{len(names)} names for {p.shape[1]} layers")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise EvaluationError(f"{out_dir}: cannot create output directory ({exc.strerror})") from None
    written = []
    for j, name in enumerate(names):
        if ranges is not None:
            lo, hi = (float(v) for v in ranges[j])
        else:
            lo = float(min(t[:, j].min(), p[:, j].min()))
            hi = float(max(t[:, j].max(), p[:, j].max()))
        csv_path = out_dir / f"{name}.csv"
        svg_path = out_dir / f"{name}.svg"
        try:
            with open(csv_path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["truth_nm", "pred_nm"])
                for a, b in zip(t[:, j], p[:, j]):
                    w.writerow([repr(float(a)), repr(float(b))])
            svg_path.write_text(_svg(t[:, j], p[:, j], name, lo, hi))
        except OSError as exc:
            raise EvaluationError(f"{out_dir}: cannot write scatter files ({exc.strerror})") from None
        written += [csv_path, svg_path]
    return written


def read_scatter(out_dir, names):
    """Load exported scatter CSVs back as (preds, truths) arrays."""
    cols_t, cols_p = [], []
    for name in names:
        with open(Path(out_dir) / f"{name}.csv", newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        cols_t.append([float(r[0]) for r in rows])
        cols_p.append([float(r[1]) for r in rows])
    return np.array(cols_p).T, np.array(cols_t).T


def uniform_baseline(lower, upper) -> float:
    """Asymptotic mean-predictor RMSE for a uniform layer on [lower, upper]."""
    return (upper - lower) / math.sqrt(12.0)
