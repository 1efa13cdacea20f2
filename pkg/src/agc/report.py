"""Metrics bundle and its rendering to CSV, SVG line charts and a markdown summary.

File schemas (stable):

* ``r2.csv``: ``variable,r2,r2_raw``; one row per variable in fixed order
* ``economics.csv``: ``item,control_mean,control_std,experimental_mean,experimental_std,relative_improvement,p_value``
* ``curve_<name>.csv``: ``step,value``
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .domain import LEDGER_COST_FIELDS, DomainError
from .metrics import relative_improvement, welch_t_test
from .twin import R2_VARIABLES

ECON_ROWS = (*LEDGER_COST_FIELDS, "total_cost", "gains", "net_profit")


class ReportError(DomainError):
    pass


@dataclass
class MetricsReport:
    horizon: int
    r2: dict[str, tuple[float, float]] = field(default_factory=dict)  # variable -> (clamped, raw)
    economics: dict[str, list[dict[str, float]]] = field(default_factory=dict)  # group -> ledgers
    curves: dict[str, list[float]] = field(default_factory=dict)  # net profit after each step
    cae: dict[str, list[float]] = field(default_factory=dict)  # cumulative absolute error

    def problems(self) -> list[str]:
        out = []
        for name in ("r2", "economics", "curves", "cae"):
            if not getattr(self, name):
                out.append(f"{name} is empty")
        if self.r2 and set(self.r2) != set(R2_VARIABLES):
            out.append(f"r2 must cover exactly {list(R2_VARIABLES)}")
        for group in ("control", "experimental"):
            if self.economics and not self.economics.get(group):
                out.append(f"economics.{group} is empty")
        for kind in ("curves", "cae"):
            for name, c in getattr(self, kind).items():
                if len(c) != self.horizon:
                    out.append(f"{kind}.{name} has {len(c)} points, horizon is {self.horizon}")
        return out

    def to_json(self) -> dict[str, Any]:
        return {"horizon": self.horizon, "r2": {k: list(v) for k, v in self.r2.items()},
                "economics": self.economics, "curves": self.curves, "cae": self.cae}

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> "MetricsReport":
        return cls(int(doc["horizon"]), {k: tuple(v) for k, v in doc.get("r2", {}).items()},
                   dict(doc.get("economics", {})), dict(doc.get("curves", {})), dict(doc.get("cae", {})))


def _ledger_row(ledger: Mapping[str, float], item: str) -> float:
    if item == "total_cost":
        return float(sum(ledger[k] for k in LEDGER_COST_FIELDS))
    if item == "net_profit":
        return float(ledger["gains"] - sum(ledger[k] for k in LEDGER_COST_FIELDS))
    return float(ledger[item])


def economics_table(economics: Mapping[str, Sequence[Mapping[str, float]]]) -> list[dict[str, Any]]:
    """Per-item means, spreads, relative improvement and Welch p-value."""
    rows = []
    for item in ECON_ROWS:
        ctrl = np.array([_ledger_row(l, item) for l in economics["control"]])
        exp = np.array([_ledger_row(l, item) for l in economics["experimental"]])
        p = float("nan")
        if len(ctrl) >= 2 and len(exp) >= 2:
            p = welch_t_test(exp, ctrl).p
        rows.append({
            "item": item,
            "control_mean": float(ctrl.mean()),
            "control_std": float(ctrl.std(ddof=1)) if len(ctrl) > 1 else 0.0,
            "experimental_mean": float(exp.mean()),
            "experimental_std": float(exp.std(ddof=1)) if len(exp) > 1 else 0.0,
            "relative_improvement": relative_improvement(float(exp.mean()), float(ctrl.mean())),
            "p_value": p,
        })
    return rows


def _fmt(x: float, digits: int = 3) -> str:
    return "n/a" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.{digits}f}"


def svg_line_chart(series: Mapping[str, Sequence[float]], title: str, width: int = 640, height: int = 360) -> str:
    """Minimal static SVG with one polyline per series and labelled y range."""
    pad_l, pad_r, pad_t, pad_b = 70, 20, 30, 30
    ys = np.concatenate([np.asarray(v, dtype=float) for v in series.values()])
    lo, hi = float(ys.min()), float(ys.max())
    if hi == lo:
        lo, hi = lo - 1.0, hi + 1.0
    n = max(len(v) for v in series.values())
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf")
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<rect x="{pad_l}" y="{pad_t}" width="{pw}" height="{ph}" fill="none" stroke="#888"/>',
        f'<text x="{pad_l - 6}" y="{pad_t + 10}" text-anchor="end" font-size="11">{hi:.4g}</text>',
        f'<text x="{pad_l - 6}" y="{pad_t + ph}" text-anchor="end" font-size="11">{lo:.4g}</text>',
        f'<text x="{pad_l + pw}" y="{height - 8}" text-anchor="end" font-size="11">{n - 1}</text>',
    ]
    for i, (name, vals) in enumerate(series.items()):
        v = np.asarray(vals, dtype=float)
        xs = pad_l + pw * np.arange(len(v)) / max(1, n - 1)
        yy = pad_t + ph * (1.0 - (v - lo) / (hi - lo))
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, yy))
        color = colors[i % len(colors)]
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        parts.append(f'<text x="{pad_l + 8}" y="{pad_t + 16 + 14 * i}" font-size="11" fill="{color}">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _csv(rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name).strip("_") or "curve"


def r2_csv(r2: Mapping[str, tuple[float, float]]) -> str:
    return _csv([("variable", "r2", "r2_raw")] + [(k, repr(float(r2[k][0])), repr(float(r2[k][1]))) for k in R2_VARIABLES])


def render_report(metrics: MetricsReport, out_dir: str | Path) -> list[Path]:
    """Write CSV tables, one SVG per curve family and ``summary.md``; returns the files written."""
    problems = metrics.problems()
    if problems:
        raise ReportError("metrics incomplete: " + "; ".join(problems))
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReportError(f"cannot create {out}: {exc}") from exc
    written: list[Path] = []

    def write(name: str, text: str) -> None:
        path = out / name
        try:
            path.write_text(text)
        except OSError as exc:
            raise ReportError(f"cannot write {path}: {exc}") from exc
        written.append(path)

    write("r2.csv", r2_csv(metrics.r2))
    table = economics_table(metrics.economics)
    cols = ("item", "control_mean", "control_std", "experimental_mean", "experimental_std", "relative_improvement", "p_value")
    write("economics.csv", _csv([cols] + [[r["item"]] + [repr(r[c]) for c in cols[1:]] for r in table]))
    for kind, family in (("net_profit", metrics.curves), ("cae", metrics.cae)):
        for name, vals in family.items():
            write(f"curve_{kind}_{_slug(name)}.csv", _csv([("step", "value")] + [(i, repr(float(v))) for i, v in enumerate(vals)]))
    write("net_profit.svg", svg_line_chart(metrics.curves, "Net profit (EUR/m2) over time"))
    write("cumulative_abs_error.svg", svg_line_chart(metrics.cae, "Cumulative absolute net-profit error"))

    n_c, n_e = len(metrics.economics["control"]), len(metrics.economics["experimental"])
    lines = ["# Evaluation summary", "", "## Goodness of fit (one-step R2)", "", "| Variable | R2 | raw |", "|---|---|---|"]
    lines += [f"| {k} | {_fmt(metrics.r2[k][0])} | {_fmt(metrics.r2[k][1])} |" for k in R2_VARIABLES]
    lines += [
        "", f"## Economics (EUR/m2; control n={n_c}, experimental n={n_e})", "",
        "| Item | Control | Experimental | RI | p (t-test) |", "|---|---|---|---|---|",
    ]
    for r in table:
        lines.append(
            f"| {r['item']} | {_fmt(r['control_mean'])} ± {_fmt(r['control_std'])} | "
            f"{_fmt(r['experimental_mean'])} ± {_fmt(r['experimental_std'])} | "
            f"{_fmt(100 * r['relative_improvement'], 2)}% | {_fmt(r['p_value'], 4)} |"
        )
    lines += ["", "RI = (experimental - control) / control. p < 0.01 marks a significant difference.", ""]
    write("summary.md", "\n".join(lines))
    write("metrics.json", json.dumps(metrics.to_json(), sort_keys=True))
    return written
