"""Figures written next to the CSV artifacts of a run directory."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .overlay import OPS  # noqa: E402

# PNG metadata would otherwise carry the matplotlib version
_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def interval_figure(path, series, op="fix_next_finger", phase_ms=None):
    """Mean ``op`` interval over live nodes against time, one line per label.

    ``series`` maps a label to a list of (time_ms, op, mean_interval_ms).
    """
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, rows in series.items():
        pts = [(t / 1000, v / 1000) for t, o, v in rows if o == op and v == v]
        if pts:
            xs, ys = zip(*pts)
            ax.plot(xs, ys, label=label, linewidth=1.2)
    if phase_ms:
        lo, hi = ax.get_xlim()
        t = phase_ms / 1000
        k = 1
        while t < hi:
            if k % 2:
                ax.axvspan(t, min(t + phase_ms / 1000, hi), color="0.92", zorder=0)
            t += phase_ms / 1000
            k += 1
    ax.set_xlabel("time [s]")
    ax.set_ylabel(f"mean {op} interval [s]")
    ax.legend(frameon=False)
    _save(fig, path)


def all_interval_figures(out_dir, series, phase_ms=None):
    paths = []
    for op in OPS:
        p = out_dir / f"intervals_{op}.png"
        interval_figure(p, series, op, phase_ms)
        paths.append(p)
    return paths


def ulm_figure(path, series, ylabel, scale=1.0):
    """Per-window ULM progression; ``series`` maps labels to (start_ms, value)."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, rows in series.items():
        pts = [(t / 60_000, v * scale) for t, v in rows if v is not None]
        if pts:
            xs, ys = zip(*pts)
            ax.plot(xs, ys, marker="o", markersize=3, label=label, linewidth=1.2)
    ax.set_xlabel("window start [min]")
    ax.set_ylabel(ylabel)
    ax.legend(frameon=False)
    _save(fig, path)


def doc_figure(path, series):
    """DOC step traces; ``series`` maps labels to (time_s, doc) change points."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, rows in series.items():
        if rows:
            xs, ys = zip(*rows)
            ax.step(xs, ys, where="post", label=label, linewidth=1.2)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("DOC")
    ax.set_yticks(range(1, 5))
    ax.legend(frameon=False)
    _save(fig, path)
