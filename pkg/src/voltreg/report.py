"""Figure rendering and table formatting for the harness outputs.

Every command writes delimited data (CSV) as the canonical artifact; the
helpers here render a PNG next to each CSV so results can be eyeballed
without extra tooling.  Rendering is headless (Agg) and deterministic-ish,
but only the delimited outputs participate in reproducibility hashing.
"""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_PNG_META = {"Software": None}  # keep library version strings out of the files


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def save_loss_curve(losses, csv_path, png_path):
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_mse"])
        for i, x in enumerate(losses):
            w.writerow([i + 1, "%.10e" % x])
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(np.arange(1, len(losses) + 1), losses)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training MSE")
    ax.grid(True, which="both", alpha=0.3)
    _finish(fig, png_path)


def save_error_hist(per_node_mae, labels, csv_path, png_path):
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_phase", "mae"])
        for lab, x in zip(labels, per_node_mae):
            w.writerow([lab, "%.10e" % x])
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(np.arange(len(per_node_mae)), per_node_mae)
    ax.set_xticks(np.arange(len(labels)))
    ax.set_xticklabels(labels, rotation=90, fontsize=6)
    ax.set_ylabel("MAE (p.u.)")
    ax.set_xlabel("node-phase")
    _finish(fig, png_path)


def save_reward_curve(returns, csv_path, png_path, window=100):
    smooth = np.full(len(returns), np.nan)
    for i in range(len(returns)):
        smooth[i] = returns[max(0, i - window + 1):i + 1].mean()
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "return", "return_mean%d" % window])
        for i, (r, s) in enumerate(zip(returns, smooth)):
            w.writerow([i + 1, "%.10e" % r, "%.10e" % s])
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(returns, alpha=0.3, label="episode return")
    ax.plot(smooth, label="window-%d mean" % window)
    ax.set_xlabel("episode")
    ax.set_ylabel("cumulative reward")
    ax.legend()
    ax.grid(alpha=0.3)
    _finish(fig, png_path)
    return smooth


def save_voltage_snapshot(v_by_method, labels, bounds, csv_path, png_path,
                          title=""):
    """Per node-phase |V| for several methods at one instant."""
    methods = list(v_by_method)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_phase"] + methods)
        for i, lab in enumerate(labels):
            w.writerow([lab] + ["%.10e" % v_by_method[m][i] for m in methods])
    fig, ax = plt.subplots(figsize=(8, 4))
    x = np.arange(len(labels))
    for m in methods:
        ax.plot(x, v_by_method[m], marker="o", ms=3, label=m)
    ax.axhline(bounds[0], color="r", ls="--", lw=0.8)
    ax.axhline(bounds[1], color="r", ls="--", lw=0.8)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=90, fontsize=6)
    ax.set_ylabel("|V| (p.u.)")
    if title:
        ax.set_title(title)
    ax.legend()
    _finish(fig, png_path)


def save_voltage_trace(t, v_by_method, bounds, csv_path, png_path,
                       xlabel="hour", title=""):
    """One monitored node-phase over time for several methods."""
    methods = list(v_by_method)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([xlabel] + methods)
        for i, tv in enumerate(t):
            w.writerow([tv] + ["%.10e" % v_by_method[m][i] for m in methods])
    fig, ax = plt.subplots(figsize=(6, 4))
    for m in methods:
        ax.plot(t, v_by_method[m], label=m)
    ax.axhline(bounds[0], color="r", ls="--", lw=0.8)
    ax.axhline(bounds[1], color="r", ls="--", lw=0.8)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("|V| (p.u.)")
    if title:
        ax.set_title(title)
    ax.legend()
    _finish(fig, png_path)


# -- comparison table ---------------------------------------------------------

TABLE_COLUMNS = ["method", "avg_dev_pct", "avg_dev_a_pct", "avg_dev_b_pct",
                 "avg_dev_c_pct", "max_drop_pct", "max_rise_pct", "violations"]


def report_row(rep):
    return [rep.method,
            "%.4f" % rep.avg_dev_pct,
            "%.4f" % rep.avg_dev_phase_pct["a"],
            "%.4f" % rep.avg_dev_phase_pct["b"],
            "%.4f" % rep.avg_dev_phase_pct["c"],
            "%.4f" % rep.max_drop_pct,
            "%.4f" % rep.max_rise_pct,
            str(rep.violations)]


def save_comparison_table(reports, csv_path, txt_path):
    rows = [report_row(r) for r in reports]
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE_COLUMNS)
        w.writerows(rows)
    widths = [max(len(c), *(len(r[i]) for r in rows))
              for i, c in enumerate(TABLE_COLUMNS)]
    lines = ["  ".join(c.ljust(widths[i]) for i, c in enumerate(TABLE_COLUMNS))]
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(r[i].ljust(widths[i]) for i in range(len(r))))
    text = "\n".join(lines) + "\n"
    with open(txt_path, "w") as fh:
        fh.write(text)
    return text
