"""Figure rendering for the report paths.

Every CLI report writer drops a PNG next to its delimited output unless
figures are disabled.  Plain matplotlib, Agg backend, no styling beyond a
consistent size and grid.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

FIGSIZE = (6.4, 4.0)


def save_figure(fig, path) -> None:
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def fig_loss_curve(trace):
    fig, ax = plt.subplots(figsize=FIGSIZE)
    steps = [r[0] for r in trace]
    for idx, label in ((1, "total"), (2, "cls"), (3, "dice"), (4, "bce")):
        ax.plot(steps, [r[idx] for r in trace], label=label, linewidth=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    ax.legend()
    ax.set_title("training loss")
    return fig


def fig_recall(report):
    fig, ax = plt.subplots(figsize=FIGSIZE)
    names, values = [], []
    for name, rec in (("emergence", report.emergence_recall),
                      ("disappearance", report.disappearance_recall)):
        if rec is not None:
            names.append(name)
            values.append(rec)
    ax.bar(names, values, color=["#1f77b4", "#ff7f0e"][:len(names)])
    ax.set_ylim(0, 1)
    ax.set_ylabel("recall")
    ax.grid(axis="y", alpha=0.3)
    ax.set_title(f"event recall (IoU >= {report.iou_thresh}, "
                 f"tol {report.frame_tol})")
    for i, v in enumerate(values):
        ax.text(i, v + 0.02, f"{v:.2f}", ha="center")
    return fig


def fig_gap(report):
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.bar(["cosine similarity", "normalized distance"],
           [report.cs_mean, report.ned_mean],
           yerr=[report.cs_std, report.ned_std],
           color=["#2ca02c", "#d62728"], capsize=4)
    ax.grid(axis="y", alpha=0.3)
    ax.set_title(f"anchor-to-target transition gap ({report.count} events)")
    return fig


def fig_ablation(axis_name: str, rows):
    """rows: (value, emergence, disappearance, combined) per config."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    xs = list(range(len(rows)))
    labels = [str(r[0]) for r in rows]
    for idx, label in ((1, "emergence"), (2, "disappearance"), (3, "combined")):
        ys = [r[idx] for r in rows]
        ax.plot(xs, ys, marker="o", label=label)
    ax.set_xticks(xs)
    ax.set_xticklabels(labels)
    ax.set_xlabel(axis_name)
    ax.set_ylabel("recall")
    ax.set_ylim(0, 1)
    ax.grid(alpha=0.3)
    ax.legend()
    ax.set_title(f"sweep over {axis_name}")
    return fig
