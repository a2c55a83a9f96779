"""Figures for fuzz reports, written next to the text report."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STAGES = ("expand", "schedule", "print", "parse")


def _setup(width=5.0, height=4.0):
    fig, ax = plt.subplots(figsize=(width, height), dpi=100)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    return fig, ax


def plot_makespans(report, path):
    fig, ax = _setup()
    if report.makespans:
        before, after = zip(*report.makespans)
        ax.scatter(before, after, s=6, alpha=0.5, color="tab:blue", linewidths=0)
        hi = max(max(before), max(after))
        ax.plot([0, hi], [0, hi], color="0.5", lw=0.8, ls="--")
    ax.set_xlabel("cycles, program order")
    ax.set_ylabel("cycles, scheduled")
    ax.set_title(f"makespan ({report.cases_run} cases, "
                 f"{report.makespan_regressions} regressions)")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_speedup(report, path):
    fig, ax = _setup()
    ratios = [a / b for b, a in report.makespans if b]
    if ratios:
        ax.hist(ratios, bins=40, color="tab:green")
    ax.axvline(1.0, color="0.3", lw=0.8)
    ax.set_xlabel("scheduled / original cycles")
    ax.set_ylabel("cases")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_stages(report, path):
    fig, ax = _setup()
    by_stage = report.rejections_by_stage()
    defects: dict = {}
    for d in report.divergences:
        defects[d.stage] = defects.get(d.stage, 0) + 1
    xs = range(len(STAGES))
    ax.bar([x - 0.2 for x in xs], [by_stage.get(s, 0) for s in STAGES], width=0.4,
           label="rejected (fell back)", color="tab:orange")
    ax.bar([x + 0.2 for x in xs], [defects.get(s, 0) for s in STAGES], width=0.4,
           label="checksum divergence", color="tab:red")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(STAGES)
    ax.set_ylabel("events")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def write_figures(report, outdir) -> list[str]:
    os.makedirs(outdir, exist_ok=True)
    paths = []
    for name, fn in (("makespan.png", plot_makespans), ("speedup.png", plot_speedup),
                     ("stages.png", plot_stages)):
        p = os.path.join(outdir, name)
        fn(report, p)
        paths.append(p)
    return paths
