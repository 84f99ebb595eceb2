"""Figure rendering for the report CSVs; files only, no interactive windows."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["fig_alignment", "fig_contraction", "fig_blowup", "fig_norm"]


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def fig_alignment(rows, path):
    """Per-level alignment defect against its budget."""
    levels = sorted({r["level"] for r in rows})
    worst = [max(r["defect"] for r in rows if r["level"] == lv) for lv in levels]
    budget = [max(r["delta_n"] for r in rows if r["level"] == lv) for lv in levels]
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    ax.semilogy(levels, worst, "o-", label="measured defect")
    ax.semilogy(levels, budget, "k--", label="budget $\\delta_n$")
    ax.set_xlabel("level $n$")
    ax.set_ylabel("alignment defect")
    ax.legend(frameon=False)
    _save(fig, path)


def fig_contraction(rows, path):
    levels = [r["level"] for r in rows]
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    ax.semilogy(levels, [r["empirical"] for r in rows], "o-", label="empirical ratio")
    ax.semilogy(levels, [r["matrix_sup"] for r in rows], "s-", label="matrix sup")
    ax.semilogy(levels, [2.0 ** (-lv) for lv in levels], "k--", label="$2^{-n}$")
    ax.set_xlabel("level $n$")
    ax.set_ylabel("operator contrast")
    ax.legend(frameon=False)
    _save(fig, path)


def fig_blowup(rows, path):
    ns = [r["n"] for r in rows]
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    ax.plot(ns, [r["distortion"] for r in rows], "o-", label="distortion")
    ax.plot(ns, [r["coverage_gap"] for r in rows], "s-", label="coverage gap")
    if rows:
        ax.axhline(rows[0].get("tol", np.nan), color="k", ls="--", lw=1,
                   label="tolerance $\\varepsilon$")
    ax.set_xlabel("scale index $n$")
    ax.set_ylabel("defect")
    ax.legend(frameon=False)
    _save(fig, path)


def fig_norm(rows, path):
    levels = [r["level"] for r in rows]
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    ax.semilogy(levels, [max(r["deviation"], 1e-17) for r in rows], "o-",
                label="norm deviation")
    ax.semilogy(levels, [r["bound"] for r in rows], "k--", label="bound")
    ax.set_xlabel("level $n$")
    ax.set_ylabel("relative deviation")
    ax.legend(frameon=False)
    _save(fig, path)
