"""Figures the CLI drops next to its delimited outputs.

Everything renders through the Agg backend straight to files; no display
is ever opened.  The density figure reads the grid CSV back rather than
recomputing, so the picture is of the file, not of a parallel code path.
"""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "density_figure",
    "fit_figure",
    "marginals_figure",
    "nonexpansion_figure",
    "contraction_figure",
]

_DPI = 150


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def density_figure(grid_csv, path, cont_names, disc_names) -> None:
    """Render the grid written by the density command.

    With no continuous coordinate this is a bar chart over outcomes; with
    one, a curve per discrete outcome (top eight by mass); with two, a
    scatter colored by density, one panel per leading outcome.
    """
    with open(grid_csv, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    if not rows:
        raise ValueError(f"{grid_csv}: no rows to plot")
    table = np.asarray(rows)
    cols = {name: i for i, name in enumerate(header)}
    dens = table[:, cols["density"]]
    p1 = len(cont_names)

    if p1 == 0:
        fig, ax = plt.subplots(figsize=(7, 4))
        labels = [
            ",".join(f"{n}={int(row[cols[n]])}" for n in disc_names)
            for row in table
        ]
        ax.bar(np.arange(len(labels)), dens, color="#4878cf")
        ax.set_xticks(np.arange(len(labels)))
        ax.set_xticklabels(labels, rotation=60, ha="right", fontsize=7)
        ax.set_ylabel("probability")
        _save(fig, path)
        return

    x = table[:, cols[cont_names[0]]]
    if disc_names:
        keys = table[:, [cols[n] for n in disc_names]].astype(np.int64)
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        mass = np.bincount(inverse, weights=dens)
        top = np.argsort(mass)[::-1][:8]
    else:
        uniq, inverse, top = np.zeros((1, 0), dtype=np.int64), np.zeros(len(x), dtype=int), [0]

    if p1 == 1:
        fig, ax = plt.subplots(figsize=(7, 4))
        for g in top:
            rows_g = inverse == g
            label = (
                ",".join(f"{n}={v}" for n, v in zip(disc_names, uniq[g]))
                if disc_names
                else "density"
            )
            order = np.argsort(x[rows_g])
            ax.plot(x[rows_g][order], dens[rows_g][order], label=label, lw=1.2)
        ax.set_xlabel(cont_names[0])
        ax.set_ylabel("density")
        if disc_names:
            ax.legend(fontsize=7)
        _save(fig, path)
        return

    y = table[:, cols[cont_names[1]]]
    n_panels = min(len(top), 4)
    fig, axes = plt.subplots(
        1, n_panels, figsize=(4 * n_panels, 3.6), squeeze=False
    )
    for ax, g in zip(axes[0], top):
        rows_g = inverse == g
        sc = ax.scatter(x[rows_g], y[rows_g], c=dens[rows_g], s=8, cmap="viridis")
        if disc_names:
            ax.set_title(
                ",".join(f"{n}={v}" for n, v in zip(disc_names, uniq[g])), fontsize=8
            )
        ax.set_xlabel(cont_names[0])
        ax.set_ylabel(cont_names[1])
        fig.colorbar(sc, ax=ax, shrink=0.85)
    _save(fig, path)


def fit_figure(diagnostics: dict, path) -> None:
    """Trace plots of the sweep diagnostics: log joint and occupancy."""
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    ax1.plot(diagnostics.get("log_joint", []), lw=0.9, color="#4878cf")
    ax1.set_ylabel("complete-data log joint")
    ax2.plot(diagnostics.get("occupancy", []), lw=0.9, color="#d65f5f")
    ax2.set_ylabel("occupied clusters")
    ax2.set_xlabel("sweep")
    _save(fig, path)


def marginals_figure(outcomes, empirical, fitted, disc_names, path) -> None:
    """Observed vs fitted discrete-marginal probabilities, paired bars."""
    labels = [
        ",".join(f"{n}={int(v)}" for n, v in zip(disc_names, out))
        for out in outcomes
    ]
    idx = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(max(6, 0.5 * len(labels)), 4))
    ax.bar(idx - 0.2, empirical, width=0.4, label="empirical", color="#4878cf")
    ax.bar(idx + 0.2, fitted, width=0.4, label="fitted", color="#d65f5f")
    ax.set_xticks(idx)
    ax.set_xticklabels(labels, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel("probability")
    ax.legend()
    _save(fig, path)


def nonexpansion_figure(reports, path) -> None:
    """Mixed vs latent divergence per instance; everything at or below
    the diagonal is the inequality holding."""
    latent = np.array([r.latent.value for r in reports])
    mixed = np.array([r.mixed.value for r in reports])
    holds = np.array([r.holds for r in reports])
    finite = np.isfinite(latent) & np.isfinite(mixed)
    fig, ax = plt.subplots(figsize=(5.5, 5))
    ax.scatter(
        latent[finite & holds], mixed[finite & holds], s=14, color="#4878cf",
        label=f"holds ({int(holds.sum())}/{len(reports)})",
    )
    if np.any(~holds):
        ax.scatter(
            latent[finite & ~holds], mixed[finite & ~holds], s=20,
            color="#d65f5f", label="violated",
        )
    lim = max(1e-3, float(latent[finite].max(initial=0.0)) * 1.05)
    ax.plot([0, lim], [0, lim], "k--", lw=0.8, label="y = x")
    ax.set_xlabel("latent divergence")
    ax.set_ylabel("mixed divergence")
    ax.legend(fontsize=8)
    _save(fig, path)


def contraction_figure(report, path) -> None:
    """Replication errors, means, and the visual reference rate curve."""
    n = np.asarray(report.n_grid, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for i in range(len(n)):
        reps = report.errors[i]
        good = np.isfinite(reps)
        ax.scatter(np.full(good.sum(), n[i]), reps[good], s=12, color="#aaaaaa")
    ax.errorbar(
        n, report.means, yerr=report.spreads, fmt="o-", color="#4878cf",
        label=f"mean L1 (slope {report.slope:.2f})",
    )
    ax.plot(n, report.reference_curve, "k--", lw=0.9, label=report.reference)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("sample size n")
    ax.set_ylabel("L1(predictive, truth)")
    ax.legend(fontsize=8)
    _save(fig, path)
