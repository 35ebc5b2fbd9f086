"""Report figures (matplotlib, file output only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)


def plot_trajectory(traj, path, title: str = "") -> None:
    a = traj.arrays()
    n = len(a["z"])
    t = a["t"][:n]
    fig, axes = plt.subplots(3, 1, figsize=(7, 8), sharex=True)
    axes[0].plot(t, np.abs(a["z"]))
    axes[0].set_ylabel("|z|")
    axes[1].semilogy(t, np.maximum(np.abs(a["v"]), 1e-300))
    axes[1].set_ylabel("|dz/dt + iEz|")
    for key in ("eta_L2Ball", "eta_L6", "eta_H1"):
        axes[2].semilogy(t, np.maximum(a[key][:n], 1e-300), label=key[4:])
    axes[2].set_ylabel("eta norms")
    axes[2].set_xlabel("t")
    axes[2].legend()
    if title:
        axes[0].set_title(title)
    _save(fig, path)


def plot_family(family, path) -> None:
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    m = family.m_grid
    axes[0].plot(m, family.E_table, "o-")
    axes[0].set_xlabel("m")
    axes[0].set_ylabel("E[m]")
    ratio = [np.sqrt(np.sum(family.grid.weights * p.q.values.real**2)) / p.m**2 if p.m else np.nan
             for p in family.points]
    axes[1].plot(m, ratio, "o-")
    axes[1].set_xlabel("m")
    axes[1].set_ylabel("||q||/m^2")
    _save(fig, path)


def plot_scaling(amplitudes, values, path, ylabel: str) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(amplitudes, values, "o-")
    ax.set_xlabel("perturbation amplitude")
    ax.set_ylabel(ylabel)
    _save(fig, path)


def plot_cauchy(labels, values, path, ylabel: str = "H1 difference") -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.semilogy(range(len(values)), values, "o-")
    ax.set_xticks(range(len(values)))
    ax.set_xticklabels(labels, rotation=30)
    ax.set_ylabel(ylabel)
    _save(fig, path)


def plot_bursts(rows, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    j = [r["j"] for r in rows]
    ax.semilogy(j, [r["ratio_eps"] for r in rows], "o-", label="distance / (eps 2^-j)")
    if rows and "ratio_f" in rows[0]:
        ax.semilogy(j, [r["ratio_f"] for r in rows], "s-", label="distance / f(T_j)")
    ax.set_xlabel("burst j")
    ax.legend()
    _save(fig, path)
