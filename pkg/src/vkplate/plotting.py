"""Figures for the command line reports, rendered straight to files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "vkplate"  # stable element ids across runs
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

FORMATS = ("png", "svg")


def _save(fig, path: Path) -> list[Path]:
    fig.tight_layout()
    written = []
    for ext in FORMATS:
        p = path.with_suffix("." + ext)
        # fixed metadata keeps reruns byte-identical
        meta = {"Date": None} if ext == "svg" else {"Software": None}
        fig.savefig(p, dpi=100, metadata=meta)
        written.append(p)
    plt.close(fig)
    return written


def plot_spectrum(trace, path) -> list[Path]:
    """sigma_i(lambda) curves with the zero line; crossings are marked."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for i, s in enumerate(trace.sigma_curves):
        ax.plot(trace.lambda_grid, s, marker=".", label=f"$\\sigma_{i + 1}$")
    ax.axhline(0.0, color="k", lw=0.8)
    for curve, (_, hi) in trace.crossings:
        ax.axvline(hi, color="grey", ls=":", lw=0.8)
    ax.set_xlabel(r"$\lambda$")
    ax.set_ylabel(r"$\sigma_\lambda$")
    ax.legend(loc="best", fontsize=8)
    return _save(fig, Path(path))


def plot_diagram(rows, path, title=None) -> list[Path]:
    """Ordinate against lambda, one line per branch.

    ``rows`` are diagram.csv records: dicts with branch_id, lambda, ordinate
    and optionally label.
    """
    fig, ax = plt.subplots(figsize=(6, 4))
    by_branch = {}
    for r in rows:
        by_branch.setdefault(r["branch_id"], []).append(r)
    for bid, pts in sorted(by_branch.items()):
        lam = np.array([p["lambda"] for p in pts])
        ords = np.array([p["ordinate"] for p in pts])
        ax.plot(lam, ords, marker=".", ms=3, label=pts[0].get("label", str(bid)))
    ax.set_xlabel(r"$\lambda$")
    ax.set_ylabel(r"$u$ at max $|u|$")
    if title:
        ax.set_title(title)
    if by_branch:
        ax.legend(loc="best", fontsize=7)
    return _save(fig, Path(path))


def plot_rb_error(Ns, errors, path) -> list[Path]:
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.semilogy(Ns, errors, marker="o")
    ax.set_xlabel("N")
    ax.set_ylabel(r"$E_N$")
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, Path(path))


def plot_sweep2d(rows, path) -> list[Path]:
    """3-D view of the first branch for each psi: (lambda, psi, ordinate)."""
    fig = plt.figure(figsize=(6, 5))
    ax = fig.add_subplot(projection="3d")
    by_psi = {}
    for r in rows:
        by_psi.setdefault(r["psi"], []).append(r)
    for psi, pts in sorted(by_psi.items()):
        lam = np.array([p["lambda"] for p in pts])
        ords = np.array([p["ordinate"] for p in pts])
        ax.plot(lam, np.full_like(lam, psi), ords, marker=".", ms=2)
    ax.set_xlabel(r"$\lambda$")
    ax.set_ylabel(r"$\psi$")
    ax.set_zlabel(r"$u$ at max $|u|$")
    return _save(fig, Path(path))
