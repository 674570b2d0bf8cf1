"""Report figures written next to the CSV outputs."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps PNG bytes reproducible
_META = {"Software": None}


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def plot_energy(times, energies, path, omega: float | None = None) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    e = np.asarray(energies)
    pos = e > 0
    ax.semilogy(np.asarray(times)[pos], e[pos], label="energy")
    if omega is not None and np.isfinite(omega) and pos.any():
        t = np.asarray(times)[pos]
        ax.semilogy(t, e[pos][0] * np.exp(-2 * omega * (t - t[0])), "--", label=f"exp(-2*{omega:.3g} t)")
    ax.set_xlabel("t")
    ax.set_ylabel("E(t)")
    ax.legend()
    _save(fig, path)


def plot_spectrum(eigenvalues, path) -> None:
    lam = np.asarray(eigenvalues)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.scatter(lam.real, lam.imag, s=14)
    ax.axvline(0.0, color="k", lw=0.5)
    ax.set_xlabel("Re")
    ax.set_ylabel("Im")
    _save(fig, path)


def plot_convergence(h, errors: dict, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    h = np.asarray(h)
    for name, err in errors.items():
        ax.loglog(h, err, "o-", label=name)
    ax.set_xlabel("h")
    ax.set_ylabel("error")
    ax.legend()
    _save(fig, path)


def plot_threshold(betas, least, beta_c: float, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.semilogx(betas, least, "o-")
    ax.axhline(0.0, color="k", lw=0.5)
    ax.axvline(beta_c, color="r", ls="--", label=f"beta_c = {beta_c:.3g}")
    ax.set_xlabel("beta")
    ax.set_ylabel("least eigenvalue / scale")
    ax.legend()
    _save(fig, path)
