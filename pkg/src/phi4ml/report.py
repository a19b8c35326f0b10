"""Figure rendering for the CLI report path.

Each function takes the same arrays that go into the delimited output and
writes a PNG next to it.  Rendering is optional (the ``plot`` config key);
the CSV files remain the authoritative artifacts.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_trace(path, values, ylabel, logscale=True):
    """Per-epoch trace (estimated KL, moment mismatch, reconstruction error)."""
    values = np.asarray(values, dtype=float)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(np.arange(len(values)), values, lw=0.8)
    if logscale and np.all(values > 0):
        ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel(ylabel)
    _save(fig, path)


def render_reweight_curve(path, g_prime, mean, err, ylabel,
                          direct=None, direct_err=None):
    """Extrapolated observable vs coupling, optionally with direct-run points."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(g_prime, mean, yerr=err, fmt="o-", ms=3, lw=0.8,
                capsize=2, label="reweighted")
    if direct is not None:
        ax.errorbar(g_prime, direct, yerr=direct_err, fmt="s", ms=3,
                    capsize=2, label="direct")
        ax.legend()
    ax.set_xlabel("coupling")
    ax.set_ylabel(ylabel)
    _save(fig, path)


def render_weight_functions(path, weight_functions):
    """Overlaid |W(t_j)| curves, one per extrapolated coupling value."""
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for wf in weight_functions:
        mag = np.abs(wf.weights)
        total = mag.sum()
        if total > 0:
            mag = mag / total
        ax.plot(wf.bin_centers, mag, lw=0.9, label=f"g' = {wf.g_prime:g}")
    ax.set_xlabel("t_j")
    ax.set_ylabel("|W(t_j)| (normalized)")
    ax.legend(fontsize=7)
    _save(fig, path)


def render_marginal(path, bin_centers, density_data, density_model=None):
    """Single-site marginal density of the data and of the learned model."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(bin_centers, density_data, lw=1.0, label="data")
    if density_model is not None:
        ax.plot(bin_centers, density_model, lw=1.0, ls="--", label="model")
        ax.legend()
    ax.set_xlabel("site value")
    ax.set_ylabel("density")
    _save(fig, path)


def render_feature_grid(path, features, n_cols=8):
    """Montage of learned features (one panel per hidden unit)."""
    n = len(features)
    n_cols = min(n_cols, n)
    n_rows = (n + n_cols - 1) // n_cols
    fig, axes = plt.subplots(n_rows, n_cols,
                             figsize=(1.1 * n_cols, 1.1 * n_rows))
    axes = np.atleast_1d(axes).ravel()
    for ax in axes:
        ax.axis("off")
    for ax, feat in zip(axes, features):
        ax.imshow(feat, cmap="gray")
    _save(fig, path)


def render_field_image(path, field_grid):
    """One field configuration rendered as a grayscale image."""
    fig, ax = plt.subplots(figsize=(3, 3))
    ax.imshow(field_grid, cmap="gray")
    ax.axis("off")
    _save(fig, path)
