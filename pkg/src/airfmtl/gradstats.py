"""Gradient normalization and spatial correlation models."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PSD_CLIP = -1e-10


@dataclass(frozen=True)
class GradientBatch:
    """Local gradients of one task, one column per device."""

    task: int
    G: np.ndarray          # D x M_k raw gradients
    normalized: np.ndarray  # D x M_k, zero-mean unit-variance columns
    means: np.ndarray      # per-device mean over entries
    variances: np.ndarray  # per-device variance over entries

    @property
    def task_variance(self) -> float:
        # shared variance fed to the formulas that assume one v per task
        return float(np.mean(self.variances))

    def denormalize(self) -> np.ndarray:
        return self.normalized * np.sqrt(self.variances) + self.means


@dataclass(frozen=True)
class CorrelationModel:
    task: int
    rho: np.ndarray
    mode: str

    @property
    def size(self) -> int:
        return self.rho.shape[0]


def normalize(G: np.ndarray, task: int = 0) -> GradientBatch:
    """Center and scale each column of ``G`` (shape ``D x M_k``).

    A constant column has zero variance; its normalized column is all zeros.
    Spread below rounding level of the column magnitude counts as constant.
    """
    G = np.asarray(G, dtype=float)
    if G.ndim == 1:
        G = G[:, None]
    if G.shape[0] < 2:
        raise ValueError("need D >= 2 entries per gradient")
    means = G.mean(axis=0)
    centered = G - means
    variances = np.mean(centered ** 2, axis=0)
    scale = np.sqrt(variances)
    flat = scale <= 1e-12 * np.abs(G).max(axis=0)
    variances = np.where(flat, 0.0, variances)
    scale = np.where(flat, 0.0, scale)
    safe = np.where(scale > 0, scale, 1.0)
    normalized = np.where(scale > 0, centered / safe, 0.0)
    return GradientBatch(task, G, normalized, means, variances)


def project_correlation(rho: np.ndarray) -> np.ndarray:
    """Symmetrize, clip negative eigenvalues and restore the unit diagonal."""
    rho = 0.5 * (rho + rho.T)
    w, V = np.linalg.eigh(rho)
    if w.min() < PSD_CLIP:
        rho = (V * np.clip(w, 0.0, None)) @ V.T
        rho = 0.5 * (rho + rho.T)
        d = np.sqrt(np.clip(np.diag(rho), 1e-300, None))
        rho = rho / np.outer(d, d)
    np.fill_diagonal(rho, 1.0)
    return np.clip(rho, -1.0, 1.0)


def raw_correlation(batch: GradientBatch) -> np.ndarray:
    Z = batch.normalized
    return Z.T @ Z / Z.shape[0]


def estimate_correlation(batch: GradientBatch) -> CorrelationModel:
    return CorrelationModel(batch.task, project_correlation(raw_correlation(batch)), "empirical")


def uniform_correlation(epsilon: float, size: int, task: int = 0) -> CorrelationModel:
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    rho = np.full((size, size), float(epsilon))
    np.fill_diagonal(rho, 1.0)
    return CorrelationModel(task, rho, f"uniform({epsilon:g})")


def correlated_rows(rho: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` i.i.d. zero-mean Gaussian rows with covariance ``rho``."""
    rho = np.asarray(rho, dtype=float)
    w, V = np.linalg.eigh(0.5 * (rho + rho.T))
    if w.min() < PSD_CLIP * max(1.0, abs(w).max()):
        raise np.linalg.LinAlgError(
            f"correlation matrix is not PSD (min eigenvalue {w.min():.3e})")
    root = V * np.sqrt(np.clip(w, 0.0, None))
    return rng.standard_normal((n, rho.shape[0])) @ root.T


def sample_correlated_gradients(model: CorrelationModel | np.ndarray, D: int,
                                rng: np.random.Generator, task: int = 0) -> GradientBatch:
    """Synthetic batch whose rows are Gaussian with covariance ``rho``.

    The rows are used as the normalized gradients directly; the recorded
    statistics are the population values (mean 0, variance 1).
    """
    rho = model.rho if isinstance(model, CorrelationModel) else np.asarray(model)
    task = model.task if isinstance(model, CorrelationModel) else task
    Z = correlated_rows(rho, D, rng)
    M = rho.shape[0]
    return GradientBatch(task, Z, Z, np.zeros(M), np.ones(M))
