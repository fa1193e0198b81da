"""Random problem instances for validation runs and tests."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .airlink import Scenario
from .channel import cscg
from .config import SystemConfig
from .channel import draw_channels, place_devices


def random_correlation(size: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Random PSD matrix with unit diagonal (normalized Gram matrix)."""
    rank = rank or size
    X = rng.standard_normal((size, rank)) + rng.uniform(0, 2) * rng.standard_normal((1, rank))
    G = X @ X.T
    d = np.sqrt(np.diag(G))
    rho = G / np.outer(d, d)
    np.fill_diagonal(rho, 1.0)
    return rho


def random_scenario(rng: np.random.Generator, counts: Sequence[int], N_T: int = 2,
                    N_R: int = 4, sigma2: float = 0.1, P0: float = 2.0,
                    gain_spread_db: float = 10.0, Q_range: tuple[int, int] = (1, 10)) -> Scenario:
    """Unit-scale scenario: CSCG channels with log-uniform large-scale gains."""
    M = int(sum(counts))
    gains = 10 ** (rng.uniform(-gain_spread_db, 0, size=M) / 10)
    H = cscg(rng, (M, N_R, N_T), gains[:, None, None])
    rho = tuple(random_correlation(c, rng) for c in counts)
    Q = rng.integers(Q_range[0], Q_range[1] + 1, size=M).astype(float)
    return Scenario(H, rho, Q, tuple(int(c) for c in counts), float(sigma2), float(P0))


def random_plan(scn: Scenario, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Feasible random transmit plan and unit receive vectors.

    Each receive vector's sign is flipped if needed so that its task's
    ``a_k`` is nonnegative, keeping the optimal weighting factor >= 0.
    """
    from .objective import coefficients_for

    U = cscg(rng, (scn.M, scn.N_T))
    norms = np.linalg.norm(U, axis=1, keepdims=True)
    U = U / norms * np.sqrt(scn.P0 / 2) * rng.uniform(0.2, 1.0, size=(scn.M, 1))
    F = cscg(rng, (scn.K, scn.N_R))
    F /= np.linalg.norm(F, axis=1, keepdims=True)
    coeffs = coefficients_for(scn, U, F, scn.all_selected())
    F[coeffs.a < 0] *= -1
    return U, F


def geometric_scenario(config: SystemConfig, seed: int, rho: Sequence[np.ndarray],
                       Q: np.ndarray | None = None, t: int = 0) -> Scenario:
    """Scenario drawn from the configured cell geometry and path loss."""
    from .config import substream

    placements = place_devices(config, substream(seed, "placement"))
    ch = draw_channels(placements, t, config, substream(seed, f"channel/{t}"))
    if Q is None:
        Q = np.full(config.total_devices, float(config.learning.samples_per_device))
    return Scenario(ch.H, tuple(rho), Q, tuple(config.M), config.sigma2, config.P0)
