"""Over-the-air gradient aggregation over the MIMO multiple-access uplink.

Devices are indexed globally ``m = 0 .. M-1``, task by task. A transmit plan
is the ``M x N_T`` array ``U`` (row ``m`` is device ``m``'s beamformer), a
receive plan the ``K x N_R`` array ``F`` of unit combiners plus one real
weighting factor ``zeta`` per task.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

POWER_SLACK = 1e-12


@dataclass(frozen=True)
class Scenario:
    """Everything the transceiver design sees in one round."""

    H: np.ndarray                 # M x N_R x N_T
    rho: tuple[np.ndarray, ...]   # per-task M_k x M_k correlation
    Q: np.ndarray                 # per-device sample counts
    counts: tuple[int, ...]       # M_k
    sigma2: float
    P0: float
    offsets: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        offs = np.concatenate([[0], np.cumsum(self.counts)]).astype(int)
        object.__setattr__(self, "offsets", tuple(int(o) for o in offs))
        object.__setattr__(self, "Q", np.asarray(self.Q, dtype=float))
        if self.H.shape[0] != offs[-1] or self.Q.shape[0] != offs[-1]:
            raise ValueError("H, Q and counts disagree on the device count")
        if len(self.rho) != len(self.counts):
            raise ValueError("need one correlation matrix per task")
        for r, c in zip(self.rho, self.counts):
            if np.shape(r) != (c, c):
                raise ValueError("correlation matrix shape does not match M_k")

    @property
    def K(self) -> int:
        return len(self.counts)

    @property
    def M(self) -> int:
        return self.offsets[-1]

    @property
    def N_R(self) -> int:
        return self.H.shape[1]

    @property
    def N_T(self) -> int:
        return self.H.shape[2]

    def task_slice(self, k: int) -> slice:
        return slice(self.offsets[k], self.offsets[k + 1])

    def task_of(self, m: int) -> int:
        return int(np.searchsorted(self.offsets, m, side="right") - 1)

    def full_Q(self, k: int) -> float:
        return float(self.Q[self.task_slice(k)].sum())

    def all_selected(self) -> np.ndarray:
        return np.ones(self.M, dtype=bool)


@dataclass
class TransmitPlan:
    U: np.ndarray

    def power_fraction(self, P0: float) -> np.ndarray:
        return 2.0 * np.sum(np.abs(self.U) ** 2, axis=1) / P0

    def check_power(self, P0: float) -> None:
        excess = 2.0 * np.sum(np.abs(self.U) ** 2, axis=1) - P0
        if np.any(excess > POWER_SLACK):
            worst = int(np.argmax(excess))
            raise ValueError(f"device {worst} exceeds the power budget by {excess[worst]:.3e}")


@dataclass
class ReceivePlan:
    F: np.ndarray
    zeta: np.ndarray


def effective_channels(H: np.ndarray, U: np.ndarray, F: np.ndarray) -> np.ndarray:
    """``h[k, m] = f_k^H H_m u_m`` for every receiver ``k`` and device ``m``."""
    HU = np.einsum("mrt,mt->mr", H, U)
    return F.conj() @ HU.T


def modulate(g: np.ndarray) -> np.ndarray:
    """Map a real length-``D`` vector to ``D/2`` complex symbols.

    The first half of the entries becomes the real part, the second half the
    imaginary part. Works column-wise on ``D x n`` input.
    """
    g = np.asarray(g, dtype=float)
    D = g.shape[0]
    if D % 2:
        raise ValueError(f"modulation needs an even length, got {D}")
    C = D // 2
    return g[:C] + 1j * g[C:]


def demodulate(r: np.ndarray) -> np.ndarray:
    return np.concatenate([r.real, r.imag], axis=0)


def transmit(H: np.ndarray, U: np.ndarray, R: np.ndarray, sigma2: float,
             rng: np.random.Generator | None) -> np.ndarray:
    """Received ``N_R x C`` block for symbols ``R`` (one row per device).

    Noise entries are CN(0, sigma2). ``rng`` may be ``None`` only when
    ``sigma2 == 0``.
    """
    if R.shape[0] != H.shape[0] or U.shape != (H.shape[0], H.shape[2]):
        raise ValueError("shape mismatch between channels, plan and symbols")
    HU = np.einsum("mrt,mt->mr", H, U)
    Y = HU.T @ R
    if sigma2 > 0:
        if rng is None:
            raise ValueError("noisy transmission needs a random generator")
        scale = np.sqrt(sigma2 / 2.0)
        Y = Y + scale * (rng.standard_normal(Y.shape) + 1j * rng.standard_normal(Y.shape))
    return Y


def combine(Y: np.ndarray, f: np.ndarray, zeta: float) -> np.ndarray:
    return zeta * (f.conj() @ Y)


def reconstruct(r_hat: np.ndarray, means: np.ndarray, Q: np.ndarray,
                selected: np.ndarray | None = None) -> np.ndarray:
    """Aggregated real gradient from the combined symbols of one task."""
    Q = np.asarray(Q, dtype=float)
    if selected is not None:
        Q = np.where(selected, Q, 0.0)
    total = Q.sum()
    if total <= 0:
        raise ValueError("empty selection: no samples to aggregate")
    g_bar = float(Q @ np.asarray(means)) / total
    return demodulate(r_hat) / total + g_bar


def aggregate_over_air(scn: Scenario, U: np.ndarray, recv: ReceivePlan,
                       normalized: Sequence[np.ndarray], means: Sequence[np.ndarray],
                       selected: np.ndarray, rng: np.random.Generator | None) -> list[np.ndarray]:
    """Run the full pipeline for all tasks and return the estimates per task.

    ``normalized[k]`` is the ``D x M_k`` normalized gradient block of task ``k``.
    """
    U = np.where(selected[:, None], U, 0.0)
    R = np.concatenate([modulate(Z).T for Z in normalized], axis=0)
    Y = transmit(scn.H, U, R, scn.sigma2, rng)
    out = []
    for k in range(scn.K):
        sl = scn.task_slice(k)
        r_hat = combine(Y, recv.F[k], recv.zeta[k])
        out.append(reconstruct(r_hat, means[k], scn.Q[sl], selected[sl]))
    return out


def optimal_zeta(a: float, b: float, v: float) -> float:
    """MSE-minimizing weighting factor ``sqrt(v) * a / (2 b)``."""
    if not b > 1e-300:
        raise ZeroDivisionError("degenerate receive statistics: b <= 0")
    return float(np.sqrt(v) * a / (2.0 * b))


def zero_forcing(scn: Scenario, F: np.ndarray, v: Sequence[float],
                 selected: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Strict-alignment baseline: transmit plan and weighting factors.

    Each selected device inverts its effective channel so that
    ``zeta_k f_k^H H u = Q sqrt(v_k)``; ``zeta_k`` is raised until the weakest
    device (the straggler) just meets ``2 ||u||^2 <= P0``.
    """
    if selected is None:
        selected = scn.all_selected()
    U = np.zeros((scn.M, scn.N_T), dtype=complex)
    zeta = np.zeros(scn.K)
    for k in range(scn.K):
        sl = scn.task_slice(k)
        idx = np.flatnonzero(selected[sl]) + sl.start
        if idx.size == 0:
            continue
        # rows: f_k^H H_m
        fH = np.einsum("r,mrt->mt", F[k].conj(), scn.H[idx])
        norms = np.sum(np.abs(fH) ** 2, axis=1)
        if np.any(norms <= 0):
            raise ValueError(f"task {k}: a selected device has a zero effective channel")
        Qs = scn.Q[idx]
        # zeta / sqrt(v); the plan itself does not depend on v
        unit = np.sqrt(np.max(2.0 * Qs ** 2 / (scn.P0 * norms)))
        zeta[k] = np.sqrt(v[k]) * unit
        U[idx] = (Qs / (unit * norms))[:, None] * fH.conj()
    return U, zeta
