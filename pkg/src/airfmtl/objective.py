"""Closed-form communication MSE and the per-round design objective.

For task ``k`` with effective channels ``h_m = f_k^H H_m u_m`` the
communication MSE is a convex quadratic in the weighting factor::

    MSE(zeta) = C / S**2 * (2 v c0 - 2 zeta sqrt(v) a + 2 zeta**2 b)

with ``S`` the selected sample count and

* ``a  = sum_ij rho_ij (Q_i conj(h_j) + Q_j h_i)`` (own task),
* ``b  = sum_l sum_ij rho^l_ij conj(h_li) h_lj + sigma2 ||f_k||^2 / 2`` (all tasks),
* ``c0 = sum_ij rho_ij Q_i Q_j``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .airlink import Scenario, effective_channels

NMSE_FLOOR_DB = -300.0


@dataclass(frozen=True)
class MseCoefficients:
    a: np.ndarray   # per task
    b: np.ndarray
    c0: np.ndarray
    S: np.ndarray   # selected sample count per task

    def task(self, k: int) -> tuple[float, float, float, float]:
        return float(self.a[k]), float(self.b[k]), float(self.c0[k]), float(self.S[k])


@dataclass(frozen=True)
class AnalysisConstants:
    omega: float
    mu: float
    beta1: float
    beta2: float

    def __post_init__(self):
        if not (self.omega >= self.mu > 0 and self.beta1 >= 0 and self.beta2 >= 0):
            raise ValueError("need omega >= mu > 0 and beta1, beta2 >= 0")


def _real(x: complex, what: str) -> float:
    if abs(x.imag) > 1e-9 * abs(x) + 1e-12:
        raise ArithmeticError(f"{what} has a non-negligible imaginary part ({x.imag:.3e})")
    return float(x.real)


def mse_coefficients(scn: Scenario, h: np.ndarray, selected: np.ndarray,
                     f_norm2: np.ndarray | None = None) -> MseCoefficients:
    """Coefficients of every task from the ``K x M`` effective channel matrix."""
    K = scn.K
    if f_norm2 is None:
        f_norm2 = np.ones(K)
    q = np.where(selected, scn.Q, 0.0)
    hs = np.where(selected[None, :], h, 0.0)
    a = np.empty(K)
    b = np.empty(K)
    c0 = np.empty(K)
    S = np.empty(K)
    for k in range(K):
        sl = scn.task_slice(k)
        rho, qk, hk = scn.rho[k], q[sl], hs[k, sl]
        a[k] = _real(qk @ rho @ hk.conj() + hk @ rho @ qk, f"a[{k}]")
        acc = 0.0 + 0.0j
        for l in range(K):
            hl = hs[k, scn.task_slice(l)]
            acc += hl.conj() @ scn.rho[l] @ hl
        b[k] = _real(acc, f"b[{k}]") + scn.sigma2 * f_norm2[k] / 2.0
        c0[k] = qk @ rho @ qk
        S[k] = qk.sum()
    return MseCoefficients(a, b, c0, S)


def coefficients_for(scn: Scenario, U: np.ndarray, F: np.ndarray,
                     selected: np.ndarray) -> MseCoefficients:
    U = np.where(selected[:, None], U, 0.0)
    h = effective_channels(scn.H, U, F)
    return mse_coefficients(scn, h, selected, np.sum(np.abs(F) ** 2, axis=1))


def comm_mse(zeta: float, a: float, b: float, c0: float, v: float, S: float, C: int) -> float:
    if S <= 0:
        raise ValueError("empty selection")
    sv = np.sqrt(v)
    return C / S ** 2 * (2 * v * c0 - 2 * zeta * sv * a + 2 * zeta ** 2 * b)


def comm_mse_min(a: float, b: float, c0: float, v: float, S: float, C: int) -> float:
    if S <= 0:
        raise ValueError("empty selection")
    return max(2 * C * v * (c0 - a * a / (4 * b)) / S ** 2, 0.0)


def analytic_nmse_db(zeta: float, a: float, b: float, c0: float, v: float) -> float:
    """Expected NMSE of the aggregate for zero-mean gradients, in dB.

    The ideal aggregate then has energy ``2 C v c0 / S**2``, so the ratio
    does not depend on ``C`` or ``S``.
    """
    if c0 <= 0 or v <= 0:
        raise ValueError("NMSE undefined for a zero ideal aggregate")
    sv = np.sqrt(v)
    ratio = (2 * v * c0 - 2 * zeta * sv * a + 2 * zeta ** 2 * b) / (2 * v * c0)
    return float(10 * np.log10(ratio)) if ratio > 0 else NMSE_FLOOR_DB


def selection_term(full_Q: float, S: float) -> float:
    return 4.0 / full_Q ** 2 * (full_Q - S) ** 2


def d_values(scn: Scenario, coeffs: MseCoefficients) -> np.ndarray:
    """Per-task ``d_k``: selection penalty plus normalized minimum MSE."""
    out = np.empty(scn.K)
    for k in range(scn.K):
        a, b, c0, S = coeffs.task(k)
        if S <= 0:
            raise ValueError(f"task {k} has an empty selection")
        out[k] = selection_term(scn.full_Q(k), S) + (c0 - a * a / (4 * b)) / S ** 2
    return out


def d_k(scn: Scenario, U: np.ndarray, F: np.ndarray, selected: np.ndarray, k: int) -> float:
    return float(d_values(scn, coefficients_for(scn, U, F, selected))[k])


def objective(scn: Scenario, U: np.ndarray, F: np.ndarray, selected: np.ndarray) -> float:
    return float(d_values(scn, coefficients_for(scn, U, F, selected)).sum())


def nmse_db(g_hat: np.ndarray, g: np.ndarray) -> float:
    denom = float(np.sum(np.asarray(g) ** 2))
    if denom <= 0:
        raise ValueError("reference gradient is zero")
    ratio = float(np.sum((np.asarray(g_hat) - g) ** 2)) / denom
    if ratio <= 0:
        return NMSE_FLOOR_DB
    return float(max(10 * np.log10(ratio), NMSE_FLOOR_DB))


def convergence_bound(prev_gap: float, E: float, consts: AnalysisConstants) -> float:
    """Right-hand side of the per-round optimality-gap recursion."""
    r = consts.mu / consts.omega
    return prev_gap * (1 - r) + (2 * r * consts.beta2 * prev_gap + consts.beta1 / consts.omega) * E
