"""Transceiver design by alternating optimization with the FP quadratic transform.

For fixed device selection the objective is ``-sum_k a_k**2 / (4 S_k**2 b_k)``
(plus constants). Introducing one auxiliary scalar ``y_k`` per task turns
each ratio into ``-(y_k a_k / S_k - y_k**2 b_k)``, which is a convex
quadratic in every single transmit vector ``u`` and every receive vector
``f_k``. Sweeps then cycle: device beamformers (ball-constrained QCQPs),
receive combiner (linear solve plus normalization), auxiliaries (closed form).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .airlink import Scenario, effective_channels
from .objective import MseCoefficients, d_values, mse_coefficients

KKT_TOL = 1e-8


class QcqpError(RuntimeError):
    pass


@dataclass(frozen=True)
class QcqpProblem:
    """``min u^H A u - 2 Re(b^H u)`` subject to ``||u||^2 <= radius2``."""

    A: np.ndarray
    b: np.ndarray
    radius2: float


@dataclass(frozen=True)
class QcqpSolution:
    u: np.ndarray
    multiplier: float
    stationarity: float
    slackness: float
    iterations: int

    def certified(self, b_norm: float) -> bool:
        return (self.multiplier >= 0
                and self.stationarity <= KKT_TOL * (b_norm + 1.0)
                and self.slackness <= KKT_TOL)


@dataclass
class BeamformingState:
    U: np.ndarray          # M x N_T
    F: np.ndarray          # K x N_R, unit rows
    y: np.ndarray          # K
    selected: np.ndarray   # M bools
    trace: list[float] = field(default_factory=list)
    sweeps: int = 0
    kkt_worst: float = 0.0      # largest normalized stationarity residual seen
    slack_worst: float = 0.0
    audit: list[tuple[int, str, int, float, float]] = field(default_factory=list)
    # per trace entry: d_k of every task and the surrogate value
    history: list[tuple[np.ndarray, float]] = field(default_factory=list)

    @property
    def objective(self) -> float:
        return self.trace[-1]

    def copy(self) -> "BeamformingState":
        return BeamformingState(self.U.copy(), self.F.copy(), self.y.copy(),
                                self.selected.copy(), list(self.trace), self.sweeps,
                                self.kkt_worst, self.slack_worst, list(self.audit),
                                list(self.history))


# --- ball-constrained QCQP --------------------------------------------------

def solve_ball_qcqp(p: QcqpProblem, max_iter: int = 200, tol: float = 1e-12) -> QcqpSolution:
    """Global minimizer of a convex quadratic over a Euclidean ball.

    ``A`` is eigendecomposed once. If the minimum-norm unconstrained
    minimizer exists and is feasible it is returned with multiplier 0;
    otherwise the multiplier ``lam > 0`` solving ``||(A + lam I)^-1 b|| = r``
    is found by safeguarded Newton steps on ``1/||u(lam)|| - 1/r`` inside
    the bracket ``(0, ||b|| / r]``, falling back to bisection.
    """
    A = 0.5 * (p.A + p.A.conj().T)
    b = np.asarray(p.b, dtype=complex)
    r2 = float(p.radius2)
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return QcqpSolution(np.zeros_like(b), 0.0, 0.0, 0.0, 0)
    w, V = np.linalg.eigh(A)
    scale = max(float(np.abs(w).max()), 1e-300)
    if w.min() < -1e-10 * scale:
        raise QcqpError(f"matrix is not PSD (min eigenvalue {w.min():.3e})")
    w = np.clip(w, 0.0, None)
    c = V.conj().T @ b
    c2 = np.abs(c) ** 2
    null = w <= 1e-13 * scale
    iters = 0
    lam = 0.0
    if not np.any(c2[null] > (1e-14 * b_norm) ** 2):
        coef = np.where(null, 0.0, c / np.where(null, 1.0, w))
        if float(np.sum(np.abs(coef) ** 2)) <= r2:
            u = V @ coef
            return _certify(A, b, u, 0.0, r2, 0)
    r = math.sqrt(r2)
    lo, hi = 0.0, b_norm / r
    lam = hi
    wl, cl = w.tolist(), c2.tolist()
    for iters in range(1, max_iter + 1):
        s = 0.0
        ds = 0.0
        for wi, ci in zip(wl, cl):
            d = wi + lam
            s += ci / (d * d)
            ds -= 2.0 * ci / (d * d * d)
        norm = math.sqrt(s)
        if abs(norm - r) <= tol * r:
            break
        if norm > r:
            lo = lam
        else:
            hi = lam
        # Newton on psi(lam) = 1/norm - 1/r, psi' = -ds / (2 s^1.5)
        psi = 1.0 / norm - 1.0 / r
        dpsi = -ds / (2.0 * s * norm)
        step = lam - psi / dpsi if dpsi > 0 else -1.0
        lam = step if lo < step < hi else 0.5 * (lo + hi)
        if hi - lo <= 1e-15 * hi:
            break
    else:
        raise QcqpError(f"no certificate after {max_iter} iterations (lam={lam:.3e})")
    u = V @ (c / (w + lam))
    return _certify(A, b, u, lam, r2, iters)


def _certify(A, b, u, lam, r2, iters) -> QcqpSolution:
    stat = float(np.linalg.norm(A @ u + lam * u - b))
    slack = abs(lam * (float(np.vdot(u, u).real) - r2))
    return QcqpSolution(u, float(lam), stat, slack, iters)


# --- problem constructors ----------------------------------------------------

def update_y(coeffs: MseCoefficients) -> np.ndarray:
    """Optimal auxiliaries ``y_k = a_k / (2 S_k b_k)``."""
    return coeffs.a / (2.0 * coeffs.S * coeffs.b)


def transformed_terms(coeffs: MseCoefficients, y: np.ndarray) -> np.ndarray:
    """Per-task FP surrogate ``-(y a / S - y**2 b)``."""
    return -(y * coeffs.a / coeffs.S - y ** 2 * coeffs.b)


def ratio_terms(coeffs: MseCoefficients) -> np.ndarray:
    """Per-task ratio ``-a**2 / (4 S**2 b)`` that the surrogate bounds from above."""
    return -coeffs.a ** 2 / (4.0 * coeffs.S ** 2 * coeffs.b)


def build_device_qcqp(scn: Scenario, m: int, U: np.ndarray, F: np.ndarray,
                      y: np.ndarray, selected: np.ndarray,
                      h: np.ndarray | None = None) -> QcqpProblem:
    """Quadratic in ``u_m`` with every other variable fixed."""
    k = scn.task_of(m)
    sl = scn.task_slice(k)
    i = m - sl.start
    if h is None:
        h = effective_channels(scn.H, np.where(selected[:, None], U, 0.0), F)
    G = scn.H[m].conj().T @ F.T          # column l: H_m^H f_l
    y2 = y ** 2
    A = (G * y2) @ G.conj().T
    sel_k = selected[sl]
    q = np.where(sel_k, scn.Q[sl], 0.0)
    rho_i = scn.rho[k][i]
    S = q.sum()
    lin = y[k] * float(rho_i @ q) / S * G[:, k]
    others = sel_k.copy()
    others[i] = False
    # sum over j != i of rho_ij f_l^H H_j u_j, for every receiver l
    cross = h[:, sl][:, others] @ rho_i[others]
    b = lin - G @ (y2 * cross)
    return QcqpProblem(A, b, scn.P0 / 2.0)


def build_ps_quadratic(scn: Scenario, k: int, U: np.ndarray, y: np.ndarray,
                       selected: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Quadratic in the (unnormalized) receive vector of task ``k``."""
    US = np.where(selected[:, None], U, 0.0)
    HU = np.einsum("mrt,mt->rm", scn.H, US)     # N_R x M
    A = np.zeros((scn.N_R, scn.N_R), dtype=complex)
    for l in range(scn.K):
        V = HU[:, scn.task_slice(l)]
        A += V @ scn.rho[l] @ V.conj().T
    A = y[k] ** 2 * (A + scn.sigma2 / 2.0 * np.eye(scn.N_R))
    sl = scn.task_slice(k)
    q = np.where(selected[sl], scn.Q[sl], 0.0)
    b = y[k] / q.sum() * (HU[:, sl] @ (scn.rho[k] @ q))
    return A, b


def solve_receive(A: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray] | None:
    """Unit receive vector along ``A^-1 b``; ``None`` when ``b`` vanishes.

    Returns ``(f_unit, f_raw)``.
    """
    if not np.any(b):
        return None
    A = 0.5 * (A + A.conj().T)
    n = A.shape[0]
    ridge = 1e-15 * max(float(np.trace(A).real) / n, 1e-300)
    raw = np.linalg.solve(A + ridge * np.eye(n), b)
    norm = np.linalg.norm(raw)
    if not np.isfinite(norm) or norm == 0:
        return None
    return raw / norm, raw


# --- alternating optimization ------------------------------------------------

def principal_receive(scn: Scenario, k: int, selected: np.ndarray) -> np.ndarray:
    """Dominant eigenvector of the summed channel Gram matrix of task ``k``."""
    sl = scn.task_slice(k)
    Hs = scn.H[sl][selected[sl]]
    if Hs.shape[0] == 0:
        Hs = scn.H[sl]
    R = np.einsum("mrt,mst->rs", Hs, Hs.conj())
    _, V = np.linalg.eigh(R)
    f = V[:, -1]
    # fix the arbitrary phase so results do not depend on LAPACK conventions
    j = int(np.argmax(np.abs(f)))
    return f * (abs(f[j]) / f[j])


def initial_state(scn: Scenario, selected: np.ndarray | None = None,
                  rng: np.random.Generator | None = None) -> BeamformingState:
    """Matched-filter start: principal combiners, full-power aligned devices."""
    if selected is None:
        selected = scn.all_selected()
    selected = np.asarray(selected, dtype=bool)
    if any(not selected[scn.task_slice(k)].any() for k in range(scn.K)):
        raise ValueError("every task needs at least one selected device")
    F = np.stack([principal_receive(scn, k, selected) for k in range(scn.K)])
    U = np.zeros((scn.M, scn.N_T), dtype=complex)
    amp = math.sqrt(scn.P0 / 2.0)
    for m in np.flatnonzero(selected):
        d = scn.H[m].conj().T @ F[scn.task_of(m)]
        n = np.linalg.norm(d)
        if n == 0:
            rng = rng or np.random.default_rng(0)
            d = rng.standard_normal(scn.N_T) + 1j * rng.standard_normal(scn.N_T)
            n = np.linalg.norm(d)
        U[m] = amp * d / n
    coeffs = mse_coefficients(scn, effective_channels(scn.H, U, F), selected)
    y = update_y(coeffs)
    d = d_values(scn, coeffs)
    return BeamformingState(U, F, y, selected.copy(), [float(d.sum())],
                            history=[(d, float(transformed_terms(coeffs, y).sum()))])


def _surrogate(scn, h, selected, y) -> float:
    return float(transformed_terms(mse_coefficients(scn, h, selected), y).sum())


def ao_optimize(scn: Scenario, init: BeamformingState | None = None,
                I_max: int = 50, rel_tol: float = 1e-6,
                refresh_y_per_device: bool = False, audit: bool = False) -> BeamformingState:
    """Alternate device, receiver and auxiliary updates until the objective settles.

    Stops after ``I_max`` sweeps or once a sweep lowers the objective by less
    than ``rel_tol`` relative to its previous value. With ``audit`` the
    surrogate value before and after every block update is recorded in
    ``state.audit`` as ``(sweep, kind, index, before, after)``.
    """
    st = (init or initial_state(scn)).copy()
    sel = st.selected
    if any(not sel[scn.task_slice(k)].any() for k in range(scn.K)):
        raise ValueError("every task needs at least one selected device")
    st.U[~sel] = 0.0
    h = effective_channels(scn.H, st.U, st.F)
    coeffs = mse_coefficients(scn, h, sel)
    st.y = update_y(coeffs)
    if not st.trace:
        d = d_values(scn, coeffs)
        st.trace.append(float(d.sum()))
        st.history.append((d, float(transformed_terms(coeffs, st.y).sum())))
    for sweep in range(1, I_max + 1):
        for k in range(scn.K):
            sl = scn.task_slice(k)
            for m in np.flatnonzero(sel[sl]) + sl.start:
                p = build_device_qcqp(scn, m, st.U, st.F, st.y, sel, h)
                before = _surrogate(scn, h, sel, st.y) if audit else 0.0
                sol = solve_ball_qcqp(p)
                bn = float(np.linalg.norm(p.b))
                st.kkt_worst = max(st.kkt_worst, sol.stationarity / (bn + 1.0))
                st.slack_worst = max(st.slack_worst, sol.slackness)
                if not sol.certified(bn):
                    raise ArithmeticError(
                        f"QCQP for device {m} lacks a KKT certificate "
                        f"(stationarity {sol.stationarity:.2e}, slackness {sol.slackness:.2e})")
                st.U[m] = sol.u
                h[:, m] = st.F.conj() @ (scn.H[m] @ sol.u)
                if audit:
                    st.audit.append((sweep, "u", int(m), before, _surrogate(scn, h, sel, st.y)))
                if refresh_y_per_device:
                    st.y = update_y(mse_coefficients(scn, h, sel))
            A, b = build_ps_quadratic(scn, k, st.U, st.y, sel)
            res = solve_receive(A, b)
            if res is not None:
                f_unit, f_raw = res
                if audit:
                    before = _surrogate(scn, h, sel, st.y)
                    h_raw = h.copy()
                    h_raw[k] = f_raw.conj() @ np.einsum("mrt,mt->rm", scn.H, st.U)
                    fn2 = np.ones(scn.K)
                    fn2[k] = float(np.vdot(f_raw, f_raw).real)
                    after = float(transformed_terms(
                        mse_coefficients(scn, h_raw, sel, fn2), st.y).sum())
                    st.audit.append((sweep, "f", k, before, after))
                st.F[k] = f_unit
                h[k] = f_unit.conj() @ np.einsum("mrt,mt->rm", scn.H, st.U)
            coeffs = mse_coefficients(scn, h, sel)
            if audit:
                before = float(transformed_terms(coeffs, st.y).sum())
            st.y = update_y(coeffs)
            if audit:
                st.audit.append((sweep, "y", k, before,
                                 float(transformed_terms(coeffs, st.y).sum())))
        coeffs = mse_coefficients(scn, h, sel)
        d = d_values(scn, coeffs)
        E = float(d.sum())
        prev = st.trace[-1]
        st.trace.append(E)
        st.history.append((d, float(transformed_terms(coeffs, st.y).sum())))
        st.sweeps = sweep
        if prev - E <= rel_tol * abs(prev):
            break
    return st
