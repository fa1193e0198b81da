"""Numerical checks of the closed forms and solvers against independent oracles.

Every suite returns a list of :class:`Check` records; a suite passes when
all of its checks do.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import optimize, stats

from . import airlink
from .airlink import ReceivePlan, Scenario
from .config import SystemConfig, substream
from .gradstats import GradientBatch, correlated_rows, uniform_correlation
from .instances import geometric_scenario, random_plan, random_scenario
from .objective import (analytic_nmse_db, coefficients_for, comm_mse, d_values)
from .optimizer import ao_optimize, initial_state, principal_receive, ratio_terms, \
    transformed_terms, update_y
from .selection import SelectionScorer, brute_force_selection, gibbs_optimize, \
    gibbs_probabilities


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return f"{tag} {self.name}: measured={self.measured:.3e} tol={self.tolerance:.1e}{extra}"


def all_passed(checks: Sequence[Check]) -> bool:
    return all(c.passed for c in checks)


def small_instance(seed: int, counts: Sequence[int] = (), N_T: int = 2, N_R: int = 4,
                   **kw) -> tuple[Scenario, np.ndarray, np.ndarray, np.ndarray]:
    """Random scenario, feasible plan and per-task variances; ``M_k <= 5`` unless given."""
    rng = np.random.default_rng(seed)
    if not counts:
        counts = tuple(int(c) for c in rng.integers(1, 6, size=2))
    scn = random_scenario(rng, counts, N_T=N_T, N_R=N_R, **kw)
    U, F = random_plan(scn, rng)
    v = rng.uniform(0.1, 3.0, size=scn.K)
    return scn, U, F, v


# --- weighting factor ------------------------------------------------------------

def zeta_check(seed: int, grid_points: int = 1000, rel_tol: float = 1e-6) -> Check:
    """Closed-form zeta against a grid search refined by golden section."""
    scn, U, F, v = small_instance(seed)
    co = coefficients_for(scn, U, F, scn.all_selected())
    C = 64
    worst_rel = 0.0
    grid_ok = True
    for k in range(scn.K):
        a, b, c0, S = co.task(k)
        z_star = airlink.optimal_zeta(a, b, v[k])
        f = lambda z: comm_mse(z, a, b, c0, v[k], S, C)
        grid = np.linspace(0.0, 4 * z_star + 1, grid_points)
        vals = np.array([f(z) for z in grid])
        fstar = f(z_star)
        grid_ok &= bool(fstar <= vals.min() + 1e-12 * abs(vals.min()))
        i = int(np.argmin(vals))
        lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid_points - 1)]
        # Golden section sees only function values, so near the minimum it
        # resolves zeta to ~sqrt(eps * f / curvature). Dropping the constant
        # 2 v c0 term keeps the minimizer and removes the cancellation.
        shifted = lambda z: comm_mse(z, a, b, 0.0, v[k], S, C)
        res = optimize.minimize_scalar(shifted, bracket=(lo, grid[i], hi) if 0 < i < grid_points - 1
                                       else None, bounds=None, method="golden",
                                       options={"xtol": 1e-12})
        z_ref = float(res.x)
        worst_rel = max(worst_rel, abs(z_ref - z_star) / max(abs(z_star), 1e-300))
    return Check(f"zeta[{seed}]", grid_ok and worst_rel <= rel_tol, worst_rel, rel_tol,
                 "" if grid_ok else "grid point beats closed form")


def validate_zeta(n: int = 100, seed0: int = 0) -> list[Check]:
    return [zeta_check(seed0 + s) for s in range(n)]


# --- closed-form MSE vs Monte Carlo ------------------------------------------------

def mse_check(seed: int, trials: int = 100_000, sigmas: float = 3.0) -> list[Check]:
    """Mean squared aggregation error of the full pipeline vs the closed form.

    Each channel use is one trial: its (real, imaginary) entry pair has
    independent correlated gradient draws and noise, so the ``C`` symbol
    errors are i.i.d. and their mean has a computable standard error.
    """
    scn, U, F, v = small_instance(seed)
    sel = scn.all_selected()
    co = coefficients_for(scn, U, F, sel)
    zeta = np.array([airlink.optimal_zeta(co.a[k], co.b[k], v[k]) for k in range(scn.K)])
    rng = substream(seed, "validate-mse")
    D = 2 * trials
    batches = []
    for k in range(scn.K):
        Z = correlated_rows(scn.rho[k], D, rng)
        M_k = Z.shape[1]
        batches.append(GradientBatch(k, math.sqrt(v[k]) * Z, Z, np.zeros(M_k), np.full(M_k, v[k])))
    g_hat = airlink.aggregate_over_air(scn, U, ReceivePlan(F, zeta),
                                       [b.normalized for b in batches],
                                       [b.means for b in batches], sel, rng)
    out = []
    for k in range(scn.K):
        a, b, c0, S = co.task(k)
        g = batches[k].G @ scn.Q[scn.task_slice(k)] / S
        e = g_hat[k] - g
        per_use = e[:trials] ** 2 + e[trials:] ** 2
        mc = float(per_use.sum())
        se = float(per_use.std(ddof=1) * math.sqrt(trials))
        closed = comm_mse(zeta[k], a, b, c0, v[k], S, trials)
        z = abs(mc - closed) / se
        out.append(Check(f"mse[{seed}/task{k}]", z <= sigmas, z, sigmas,
                         f"closed={closed:.6e} mc={mc:.6e} se={se:.2e}"))
    return out


def validate_mse(n: int = 20, trials: int = 100_000, seed0: int = 0) -> list[Check]:
    return [c for s in range(n) for c in mse_check(seed0 + s, trials)]


# --- FP identity ----------------------------------------------------------------

def fp_identity_check(seed: int, tol: float = 1e-10) -> Check:
    scn, U, F, _ = small_instance(seed)
    co = coefficients_for(scn, U, F, scn.all_selected())
    diff = np.abs(transformed_terms(co, update_y(co)) - ratio_terms(co))
    return Check(f"fp[{seed}]", bool(diff.max() <= tol), float(diff.max()), tol)


# --- QCQP certificates and monotone AO --------------------------------------------------

def qcqp_check(seed: int, slack: float = 1e-9, kkt_tol: float = 1e-8, I_max: int = 50) -> Check:
    rng = np.random.default_rng(seed)
    counts = tuple(int(c) for c in rng.integers(1, 6, size=2))
    scn = random_scenario(rng, counts, N_T=2, N_R=4)
    st = ao_optimize(scn, initial_state(scn), I_max=I_max, rel_tol=0.0, audit=True)
    tr = np.array(st.trace)
    rises = np.diff(tr) / np.maximum(np.abs(tr[:-1]), 1.0)
    worst_rise = float(max(rises.max(initial=0.0), 0.0))
    worst_block = max((after - before) / max(abs(before), 1.0)
                      for _, _, _, before, after in st.audit)
    kkt = max(st.kkt_worst, st.slack_worst)
    ok = worst_rise <= slack and worst_block <= slack and kkt < kkt_tol
    return Check(f"qcqp[{seed}]", ok, kkt, kkt_tol,
                 f"sweeps={st.sweeps} max_rise={worst_rise:.1e} max_block_rise={worst_block:.1e}")


def validate_qcqp(n: int = 100, seed0: int = 0) -> list[Check]:
    return [qcqp_check(seed0 + s) for s in range(n)]


# --- scale invariance ---------------------------------------------------------------

def scale_check(seed: int, n_scales: int = 50, tol: float = 1e-10,
                complex_scale: bool = True) -> Check:
    """``d_k`` at ``c f_k`` versus ``f_k`` for random nonzero ``c``."""
    scn, U, F, _ = small_instance(seed)
    rng = substream(seed, "scale")
    sel = scn.all_selected()
    base = d_values(scn, coefficients_for(scn, U, F, sel))
    worst = 0.0
    for _ in range(n_scales):
        c = rng.uniform(0.1, 10) * (np.exp(1j * rng.uniform(0, 2 * np.pi)) if complex_scale
                                    else rng.choice([-1.0, 1.0]))
        k = int(rng.integers(scn.K))
        F2 = F.copy()
        F2[k] = c * F[k]
        # the noise term of b must see the rescaled combiner
        co = coefficients_for(scn, U, F2, sel)
        dk = d_values(scn, co)[k]
        worst = max(worst, abs(dk - base[k]) / abs(base[k]))
    return Check(f"scale[{seed}]", worst < tol, worst, tol)


# --- straggler comparison ------------------------------------------------------------

@dataclass(frozen=True)
class StragglerDraw:
    E_ao: float
    E_zf: float
    nmse_ao: float    # mean over tasks, dB
    nmse_zf: float
    full_power_ao: float   # fraction of devices at >= 99% power
    full_power_zf: float


def straggler_draw(config: SystemConfig, seed: int, epsilon: float = 1.0,
                   I_max: int = 50) -> StragglerDraw:
    rho = [uniform_correlation(epsilon, m, k).rho for k, m in enumerate(config.M)]
    scn = geometric_scenario(config, seed, rho)
    sel = scn.all_selected()
    v = np.ones(scn.K)
    st = ao_optimize(scn, initial_state(scn, sel), I_max=I_max)
    F_zf = np.stack([principal_receive(scn, k, sel) for k in range(scn.K)])
    U_zf, z_zf = airlink.zero_forcing(scn, F_zf, v, sel)
    res = {}
    for name, U, F, zeta in (("ao", st.U, st.F, None), ("zf", U_zf, F_zf, z_zf)):
        co = coefficients_for(scn, U, F, sel)
        if zeta is None:
            zeta = [airlink.optimal_zeta(co.a[k], co.b[k], v[k]) for k in range(scn.K)]
        nm = np.mean([analytic_nmse_db(zeta[k], co.a[k], co.b[k], co.c0[k], v[k])
                      for k in range(scn.K)])
        pf = airlink.TransmitPlan(U).power_fraction(scn.P0)
        res[name] = (float(d_values(scn, co).sum()), float(nm), float(np.mean(pf >= 0.99)))
    return StragglerDraw(res["ao"][0], res["zf"][0], res["ao"][1], res["zf"][1],
                         res["ao"][2], res["zf"][2])


def straggler_checks(draws: Sequence[StragglerDraw], win_rate: float = 0.95,
                     nmse_gain_db: float = 0.5) -> list[Check]:
    wins = np.mean([d.E_ao <= d.E_zf for d in draws])
    gain = np.mean([d.nmse_zf for d in draws]) - np.mean([d.nmse_ao for d in draws])
    fp_ao = np.mean([d.full_power_ao for d in draws])
    fp_zf = np.mean([d.full_power_zf for d in draws])
    return [
        Check("straggler/E_win_rate", bool(wins >= win_rate), float(wins), win_rate),
        Check("straggler/nmse_gain_db", bool(gain >= nmse_gain_db), float(gain), nmse_gain_db),
        Check("straggler/full_power", bool(fp_ao > fp_zf), float(fp_ao - fp_zf), 0.0,
              f"ao={fp_ao:.3f} zf={fp_zf:.3f}"),
    ]


# --- Gibbs sampling ----------------------------------------------------------------

def gibbs_instance_check(seed: int, J_max: int = 30, rel_gap: float = 0.05,
                         counts: Sequence[int] = (3, 3)) -> tuple[Check, float]:
    rng = np.random.default_rng(seed)
    scn = random_scenario(rng, counts)
    scorer = SelectionScorer(scn)
    res = gibbs_optimize(scn, J_max=J_max, rng=substream(seed, "gibbs"), scorer=scorer)
    _, best = brute_force_selection(scn, scorer=scorer)
    gap = res.best_trace[-1] / best.objective - 1.0
    return Check(f"gibbs[{seed}]", gap <= rel_gap, gap, rel_gap), gap


def sampler_chi2(phi: Sequence[float] = (0.0, 0.4, 1.1), beta: float = 0.5,
                 draws: int = 10_000, seed: int = 0, alpha: float = 0.01) -> Check:
    """Goodness of fit of the Boltzmann sampler on a fixed candidate set."""
    from .selection import gibbs_step

    rng = substream(seed, "chi2")
    phi = np.asarray(phi, dtype=float)
    counts = np.bincount([gibbs_step(phi, beta, rng) for _ in range(draws)], minlength=phi.size)
    expected = draws * gibbs_probabilities(phi, beta)
    p = float(stats.chisquare(counts, expected).pvalue)
    return Check("gibbs/chi2", p >= alpha, p, alpha, f"counts={counts.tolist()}")
