"""Device selection: annealed Gibbs sampling over single-flip neighborhoods."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .airlink import Scenario
from .optimizer import BeamformingState, ao_optimize, initial_state

MAX_BRUTE_FORCE = 12


@dataclass
class GibbsRecord:
    round: int
    candidate: str
    phi: float
    sampled: bool


@dataclass
class GibbsResult:
    selection: np.ndarray
    state: BeamformingState
    best_trace: list[float]
    betas: list[float]
    log: list[GibbsRecord] = field(default_factory=list)
    evaluations: int = 0


def bits(s: np.ndarray) -> str:
    return "".join("1" if x else "0" for x in s)


def neighborhood(s: np.ndarray) -> list[np.ndarray]:
    """``s`` itself followed by its ``M`` single-bit flips."""
    s = np.asarray(s, dtype=bool)
    out = [s.copy()]
    for m in range(s.size):
        t = s.copy()
        t[m] = ~t[m]
        out.append(t)
    return out


def feasible(scn: Scenario, s: np.ndarray) -> bool:
    return all(s[scn.task_slice(k)].any() for k in range(scn.K))


def gibbs_probabilities(phi: np.ndarray, beta: float) -> np.ndarray:
    """Boltzmann weights ``exp(-phi / beta)`` normalized over the candidates."""
    if beta <= 0:
        raise ValueError("temperature must be positive")
    phi = np.asarray(phi, dtype=float)
    finite = np.isfinite(phi)
    if not finite.any():
        raise ValueError("no candidate has a finite objective")
    logits = np.where(finite, -phi / beta, -np.inf)
    logits -= logits[finite].max()
    w = np.exp(logits)
    return w / w.sum()


def gibbs_step(phi: np.ndarray, beta: float, rng: np.random.Generator) -> int:
    """Index of the sampled candidate."""
    p = gibbs_probabilities(phi, beta)
    return int(rng.choice(p.size, p=p))


class SelectionScorer:
    """Memoized objective of a selection after AO from a fixed start.

    The start for every candidate is the matched-filter initialization for
    that candidate's selection, so the score is a pure function of ``s``.
    """

    def __init__(self, scn: Scenario, I_max: int = 50, rel_tol: float = 1e-6,
                 refresh_y_per_device: bool = False,
                 init: Callable[[Scenario, np.ndarray], BeamformingState] = initial_state):
        self.scn = scn
        self.kw = dict(I_max=I_max, rel_tol=rel_tol, refresh_y_per_device=refresh_y_per_device)
        self.init = init
        self.cache: dict[str, tuple[float, BeamformingState | None]] = {}

    def __call__(self, s: np.ndarray) -> tuple[float, BeamformingState | None]:
        key = bits(s)
        if key not in self.cache:
            if not feasible(self.scn, s):
                self.cache[key] = (np.inf, None)
            else:
                st = ao_optimize(self.scn, self.init(self.scn, s), **self.kw)
                self.cache[key] = (st.objective, st)
        return self.cache[key]


def gibbs_optimize(scn: Scenario, J_max: int = 50, beta0: float = 1.0, gamma: float = 0.9,
                   rng: np.random.Generator | None = None, scorer: SelectionScorer | None = None,
                   **ao_kw) -> GibbsResult:
    """Annealed Gibbs search starting from all devices selected.

    Each round scores the current selection and its single-flip neighbors,
    samples the next selection from their Boltzmann distribution and cools
    the temperature geometrically. The best selection visited is returned.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    scorer = scorer or SelectionScorer(scn, **ao_kw)
    s = scn.all_selected()
    best_phi, best_state = scorer(s)
    best_s = s.copy()
    beta = float(beta0)
    betas = [beta]
    trace = [best_phi]
    log: list[GibbsRecord] = []
    for j in range(1, J_max + 1):
        cands = neighborhood(s)
        phis = np.array([scorer(c)[0] for c in cands])
        pick = gibbs_step(phis, beta, rng)
        for n, (c, p) in enumerate(zip(cands, phis)):
            log.append(GibbsRecord(j, bits(c), float(p), n == pick))
            if p < best_phi:
                best_phi, best_state, best_s = p, scorer(c)[1], c.copy()
        s = cands[pick]
        beta *= gamma
        betas.append(beta)
        trace.append(best_phi)
    return GibbsResult(best_s, best_state, trace, betas, log, len(scorer.cache))


def brute_force_selection(scn: Scenario, scorer: SelectionScorer | None = None,
                          **ao_kw) -> tuple[np.ndarray, BeamformingState]:
    """Exhaustive minimizer of the objective over all feasible selections."""
    if scn.M > MAX_BRUTE_FORCE:
        raise ValueError(f"exhaustive search limited to {MAX_BRUTE_FORCE} devices, got {scn.M}")
    scorer = scorer or SelectionScorer(scn, **ao_kw)
    best = (np.inf, None, None)
    for combo in itertools.product([True, False], repeat=scn.M):
        s = np.array(combo)
        phi, st = scorer(s)
        if phi < best[0]:
            best = (phi, s, st)
    return best[1], best[2]
