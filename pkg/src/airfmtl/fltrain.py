"""Multi-task federated training over the simulated uplink.

Each task is L2-regularized multinomial logistic regression on a synthetic
Gaussian-mixture data set, so every task loss is smooth and strongly convex.
One round: design the transceivers, compute local gradients, aggregate them
over the air (or exactly, for the error-free reference) and take a gradient
step at the server.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import airlink
from .airlink import ReceivePlan, Scenario
from .channel import DevicePlacement, draw_channels, path_gain, place_devices
from .config import SystemConfig, substream
from .gradstats import estimate_correlation, normalize, uniform_correlation
from .objective import NMSE_FLOOR_DB, coefficients_for, d_values, nmse_db
from .optimizer import ao_optimize, initial_state, principal_receive
from .selection import SelectionScorer, gibbs_optimize

STRATEGIES = ("ao", "ao_gibbs", "zero_forcing", "error_free")

METRIC_COLUMNS = ("round", "task", "strategy", "loss", "accuracy", "nmse_db",
                  "d_k", "E", "zeta", "power_fraction_mean")


@dataclass(frozen=True)
class LocalDataset:
    task: int
    device: int
    X: np.ndarray
    labels: np.ndarray

    @property
    def Q(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True)
class TaskData:
    task: int
    devices: tuple[LocalDataset, ...]
    X_test: np.ndarray
    y_test: np.ndarray

    @property
    def X(self) -> np.ndarray:
        return np.concatenate([d.X for d in self.devices])

    @property
    def labels(self) -> np.ndarray:
        return np.concatenate([d.labels for d in self.devices])

    @property
    def Q(self) -> np.ndarray:
        return np.array([d.Q for d in self.devices], dtype=float)


@dataclass
class TaskState:
    task: int
    w: np.ndarray
    eta: float
    loss: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)
    nmse_db: list[float] = field(default_factory=list)
    d_k: list[float] = field(default_factory=list)


# --- data ---------------------------------------------------------------------

def _draw_class(means: np.ndarray, c: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return means[c] + rng.standard_normal((c.size, means.shape[1]))


def synth_tasks(config: SystemConfig, rng: np.random.Generator) -> list[TaskData]:
    """One Gaussian-mixture classification problem per task, split over its devices.

    ``iid`` shuffles a class-balanced pool and deals it out evenly;
    ``noniid`` lets each device pick ``classes_per_device`` classes and draw
    an equal share of its samples from each.
    """
    L = config.learning
    n = L.samples_per_device
    tasks = []
    for k, Mk in enumerate(config.M):
        means = L.class_sep * rng.standard_normal((L.classes, L.features))
        devices = []
        if L.partition == "iid":
            labels = np.arange(Mk * n) % L.classes
            rng.shuffle(labels)
            X = _draw_class(means, labels, rng)
            for i in range(Mk):
                sl = slice(i * n, (i + 1) * n)
                devices.append(LocalDataset(k, i, X[sl], labels[sl]))
        else:
            for i in range(Mk):
                chosen = rng.choice(L.classes, size=L.classes_per_device, replace=False)
                labels = chosen[np.arange(n) % L.classes_per_device]
                rng.shuffle(labels)
                devices.append(LocalDataset(k, i, _draw_class(means, labels, rng), labels))
        y_test = np.arange(L.test_samples) % L.classes
        X_test = _draw_class(means, y_test, rng)
        tasks.append(TaskData(k, tuple(devices), X_test, y_test))
    return tasks


# --- model ----------------------------------------------------------------------

def _unpack(w: np.ndarray, config: SystemConfig) -> np.ndarray:
    L = config.learning
    return w[: config.model_dim].reshape(L.classes, L.features + 1)


def _design(X: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.ones((X.shape[0], 1))])


def _softmax(Z: np.ndarray) -> np.ndarray:
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def loss(w: np.ndarray, X: np.ndarray, labels: np.ndarray, lam: float,
         config: SystemConfig) -> float:
    W = _unpack(w, config)
    Z = _design(X) @ W.T
    Z = Z - Z.max(axis=1, keepdims=True)
    logp = Z - np.log(np.exp(Z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(labels)), labels].mean() + 0.5 * lam * w @ w)


def local_gradient(w: np.ndarray, X: np.ndarray, labels: np.ndarray, lam: float,
                   config: SystemConfig) -> np.ndarray:
    """Gradient of the mean cross-entropy plus ``lam/2 ||w||^2``."""
    W = _unpack(w, config)
    Xd = _design(X)
    P = _softmax(Xd @ W.T)
    P[np.arange(len(labels)), labels] -= 1.0
    g = np.zeros_like(w)
    g[: config.model_dim] = (P.T @ Xd / len(labels)).ravel()
    return g + lam * w


def accuracy(w: np.ndarray, X: np.ndarray, labels: np.ndarray, config: SystemConfig) -> float:
    W = _unpack(w, config)
    return float(np.mean(np.argmax(_design(X) @ W.T, axis=1) == labels))


# automatic step sizes sit strictly below 1 / smoothness
ETA_SAFETY = 0.95


def smoothness(X: np.ndarray, lam: float) -> float:
    """Upper bound on the gradient Lipschitz constant of the task loss.

    The softmax cross-entropy Hessian is dominated by half the feature
    second-moment matrix (Bohning's bound), plus the ridge.
    """
    Xd = _design(X)
    return 0.5 * float(np.linalg.eigvalsh(Xd.T @ Xd / Xd.shape[0])[-1]) + lam


def ideal_aggregate(grads: np.ndarray, Q: np.ndarray, selected: np.ndarray | None = None) -> np.ndarray:
    """Sample-weighted mean of the selected columns of ``grads`` (``D x M_k``)."""
    Q = np.asarray(Q, dtype=float)
    if selected is not None:
        Q = np.where(selected, Q, 0.0)
    if Q.sum() <= 0:
        raise ValueError("empty selection")
    return grads @ Q / Q.sum()


def _device_updates(w: np.ndarray, data: TaskData, config: SystemConfig,
                    eta: float, rng: np.random.Generator) -> np.ndarray:
    """``D x M_k`` uploads: the local gradient, or the local SGD displacement / eta."""
    L = config.learning
    cols = []
    for dev in data.devices:
        if L.local_steps == 1 and L.batch_fraction >= 1.0:
            cols.append(local_gradient(w, dev.X, dev.labels, L.lam, config))
            continue
        wl = w.copy()
        bs = max(1, int(round(L.batch_fraction * dev.Q)))
        for _ in range(L.local_steps):
            idx = rng.choice(dev.Q, size=bs, replace=False)
            wl -= eta * local_gradient(wl, dev.X[idx], dev.labels[idx], L.lam, config)
        cols.append((w - wl) / eta)
    return np.stack(cols, axis=1)


# --- rounds -----------------------------------------------------------------------

@dataclass
class Recorder:
    """Optional per-round diagnostics collected for the dump files."""

    rho: list[tuple] = field(default_factory=list)     # round, strategy, k, i, j, value, mode
    trace: list[tuple] = field(default_factory=list)   # round, strategy, sweep, task, E, d_k, surrogate
    gibbs: list[tuple] = field(default_factory=list)   # round, j, bits, phi, sampled

    def add_state(self, t: int, strategy: str, st) -> None:
        for sweep, (d, sur) in enumerate(st.history):
            for k, dk in enumerate(d):
                self.trace.append((t, strategy, sweep, k, float(d.sum()), float(dk), sur))


@dataclass
class Experiment:
    config: SystemConfig
    tasks: list[TaskData]
    placements: list[DevicePlacement]
    gains: np.ndarray
    etas: np.ndarray
    oracle_rho: bool = False
    recorder: Recorder | None = None

    @classmethod
    def build(cls, config: SystemConfig) -> "Experiment":
        tasks = synth_tasks(config, substream(config, "data"))
        placements = place_devices(config, substream(config, "placement"))
        gains = np.array([path_gain(p, config) for p in placements])
        if isinstance(config.learning.eta, str):
            etas = np.array([ETA_SAFETY / smoothness(t.X, config.learning.lam) for t in tasks])
        else:
            etas = np.array(config.learning.eta, dtype=float)
        return cls(config, tasks, placements, gains, etas,
                   config.correlation.mode == "empirical")

    @property
    def Q(self) -> np.ndarray:
        return np.concatenate([t.Q for t in self.tasks])

    def initial_states(self) -> list[TaskState]:
        states = []
        for k, t in enumerate(self.tasks):
            st = TaskState(k, np.zeros(self.config.D), float(self.etas[k]))
            states.append(st)
        return states

    def evaluate(self, st: TaskState) -> tuple[float, float]:
        t = self.tasks[st.task]
        return (loss(st.w, t.X, t.labels, self.config.learning.lam, self.config),
                accuracy(st.w, t.X_test, t.y_test, self.config))


def _correlations(exp: Experiment, batches) -> tuple[np.ndarray, ...]:
    cfg = exp.config
    if exp.oracle_rho:
        return tuple(estimate_correlation(b).rho for b in batches)
    return tuple(uniform_correlation(cfg.correlation.epsilon, m, k).rho
                 for k, m in enumerate(cfg.M))


def run_round(exp: Experiment, states: list[TaskState], t: int, strategy: str) -> list[dict]:
    """Advance every task by one round under ``strategy``; returns metric rows."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    cfg = exp.config
    grads = [_device_updates(st.w, exp.tasks[k], cfg, st.eta,
                             substream(cfg, f"minibatch/{k}/{t}"))
             for k, st in enumerate(states)]
    Qk = [exp.tasks[k].Q for k in range(cfg.K)]
    rows = []
    if strategy == "error_free":
        for k, st in enumerate(states):
            st.w = st.w - st.eta * ideal_aggregate(grads[k], Qk[k])
            rows.append(_row(exp, st, t, strategy, NMSE_FLOOR_DB, 0.0, 0.0, math.nan, math.nan))
        return rows

    batches = [normalize(G, k) for k, G in enumerate(grads)]
    ch = draw_channels(exp.placements, t, cfg, substream(cfg, f"channel/{t}"), exp.gains)
    scn = Scenario(ch.H, _correlations(exp, batches), exp.Q, tuple(cfg.M), cfg.sigma2, cfg.P0)
    rec = exp.recorder
    if rec is not None:
        mode = "empirical-oracle" if exp.oracle_rho else "uniform"
        for k, rho in enumerate(scn.rho):
            for (i, j), val in np.ndenumerate(rho):
                rec.rho.append((t, strategy, k, i, j, float(val), mode))
    opt = cfg.optimizer
    ao_kw = dict(I_max=opt.I_max, rel_tol=opt.rel_tol,
                 refresh_y_per_device=opt.refresh_y_per_device)
    sel = scn.all_selected()
    if strategy == "ao":
        st_bf = ao_optimize(scn, initial_state(scn, sel), **ao_kw)
        U, F = st_bf.U, st_bf.F
        if rec is not None:
            rec.add_state(t, strategy, st_bf)
    elif strategy == "ao_gibbs":
        g = cfg.gibbs
        score_kw = dict(ao_kw, I_max=g.score_I_max or opt.I_max)
        res = gibbs_optimize(scn, g.J_max, g.beta0, g.gamma, substream(cfg, f"gibbs/{t}"),
                             SelectionScorer(scn, **score_kw))
        sel, best = res.selection, res.state
        if score_kw["I_max"] < opt.I_max:
            best = ao_optimize(scn, initial_state(scn, sel), **ao_kw)
        U, F = best.U, best.F
        if rec is not None:
            rec.add_state(t, strategy, best)
            rec.gibbs.extend((t, r.round, r.candidate, r.phi, r.sampled) for r in res.log)
    else:
        F = np.stack([principal_receive(scn, k, sel) for k in range(scn.K)])
    # the gradient variance entering zeta is averaged over the devices that transmit
    v = np.array([float(np.mean(b.variances[sel[scn.task_slice(k)]]))
                  for k, b in enumerate(batches)])
    if strategy == "zero_forcing":
        U, zeta = airlink.zero_forcing(scn, F, v, sel)
    coeffs = coefficients_for(scn, U, F, sel)
    if strategy != "zero_forcing":
        zeta = np.array([airlink.optimal_zeta(coeffs.a[k], coeffs.b[k], v[k])
                         for k in range(scn.K)])
    d = d_values(scn, coeffs)
    E = float(d.sum())
    g_hat = airlink.aggregate_over_air(
        scn, U, ReceivePlan(F, zeta), [b.normalized for b in batches],
        [b.means for b in batches], sel, substream(cfg, f"noise/{t}"))
    pf = airlink.TransmitPlan(np.where(sel[:, None], U, 0.0)).power_fraction(cfg.P0)
    for k, st in enumerate(states):
        sl = scn.task_slice(k)
        ideal = ideal_aggregate(grads[k], Qk[k], sel[sl])
        err = nmse_db(g_hat[k], ideal)
        st.w = st.w - st.eta * g_hat[k]
        rows.append(_row(exp, st, t, strategy, err, float(d[k]), E, float(zeta[k]),
                         float(pf[sl][sel[sl]].mean())))
    return rows


def _row(exp: Experiment, st: TaskState, t: int, strategy: str, err: float, d: float,
         E: float, zeta: float, power: float) -> dict:
    lo, acc = exp.evaluate(st)
    st.loss.append(lo)
    st.accuracy.append(acc)
    st.nmse_db.append(err)
    st.d_k.append(d)
    return dict(round=t, task=st.task, strategy=strategy, loss=lo, accuracy=acc,
                nmse_db=err, d_k=d, E=E, zeta=zeta, power_fraction_mean=power)


@dataclass
class TrainingResult:
    rows: list[dict]
    initial: dict[str, list[tuple[float, float]]]
    states: dict[str, list[TaskState]]
    etas: np.ndarray

    def final(self, strategy: str, column: str) -> np.ndarray:
        return np.array([getattr(st, column)[-1] for st in self.states[strategy]])


def run_training(config: SystemConfig, strategies: Sequence[str] | None = None,
                 exp: Experiment | None = None) -> TrainingResult:
    """Train every task for ``config.rounds`` rounds under each strategy.

    All strategies see the same data, placements, channel and noise draws.
    """
    if strategies is None:
        strategies = ["ao", "zero_forcing", "error_free"]
        if config.gibbs.enabled:
            strategies.insert(1, "ao_gibbs")
    exp = exp or Experiment.build(config)
    rows: list[dict] = []
    initial = {}
    all_states = {}
    for strategy in strategies:
        states = exp.initial_states()
        initial[strategy] = [exp.evaluate(st) for st in states]
        for t in range(1, config.rounds + 1):
            rows.extend(run_round(exp, states, t, strategy))
        all_states[strategy] = states
    rows.sort(key=lambda r: (r["round"], STRATEGIES.index(r["strategy"]), r["task"]))
    return TrainingResult(rows, initial, all_states, exp.etas)
