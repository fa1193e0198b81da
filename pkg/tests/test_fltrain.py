import numpy as np
import pytest

from airfmtl.config import LearningConfig, SystemConfig, substream
from airfmtl.fltrain import (Experiment, accuracy, ideal_aggregate, local_gradient, loss,
                             run_round, run_training, smoothness, synth_tasks)
from airfmtl.gradstats import estimate_correlation, normalize


def small(**kw):
    learning = kw.pop("learning", LearningConfig(features=6, classes=4, samples_per_device=40,
                                                 test_samples=200, classes_per_device=2))
    return SystemConfig(K=2, M=(3, 2), rounds=kw.pop("rounds", 3), learning=learning, **kw)


def test_iid_partition_balanced():
    cfg = SystemConfig(K=1, M=(10,), learning=LearningConfig(samples_per_device=200))
    task = synth_tasks(cfg, substream(0, "data"))[0]
    assert task.Q.sum() == 2000 and np.all(task.Q == 200)
    global_hist = np.bincount(task.labels, minlength=10) / 2000
    for dev in task.devices:
        hist = np.bincount(dev.labels, minlength=10) / dev.Q
        se = np.sqrt(global_hist * (1 - global_hist) / dev.Q)
        assert np.all(np.abs(hist - global_hist) <= 3 * se + 1e-12)


def test_noniid_single_class_devices():
    cfg = SystemConfig(K=1, M=(10,), learning=LearningConfig(partition="noniid", classes_per_device=1))
    for dev in synth_tasks(cfg, substream(0, "data"))[0].devices:
        assert len(np.unique(dev.labels)) == 1


def test_gradient_finite_difference(rng):
    cfg = small()
    X = rng.standard_normal((30, 6))
    y = rng.integers(0, 4, size=30)
    w = np.zeros(cfg.D)
    w[: cfg.model_dim] = 0.3 * rng.standard_normal(cfg.model_dim)
    g = local_gradient(w, X, y, 1e-3, cfg)
    eps = 1e-4
    for _ in range(5):
        d = rng.standard_normal(cfg.D)
        d[cfg.model_dim:] = 0
        fd = (loss(w + eps * d, X, y, 1e-3, cfg) - loss(w - eps * d, X, y, 1e-3, cfg)) / (2 * eps)
        assert g @ d == pytest.approx(fd, abs=1e-5)


def test_gradient_invariant_to_duplicated_samples(rng):
    cfg = small()
    X = rng.standard_normal((10, 6))
    y = rng.integers(0, 4, size=10)
    w = 0.1 * rng.standard_normal(cfg.D)
    np.testing.assert_allclose(local_gradient(w, np.vstack([X, X]), np.concatenate([y, y]), 1e-3, cfg),
                               local_gradient(w, X, y, 1e-3, cfg), atol=1e-14)


def test_zero_model_balanced_labels_gradient():
    cfg = small()
    X = np.zeros((8, 6))
    y = np.arange(8) % 4
    g = local_gradient(np.zeros(cfg.D), X, y, 1e-3, cfg)
    # softmax is uniform and labels balanced, so every entry vanishes
    np.testing.assert_allclose(g, 0, atol=1e-15)


def test_ideal_aggregate_examples(rng):
    g1, g2 = rng.standard_normal(4), rng.standard_normal(4)
    np.testing.assert_allclose(ideal_aggregate(g1[:, None], [5.0]), g1)
    np.testing.assert_allclose(ideal_aggregate(np.stack([g1, -g1], 1), [2.0, 2.0]), 0, atol=1e-15)
    np.testing.assert_allclose(ideal_aggregate(np.stack([g1, g2], 1), [1.0, 3.0]), (g1 + 3 * g2) / 4)
    with pytest.raises(ValueError):
        ideal_aggregate(np.stack([g1, g2], 1), [1.0, 3.0], np.array([False, False]))


def test_smoothness_bounds_hessian(rng):
    cfg = small()
    X = rng.standard_normal((50, 6)) * 2
    y = rng.integers(0, 4, size=50)
    omega = smoothness(X, 1e-3)
    w = 0.5 * rng.standard_normal(cfg.D)
    w[cfg.model_dim:] = 0
    for _ in range(5):
        d = rng.standard_normal(cfg.D)
        d[cfg.model_dim:] = 0
        d /= np.linalg.norm(d)
        eps = 1e-5
        curv = (local_gradient(w + eps * d, X, y, 1e-3, cfg)
                - local_gradient(w - eps * d, X, y, 1e-3, cfg)) @ d / (2 * eps)
        assert curv <= omega


def test_error_free_is_plain_gradient_descent():
    cfg = small()
    exp = Experiment.build(cfg)
    states = exp.initial_states()
    task = exp.tasks[0]
    w = states[0].w.copy()
    expect = w - states[0].eta * local_gradient(w, task.X, task.labels, cfg.learning.lam, cfg)
    rows = run_round(exp, states, 1, "error_free")
    np.testing.assert_allclose(states[0].w, expect, atol=1e-14)
    assert all(r["nmse_db"] == -300.0 for r in rows)


def test_single_user_noiseless_ao_aligns():
    cfg = SystemConfig(K=1, M=(1,), sigma2=0.0, rounds=3,
                       learning=LearningConfig(features=6, classes=4, samples_per_device=40,
                                               test_samples=100, classes_per_device=2))
    res = run_training(cfg, ["ao"])
    assert all(r["nmse_db"] < -60 for r in res.rows)


def test_runs_are_bit_identical():
    a = run_training(small()).rows
    b = run_training(small()).rows
    assert repr(a) == repr(b)


def test_zero_rounds_records_initial_loss():
    res = run_training(small(rounds=0))
    assert res.rows == []
    for strategy, init in res.initial.items():
        assert len(init) == 2 and init[0][0] == pytest.approx(np.log(4) )


def test_error_free_loss_strictly_decreases():
    res = run_training(small(rounds=15), ["error_free"])
    for k, st in enumerate(res.states["error_free"]):
        curve = [res.initial["error_free"][k][0], *st.loss]
        assert np.all(np.diff(curve) < 0)


def test_metrics_schema_and_strategy_pairing():
    res = run_training(small(rounds=2))
    assert {r["strategy"] for r in res.rows} == {"ao", "zero_forcing", "error_free"}
    assert len(res.rows) == 2 * 3 * 2
    for r in res.rows:
        assert set(r) == {"round", "task", "strategy", "loss", "accuracy", "nmse_db", "d_k", "E",
                          "zeta", "power_fraction_mean"}
        if r["strategy"] != "error_free":
            assert 0 < r["power_fraction_mean"] <= 1 + 1e-9


def test_gibbs_strategy_runs():
    cfg = small(rounds=1)
    cfg = cfg.replace(gibbs=cfg.gibbs.__class__(enabled=True, J_max=2, score_I_max=3))
    res = run_training(cfg)
    assert "ao_gibbs" in res.states


def test_zero_forcing_rows_report_power_limited_straggler():
    res = run_training(small(rounds=2), ["zero_forcing"])
    for r in res.rows:
        assert r["power_fraction_mean"] < 1.0


def test_empirical_mode_and_local_sgd():
    cfg = small(rounds=2, correlation=SystemConfig().correlation.__class__(mode="empirical"))
    run_training(cfg, ["ao"])
    learning = LearningConfig(features=6, classes=4, samples_per_device=40, test_samples=100,
                              classes_per_device=2, local_steps=3, batch_fraction=0.5)
    res = run_training(small(rounds=2, learning=learning), ["error_free"])
    assert np.isfinite(res.final("error_free", "loss")).all()


def test_early_iid_gradients_are_strongly_correlated():
    cfg = SystemConfig(K=1, M=(10,))
    exp = Experiment.build(cfg)
    task = exp.tasks[0]
    w = np.zeros(cfg.D)
    G = np.stack([local_gradient(w, d.X, d.labels, cfg.learning.lam, cfg) for d in task.devices], 1)
    rho = estimate_correlation(normalize(G)).rho
    off = rho[~np.eye(10, dtype=bool)]
    assert off.mean() > 0.5


def test_accuracy_of_perfect_model():
    cfg = small()
    X = np.eye(6)[:4]
    y = np.arange(4)
    w = np.zeros(cfg.D)
    W = np.zeros((4, 7))
    W[:, :4] = 10 * np.eye(4)
    w[: cfg.model_dim] = W.ravel()
    assert accuracy(w, X, y, cfg) == 1.0
