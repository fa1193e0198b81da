import numpy as np
import pytest

from airfmtl import airlink
from airfmtl.airlink import ReceivePlan, Scenario, TransmitPlan
from airfmtl.gradstats import normalize
from airfmtl.instances import random_scenario
from airfmtl.objective import coefficients_for, comm_mse


def one_device(h=1.0, Q=1.0, sigma2=0.0, P0=2.0, N_R=1, N_T=1):
    H = np.zeros((1, N_R, N_T), dtype=complex)
    H[0, 0, 0] = h
    return Scenario(H, (np.ones((1, 1)),), np.array([Q]), (1,), sigma2, P0)


def test_modulate_examples():
    np.testing.assert_array_equal(airlink.modulate(np.array([1.0, 2, 3, 4])), [1 + 3j, 2 + 4j])
    np.testing.assert_array_equal(airlink.modulate(np.zeros(6)), np.zeros(3))
    with pytest.raises(ValueError):
        airlink.modulate(np.ones(3))


def test_modulation_round_trip(rng):
    x = rng.standard_normal((10, 3))
    np.testing.assert_array_equal(airlink.demodulate(airlink.modulate(x)), x)


def test_single_device_noiseless_transmit(rng):
    H = rng.standard_normal((1, 3, 2)) + 1j * rng.standard_normal((1, 3, 2))
    u = np.array([[0.3, -0.2j]])
    Y = airlink.transmit(H, u, np.ones((1, 4)), 0.0, None)
    for c in range(4):
        np.testing.assert_allclose(Y[:, c], H[0] @ u[0])


def test_noise_only_variance(rng):
    H = np.ones((2, 4, 2), dtype=complex)
    Y = airlink.transmit(H, np.zeros((2, 2)), np.ones((2, 50_000)), 0.5, rng)
    assert np.mean(np.abs(Y) ** 2) == pytest.approx(0.5, rel=0.01)
    with pytest.raises(ValueError):
        airlink.transmit(H, np.zeros((2, 2)), np.ones((2, 3)), 0.5, None)


def test_superposition(rng):
    H = rng.standard_normal((2, 3, 2)) + 0j
    U = rng.standard_normal((2, 2)) + 0j
    R = rng.standard_normal((2, 5)) + 1j * rng.standard_normal((2, 5))
    both = airlink.transmit(H, U, R, 0.0, None)
    solo = [airlink.transmit(H[[m]], U[[m]], R[[m]], 0.0, None) for m in range(2)]
    np.testing.assert_allclose(both, solo[0] + solo[1])


def test_combine_examples(rng):
    Y = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
    np.testing.assert_array_equal(airlink.combine(Y, np.array([1, 0, 0]), 0.0), 0)
    np.testing.assert_allclose(airlink.combine(Y, np.array([1, 0, 0]), 2.5), 2.5 * Y[0])
    f = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    f /= np.linalg.norm(f)
    assert np.linalg.norm(airlink.combine(Y, f, 1.0)) <= np.linalg.norm(Y) + 1e-12


def test_reconstruct_examples():
    out = airlink.reconstruct(np.zeros(2, dtype=complex), np.array([1.0, 3.0]), np.array([1.0, 3.0]))
    np.testing.assert_allclose(out, 2.5)
    with pytest.raises(ValueError):
        airlink.reconstruct(np.zeros(2), np.zeros(2), np.array([1.0, 1.0]), np.array([False, False]))


def test_perfect_alignment_recovers_gradient(rng):
    scn = one_device(h=0.7 - 0.2j, Q=3.0)
    g = rng.standard_normal(8) * 2.0 + 0.5
    batch = normalize(g[:, None])
    v = batch.task_variance
    zeta = 1.0
    u = scn.Q[0] * np.sqrt(v) / (zeta * scn.H[0, 0, 0])
    out = airlink.aggregate_over_air(scn, np.array([[u]]), ReceivePlan(np.ones((1, 1)), np.array([zeta])),
                                     [batch.normalized], [batch.means], scn.all_selected(), None)
    np.testing.assert_allclose(out[0], g, atol=1e-10)


def test_pipeline_recovers_weighted_average(rng):
    # two devices aligned to Q_i sqrt(v) with a common zeta
    H = rng.standard_normal((2, 1, 1)) + 1j * rng.standard_normal((2, 1, 1))
    Q = np.array([1.0, 3.0])
    scn = Scenario(H, (np.eye(2),), Q, (2,), 0.0, 100.0)
    Z = rng.standard_normal((6, 2))
    zeta = 2.0
    U = (Q / (zeta * H[:, 0, 0]))[:, None]
    out = airlink.aggregate_over_air(scn, U, ReceivePlan(np.ones((1, 1)), np.array([zeta])),
                                     [Z], [np.zeros(2)], scn.all_selected(), None)
    np.testing.assert_allclose(out[0], Z @ Q / 4.0, atol=1e-12)


def test_unselected_device_is_silent(rng):
    scn = random_scenario(rng, [3], sigma2=0.0)
    Z = rng.standard_normal((4, 3))
    sel = np.array([True, True, False])
    U = rng.standard_normal((3, scn.N_T)) + 0j
    plan = ReceivePlan(np.ones((1, scn.N_R)) / np.sqrt(scn.N_R), np.ones(1))
    a = airlink.aggregate_over_air(scn, U, plan, [Z], [np.zeros(3)], sel, None)
    Z2 = Z.copy()
    Z2[:, 2] = 99.0
    b = airlink.aggregate_over_air(scn, U, plan, [Z2], [np.zeros(3)], sel, None)
    np.testing.assert_array_equal(a[0], b[0])


def test_optimal_zeta_examples():
    # K=1, one device, Q=1, rho=1, v=1, h=1, sigma2=0 -> a=2, b=1
    assert airlink.optimal_zeta(2.0, 1.0, 1.0) == 1.0
    assert comm_mse(1.0, 2.0, 1.0, 1.0, 1.0, 1.0, 1) == 0.0
    # sigma2=2 raises b to 2
    scn = one_device(sigma2=2.0)
    co = coefficients_for(scn, np.ones((1, 1)), np.ones((1, 1)), scn.all_selected())
    assert co.b[0] == pytest.approx(2.0)
    assert airlink.optimal_zeta(co.a[0], co.b[0], 1.0) == pytest.approx(0.5)
    with pytest.raises(ZeroDivisionError):
        airlink.optimal_zeta(1.0, 0.0, 1.0)


def test_zero_forcing_single_device_power_consistent():
    # |f^H H|^2 = 1, Q = v = 1, P0 = 2: the straggler needs 2||u||^2 = P0,
    # which gives zeta^2 = 2 Q^2 v / (P0 |f^H H|^2) = 1
    scn = one_device(P0=2.0)
    U, zeta = airlink.zero_forcing(scn, np.ones((1, 1)), [1.0])
    assert zeta[0] ** 2 == pytest.approx(1.0)
    assert TransmitPlan(U).power_fraction(scn.P0)[0] == pytest.approx(1.0)


def test_zero_forcing_straggler_sets_zeta():
    H = np.array([[[1.0 + 0j]], [[2.0 + 0j]]])
    scn = Scenario(H, (np.eye(2),), np.ones(2), (2,), 0.0, 2.0)
    U, zeta = airlink.zero_forcing(scn, np.ones((1, 1)), [1.0])
    pf = TransmitPlan(U).power_fraction(scn.P0)
    assert pf[0] == pytest.approx(1.0) and pf[1] == pytest.approx(0.25)
    assert zeta[0] == pytest.approx(1.0)


def test_zero_forcing_has_no_misalignment(rng):
    scn = random_scenario(rng, [4, 3])
    F = rng.standard_normal((2, scn.N_R)) + 1j * rng.standard_normal((2, scn.N_R))
    F /= np.linalg.norm(F, axis=1, keepdims=True)
    v = np.array([0.5, 2.0])
    U, zeta = airlink.zero_forcing(scn, F, v)
    TransmitPlan(U).check_power(scn.P0)
    for k in range(2):
        sl = scn.task_slice(k)
        h = np.array([F[k].conj() @ scn.H[m] @ U[m] for m in range(sl.start, sl.stop)])
        np.testing.assert_allclose(zeta[k] * h, scn.Q[sl] * np.sqrt(v[k]), rtol=1e-12)
        assert TransmitPlan(U[sl]).power_fraction(scn.P0).max() == pytest.approx(1.0)


def test_power_check():
    TransmitPlan(np.array([[np.sqrt(0.5)]])).check_power(1.0)
    with pytest.raises(ValueError):
        TransmitPlan(np.array([[1.0]])).check_power(1.0)
