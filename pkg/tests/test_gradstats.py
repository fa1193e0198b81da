import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from airfmtl.gradstats import (correlated_rows, estimate_correlation, normalize,
                               project_correlation, raw_correlation, sample_correlated_gradients,
                               uniform_correlation)


def test_normalize_known_column():
    b = normalize(np.array([[1.0], [3.0]]))
    np.testing.assert_allclose(b.means, [2.0])
    np.testing.assert_allclose(b.variances, [1.0])
    np.testing.assert_allclose(b.normalized[:, 0], [-1.0, 1.0])
    np.testing.assert_allclose(b.denormalize(), b.G)


def test_constant_column_normalizes_to_zero():
    b = normalize(np.full((6, 2), 4.0))
    np.testing.assert_array_equal(b.normalized, 0.0)
    np.testing.assert_array_equal(b.variances, 0.0)


@given(arrays(float, (12, 3), elements=st.floats(-1e3, 1e3)))
def test_normalized_columns_are_standard(G):
    b = normalize(G)
    # near-constant columns lose precision to cancellation
    live = np.sqrt(b.variances) > 1e-6 * (1 + np.abs(b.means))
    np.testing.assert_allclose(b.normalized.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(np.mean(b.normalized[:, live] ** 2, axis=0), 1.0, rtol=1e-9)
    np.testing.assert_allclose(b.denormalize(), G, atol=1e-9 * (1 + np.abs(G).max()))


def test_identical_columns_fully_correlated():
    g = np.arange(10.0)
    rho = estimate_correlation(normalize(np.stack([g, g, 2 * g + 1], axis=1))).rho
    np.testing.assert_allclose(rho, np.ones((3, 3)), atol=1e-12)


def test_estimate_recovers_population_correlation(rng):
    target = uniform_correlation(0.6, 4).rho
    Z = correlated_rows(target, 50_000, rng)
    rho = estimate_correlation(normalize(Z)).rho
    np.testing.assert_allclose(rho, target, atol=0.02)


@given(arrays(float, (4, 4), elements=st.floats(-1, 1)))
def test_projection_is_valid_correlation(X):
    rho = project_correlation(X)
    np.testing.assert_allclose(np.diag(rho), 1.0)
    np.testing.assert_allclose(rho, rho.T)
    assert np.linalg.eigvalsh(rho).min() > -1e-8
    assert np.abs(rho).max() <= 1.0


def test_projection_keeps_valid_matrix():
    rho = uniform_correlation(0.3, 3).rho
    np.testing.assert_allclose(project_correlation(rho), rho)


def test_uniform_correlation():
    rho = uniform_correlation(0.5, 3).rho
    np.testing.assert_array_equal(rho, [[1, .5, .5], [.5, 1, .5], [.5, .5, 1]])
    np.testing.assert_array_equal(uniform_correlation(0.0, 2).rho, np.eye(2))
    with pytest.raises(ValueError):
        uniform_correlation(1.2, 2)


def test_correlated_rows_reject_indefinite(rng):
    with pytest.raises(np.linalg.LinAlgError):
        correlated_rows(np.array([[1.0, 2.0], [2.0, 1.0]]), 5, rng)


def test_sampled_batch_has_population_stats(rng):
    b = sample_correlated_gradients(uniform_correlation(0.9, 3, task=1), 1000, rng)
    assert b.task == 1 and b.G.shape == (1000, 3)
    np.testing.assert_array_equal(b.variances, 1.0)
    assert raw_correlation(b)[0, 1] == pytest.approx(0.9, abs=0.05)
