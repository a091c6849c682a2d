import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ucs.errors import EmptyMask, TooFewRows
from ucs.preprocess import (
    fit_pca,
    fit_standardizer,
    l2_normalize_rows,
    masked_mean_pool,
    pool_tokens,
    preprocess_pool,
    read_sidecars,
    write_sidecars,
)


def test_mean_pool_single_unmasked_row():
    h = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(masked_mean_pool(h, np.array([1.0, 0.0])), [1.0, 2.0])


def test_mean_pool_arithmetic_mean():
    h = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(masked_mean_pool(h, np.array([1.0, 1.0])), [2.0, 3.0])


def test_mean_pool_empty_mask():
    with pytest.raises(EmptyMask):
        masked_mean_pool(np.ones((2, 2)), np.zeros(2))


def test_first_and_last_pooling_skip_masked_tokens():
    h = np.arange(8.0).reshape(4, 2)
    mask = np.array([0.0, 1.0, 1.0, 0.0])
    assert np.array_equal(pool_tokens(h, mask, "first"), h[1])
    assert np.array_equal(pool_tokens(h, mask, "last"), h[2])
    assert np.array_equal(pool_tokens(h, mask, "mean"), (h[1] + h[2]) / 2)


def test_l2_normalize_three_four_five():
    out = l2_normalize_rows(np.array([[3.0, 4.0]]))
    assert np.allclose(out, [[0.6, 0.8]], atol=1e-11)


def test_l2_normalize_zero_row_stays_zero():
    assert np.array_equal(l2_normalize_rows(np.zeros((1, 3))), np.zeros((1, 3)))


def test_standardizer_two_points():
    s = fit_standardizer(np.array([[0.0], [2.0]]))
    assert s.mean[0] == 1.0 and s.std[0] == 1.0
    assert np.array_equal(s.transform(np.array([[0.0], [2.0]])), [[-1.0], [1.0]])


def test_standardizer_constant_column_maps_to_zero():
    s = fit_standardizer(np.array([[5.0, 1.0], [5.0, 3.0]]))
    out = s.transform(np.array([[5.0, 1.0], [5.0, 3.0]]))
    assert np.array_equal(out[:, 0], [0.0, 0.0])


def test_standardizer_random_matrix_centers_columns():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((100, 4)) * 5 + 2
    out = fit_standardizer(x).transform(x)
    assert np.abs(out.mean(axis=0)).max() < 1e-9
    assert np.abs(out.std(axis=0) - 1).max() < 1e-9


def test_standardizer_needs_two_rows():
    with pytest.raises(TooFewRows):
        fit_standardizer(np.ones((1, 2)))


def test_pca_collinear_points():
    x = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    basis = fit_pca(x, 2)
    assert np.allclose(np.abs(basis.components[:, 0]), 1 / np.sqrt(2), atol=1e-12)
    assert basis.explained_variance[1] < 1e-24


def test_pca_complete_basis_reconstructs():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((40, 6))
    basis = fit_pca(x, 6)
    centered = x - basis.mean
    scores = basis.transform(x)
    assert np.abs(scores @ basis.components.T - centered).max() < 1e-8


def test_pca_explained_matches_eigendecomposition():
    # Independent oracle: eigenvalues of the sample covariance (ddof=1).
    rng = np.random.default_rng(7)
    x = rng.standard_normal((50, 8))
    basis = fit_pca(x, 3)
    cov = np.cov(x, rowvar=False, ddof=1)
    eig = np.sort(np.linalg.eigvalsh(cov))[::-1]
    assert np.allclose(basis.explained_variance, eig[:3], atol=1e-10)


def test_pca_orthonormal_columns_and_variance_order():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((30, 5))
    basis = fit_pca(x, 4)
    gram = basis.components.T @ basis.components
    assert np.abs(gram - np.eye(4)).max() < 1e-8
    assert np.all(np.diff(basis.explained_variance) <= 1e-12)


def test_pca_score_covariance_is_diagonal():
    rng = np.random.default_rng(13)
    x = rng.standard_normal((60, 7))
    basis = fit_pca(x, 4)
    scores = basis.transform(x)
    cov = np.cov(scores, rowvar=False, ddof=1)
    assert np.abs(cov - np.diag(basis.explained_variance)).max() < 1e-8


def test_pca_row_order_invariant():
    rng = np.random.default_rng(17)
    x = rng.standard_normal((25, 4))
    b1 = fit_pca(x, 3)
    b2 = fit_pca(x[rng.permutation(25)], 3)
    assert np.allclose(b1.components, b2.components, atol=1e-9)


def test_preprocess_pool_caps_width():
    rng = np.random.default_rng(19)
    x = rng.standard_normal((10, 20))
    reduced, _, basis = preprocess_pool(x, d_prime=128)
    assert reduced.shape == (10, 9)  # capped at N - 1
    assert basis.components.shape == (20, 9)


def test_sidecars_round_trip(tmp_path):
    rng = np.random.default_rng(23)
    x = rng.standard_normal((30, 6))
    reduced, scaler, basis = preprocess_pool(x, d_prime=4)
    stem = str(tmp_path / "pool")
    write_sidecars(stem, scaler, basis)
    scaler2, basis2 = read_sidecars(stem)
    assert np.array_equal(scaler2.mean, scaler.mean)
    assert np.array_equal(scaler2.std, scaler.std)
    assert np.array_equal(basis2.components, basis.components)
    again = basis2.transform(scaler2.transform(x))
    assert np.array_equal(again, reduced)


@settings(max_examples=60, deadline=None)
@given(
    arrays(
        np.float64,
        st.tuples(st.integers(1, 8), st.integers(1, 5)),
        elements=st.floats(-1e6, 1e6, allow_nan=False),
    )
)
def test_l2_normalized_rows_have_norm_at_most_one(x):
    norms = np.linalg.norm(l2_normalize_rows(x), axis=1)
    assert np.all(norms <= 1.0 + 1e-12)
