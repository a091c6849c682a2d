"""Pool token states into example embeddings and reduce them for coding.

The pipeline order is: pool -> optional row l2-normalization -> per-feature
standardization (default on) -> PCA. PCA is a deterministic SVD with a fixed
sign convention so repeated runs produce identical bases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyMask, TooFewRows
from .matrix_store import read_matrix, write_matrix

POOLING_MODES = ("mean", "first", "last")

# Coordinates smaller than this are treated as zero by the sign convention.
_SIGN_TOL = 1e-12


def masked_mean_pool(hidden: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Average the rows of `hidden` (T x d) where `mask` is nonzero.

    Raises EmptyMask when the mask selects nothing.
    """
    h = np.asarray(hidden, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64).ravel()
    if h.shape[0] != m.shape[0]:
        raise ValueError(f"mask length {m.shape[0]} != token count {h.shape[0]}")
    total = m.sum()
    if total <= 0:
        raise EmptyMask("mask sums to zero; no tokens to pool")
    return (m @ h) / total


def pool_tokens(hidden: np.ndarray, mask: np.ndarray, mode: str = "mean") -> np.ndarray:
    """Pool one example's token states. mode is 'mean', 'first', or 'last'."""
    if mode not in POOLING_MODES:
        raise ValueError(f"unknown pooling mode {mode!r}")
    if mode == "mean":
        return masked_mean_pool(hidden, mask)
    h = np.asarray(hidden, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64).ravel()
    active = np.flatnonzero(m != 0)
    if active.size == 0:
        raise EmptyMask("mask sums to zero; no tokens to pool")
    row = active[0] if mode == "first" else active[-1]
    return h[row].copy()


def pool_bundle(
    examples: list[tuple[str, np.ndarray, np.ndarray]], mode: str = "mean"
) -> np.ndarray:
    """Pool every (stem, hidden, mask) triple of a token bundle into an N x d matrix."""
    rows = [pool_tokens(hidden, mask, mode) for _, hidden, mask in examples]
    return np.vstack(rows)


def l2_normalize_rows(x: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Scale each row to unit l2 norm; zero rows stay zero."""
    arr = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(arr, axis=1, keepdims=True)
    return arr / (norms + eps)


@dataclass
class Standardizer:
    """Per-feature centering and scaling learned from a training pool."""

    mean: np.ndarray
    std: np.ndarray  # population std; exactly 0 marks a constant column

    def transform(self, x: np.ndarray) -> np.ndarray:
        arr = np.asarray(x, dtype=np.float64)
        safe = np.where(self.std > 0, self.std, 1.0)
        out = (arr - self.mean) / safe
        out[:, self.std == 0] = 0.0
        return out


def fit_standardizer(pool: np.ndarray) -> Standardizer:
    """Fit per-feature mean/std. Requires at least 2 rows (TooFewRows)."""
    arr = np.asarray(pool, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D pool, got shape {arr.shape}")
    if arr.shape[0] < 2:
        raise TooFewRows(f"standardizer needs >= 2 rows, got {arr.shape[0]}")
    return Standardizer(mean=arr.mean(axis=0), std=arr.std(axis=0))


@dataclass
class PcaBasis:
    """Orthonormal projection fitted by SVD of the centered pool.

    components has shape (d, d'); explained_variance holds the sample
    covariance eigenvalues for each retained direction. Directions past the
    data rank are valid outputs with (numerically) zero variance.
    """

    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components


def fit_pca(pool: np.ndarray, d_prime: int) -> PcaBasis:
    """Fit a PCA basis with d' components, 1 <= d' <= min(N-1, d).

    The sign of each component is fixed so its first coordinate above
    1e-12 in magnitude is positive, making the basis reproducible.
    """
    arr = np.asarray(pool, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D pool, got shape {arr.shape}")
    n, d = arr.shape
    limit = min(n - 1, d)
    if not 1 <= d_prime <= limit:
        raise ValueError(f"d_prime must be in [1, {limit}] for a {n}x{d} pool, got {d_prime}")
    mean = arr.mean(axis=0)
    centered = arr - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:d_prime].T.copy()
    for j in range(d_prime):
        col = components[:, j]
        nonzero = np.flatnonzero(np.abs(col) > _SIGN_TOL)
        if nonzero.size and col[nonzero[0]] < 0:
            components[:, j] = -col
    explained = (s[:d_prime] ** 2) / (n - 1)
    return PcaBasis(mean=mean, components=components, explained_variance=explained)


def preprocess_pool(
    pool: np.ndarray,
    d_prime: int = 128,
    standardize: bool = True,
    l2norm: bool = False,
) -> tuple[np.ndarray, Standardizer, PcaBasis]:
    """Run the full reduction on a pooled N x d matrix.

    d_prime is capped at min(N-1, d). When standardization is off the
    returned Standardizer is the identity (mean 0, std 1) so sidecars have a
    uniform shape.
    """
    arr = np.asarray(pool, dtype=np.float64)
    if l2norm:
        arr = l2_normalize_rows(arr)
    if standardize:
        scaler = fit_standardizer(arr)
    else:
        scaler = Standardizer(
            mean=np.zeros(arr.shape[1]), std=np.ones(arr.shape[1])
        )
    scaled = scaler.transform(arr)
    d_eff = max(1, min(d_prime, arr.shape[0] - 1, arr.shape[1]))
    basis = fit_pca(scaled, d_eff)
    return basis.transform(scaled), scaler, basis


def write_sidecars(stem: str, scaler: Standardizer, basis: PcaBasis) -> tuple[str, str]:
    """Persist the fitted transforms next to the reduced pool.

    <stem>.moments.ucsm is 3 x d (standardizer mean, std, PCA center);
    <stem>.basis.ucsm is (d+1) x d' (components stacked over explained
    variance). Returns the two paths.
    """
    moments_path = f"{stem}.moments.ucsm"
    basis_path = f"{stem}.basis.ucsm"
    write_matrix(np.vstack([scaler.mean, scaler.std, basis.mean]), moments_path)
    write_matrix(
        np.vstack([basis.components, basis.explained_variance[None, :]]), basis_path
    )
    return moments_path, basis_path


def read_sidecars(stem: str) -> tuple[Standardizer, PcaBasis]:
    moments = read_matrix(f"{stem}.moments.ucsm")
    stacked = read_matrix(f"{stem}.basis.ucsm")
    scaler = Standardizer(mean=moments[0], std=moments[1])
    basis = PcaBasis(
        mean=moments[2], components=stacked[:-1], explained_variance=stacked[-1]
    )
    return scaler, basis
