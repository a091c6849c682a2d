"""Discretize codes or embeddings into latent clusters.

Distances are cosine throughout. DBSCAN runs on a full N x N distance
matrix (fine for N <= 20k) computed in row tiles, optionally across
threads; tiles write disjoint regions, so results do not depend on the
thread count. Noise points are remapped to fresh singleton clusters so that
every example carries a cluster id.
"""

from __future__ import annotations

from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import TooFewPoints
from .latent_dictionary import normalize_codes

CLUSTERING_METHODS = ("dict_dbscan", "dbscan", "dict_argmax")

DEFAULT_TILE_ROWS = 2048


@dataclass
class ClusterAssignment:
    """Cluster labels for a pool plus the parameters that produced them.

    labels are post-remap (1..C, no noise); raw_labels keep DBSCAN's output
    (0-based clusters, -1 noise) or atom indices for the argmax method.
    """

    labels: np.ndarray
    raw_labels: np.ndarray
    method: str
    eps: float | None = None
    dbscan_k: int | None = None
    dbscan_q: float | None = None
    min_samples: int = 1

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max()) if self.labels.size else 0


def cosine_distance_matrix(
    x: np.ndarray,
    tile_rows: int = DEFAULT_TILE_ROWS,
    threads: int = 1,
) -> np.ndarray:
    """Pairwise cosine distances 1 - <xi,xj>/(|xi||xj|), exactly symmetric.

    Zero rows sit at distance 1 from everything. The diagonal is zero and
    values are clipped to [0, 2].
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {arr.shape}")
    n = arr.shape[0]
    norms = np.linalg.norm(arr, axis=1, keepdims=True)
    unit = np.divide(arr, norms, out=np.zeros_like(arr), where=norms > 0)
    dist = np.empty((n, n), dtype=np.float64)

    blocks = []
    for i0 in range(0, n, tile_rows):
        i1 = min(i0 + tile_rows, n)
        for j0 in range(i0, n, tile_rows):
            blocks.append((i0, i1, j0, min(j0 + tile_rows, n)))

    def fill(block: tuple[int, int, int, int]) -> None:
        i0, i1, j0, j1 = block
        tile = 1.0 - unit[i0:i1] @ unit[j0:j1].T
        np.clip(tile, 0.0, 2.0, out=tile)
        dist[i0:i1, j0:j1] = tile
        if j0 > i0:
            dist[j0:j1, i0:i1] = tile.T
        else:  # diagonal block: mirror the upper triangle for exact symmetry
            upper = np.triu(tile, 1)
            dist[i0:i1, j0:j1] = upper + upper.T

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, blocks))
    else:
        for block in blocks:
            fill(block)
    np.fill_diagonal(dist, 0.0)
    return dist


def knn_quantile_eps_from(dist: np.ndarray, k: int, q: float) -> float:
    """eps = q-quantile (linear interpolation) of each point's k-th nearest
    distance, self excluded. Needs k < N (TooFewPoints)."""
    n = dist.shape[0]
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must be in [0, 1], got {q}")
    if k >= n:
        raise TooFewPoints(f"k={k} neighbors requested but only {n} points")
    kth = np.empty(n, dtype=np.float64)
    for i0 in range(0, n, DEFAULT_TILE_ROWS):
        i1 = min(i0 + DEFAULT_TILE_ROWS, n)
        block = dist[i0:i1].copy()
        block[np.arange(i0, i1) - i0, np.arange(i0, i1)] = np.inf
        kth[i0:i1] = np.partition(block, k - 1, axis=1)[:, k - 1]
    return float(np.quantile(kth, q))


def knn_quantile_eps(x: np.ndarray, k: int, q: float) -> float:
    return knn_quantile_eps_from(cosine_distance_matrix(x), k, q)


def dbscan_from(dist: np.ndarray, eps: float, min_samples: int = 1) -> np.ndarray:
    """DBSCAN on a precomputed distance matrix.

    Neighborhoods are {j : d(i,j) <= eps} and include the point itself.
    Returns raw labels: clusters 0..C-1, noise -1. Points are scanned in
    index order and clusters expanded breadth-first, so a border point joins
    the first core cluster that reaches it; clusters are then renumbered by
    smallest member index.
    """
    n = dist.shape[0]
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    if min_samples < 1:
        raise ValueError(f"min_samples must be >= 1, got {min_samples}")
    UNSEEN, NOISE = -2, -1
    labels = np.full(n, UNSEEN, dtype=np.int64)
    cluster = 0
    for i in range(n):
        if labels[i] != UNSEEN:
            continue
        neighbors = np.flatnonzero(dist[i] <= eps)
        if neighbors.size < min_samples:
            labels[i] = NOISE
            continue
        labels[i] = cluster
        queue = deque(int(j) for j in neighbors)
        while queue:
            j = queue.popleft()
            if labels[j] == NOISE:
                labels[j] = cluster  # border point, claimed once
            if labels[j] != UNSEEN:
                continue
            labels[j] = cluster
            j_neighbors = np.flatnonzero(dist[j] <= eps)
            if j_neighbors.size >= min_samples:
                queue.extend(int(t) for t in j_neighbors)
        cluster += 1
    if cluster > 1:
        first_member = np.full(cluster, n, dtype=np.int64)
        for i in range(n - 1, -1, -1):
            if labels[i] >= 0:
                first_member[labels[i]] = i
        order = np.argsort(first_member, kind="stable")
        renumber = np.empty(cluster, dtype=np.int64)
        renumber[order] = np.arange(cluster)
        mask = labels >= 0
        labels[mask] = renumber[labels[mask]]
    return labels


def dbscan(x: np.ndarray, eps: float, min_samples: int = 1) -> np.ndarray:
    return dbscan_from(cosine_distance_matrix(x), eps, min_samples)


def remap_noise_to_singletons(raw_labels: np.ndarray) -> np.ndarray:
    """Renumber clusters 1..C by first appearance; each noise point (-1)
    becomes a fresh singleton cluster C+1, C+2, ... in row order."""
    raw = np.asarray(raw_labels, dtype=np.int64)
    out = np.zeros_like(raw)
    mapping: dict[int, int] = {}
    for i, value in enumerate(raw):
        if value == -1:
            continue
        v = int(value)
        if v not in mapping:
            mapping[v] = len(mapping) + 1
        out[i] = mapping[v]
    next_id = len(mapping) + 1
    for i in np.flatnonzero(raw == -1):
        out[i] = next_id
        next_id += 1
    return out


def argmax_atoms(codes: np.ndarray) -> np.ndarray:
    """Assign each row to its largest-magnitude atom (ties: lowest index);
    ids renumbered 1.. by first appearance."""
    arr = np.asarray(codes, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] == 0:
        raise ValueError(f"expected a 2-D code matrix, got shape {arr.shape}")
    raw = np.argmax(np.abs(arr), axis=1).astype(np.int64)
    return remap_noise_to_singletons(raw)


def cluster_pool(
    x: np.ndarray,
    method: str = "dict_dbscan",
    dbscan_k: int = 20,
    dbscan_q: float = 0.01,
    min_samples: int = 1,
    eps_override: float | None = None,
    norm_eps: float = 1e-12,
    tile_rows: int = DEFAULT_TILE_ROWS,
    threads: int = 1,
) -> ClusterAssignment:
    """Cluster a pool of codes or embeddings into latent-cluster labels.

    dict_dbscan first row-normalizes codes (the dbscan method takes the
    input as is); both then share one DBSCAN path. dict_argmax skips
    distances entirely.
    """
    if method not in CLUSTERING_METHODS:
        raise ValueError(f"unknown clustering method {method!r}")
    arr = np.asarray(x, dtype=np.float64)
    if method == "dict_argmax":
        labels = argmax_atoms(arr)
        return ClusterAssignment(
            labels=labels,
            raw_labels=np.argmax(np.abs(arr), axis=1).astype(np.int64),
            method=method,
        )
    if method == "dict_dbscan":
        arr = normalize_codes(arr, eps=norm_eps)
    dist = cosine_distance_matrix(arr, tile_rows=tile_rows, threads=threads)
    eps = eps_override
    if eps is None:
        eps = knn_quantile_eps_from(dist, dbscan_k, dbscan_q)
    raw = dbscan_from(dist, eps, min_samples)
    return ClusterAssignment(
        labels=remap_noise_to_singletons(raw),
        raw_labels=raw,
        method=method,
        eps=float(eps),
        dbscan_k=dbscan_k,
        dbscan_q=dbscan_q,
        min_samples=min_samples,
    )
