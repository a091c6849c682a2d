"""Budget-B demonstration selection with optional coverage regularization.

Three base selectors are provided: greedy log-det DPP, iterative discounted
VoteK, and an argmax over externally scored candidate subsets (the stand-in
for perplexity-style subset utilities). Each has a UCS variant that adds
lambda times a coverage term; at lambda = 0 every variant reproduces its
base selector bit-exactly. Ties are always broken toward the lowest index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .coverage import CorpusPrior, CoverageTracker, SgtConfig, coverage_phi, corpus_prior
from .errors import EmptyCandidateList, SingularKernel, TooFewPoints

# Floor for Schur complements before taking logs; keeps degenerate candidates
# selectable (with a hugely negative gain) instead of crashing the loop.
_SC_FLOOR = 1e-300

RARITY_VARIANTS = ("B1", "B2")


@dataclass
class SelectionConfig:
    budget: int = 10
    lam: float = 0.1
    base: str = "votek"
    dpp_scale_factor: float = 0.1
    votek_k: int = 3
    votek_discount_base: float = 10.0
    candidate_num: int = 50
    sgt: SgtConfig = field(default_factory=SgtConfig)
    seed: int = 42

    def __post_init__(self) -> None:
        if self.budget < 0:
            raise ValueError(f"budget must be >= 0, got {self.budget}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.base not in ("dpp", "votek", "subset_utility"):
            raise ValueError(f"unknown base selector {self.base!r}")


@dataclass
class StepRecord:
    index: int
    base_gain: float
    coverage_term: float
    total: float


@dataclass
class SelectionResult:
    indices: list[int]
    records: list[StepRecord]
    phi: float
    k_seen: int
    base: str
    lam: float


def _finish(indices, records, labels, cfg, base) -> SelectionResult:
    if labels is not None:
        phi, k_seen, _ = coverage_phi(labels, indices, cfg.sgt)
    else:
        phi, k_seen = float("nan"), 0
    return SelectionResult(
        indices=[int(i) for i in indices], records=records, phi=float(phi),
        k_seen=int(k_seen), base=base, lam=cfg.lam,
    )


# ---------------------------------------------------------------------------
# DPP


def dpp_kernel(x: np.ndarray, scale: float = 0.1) -> np.ndarray:
    """L = exp(scale * cosine-similarity), symmetrized, jittered by 1e-8 I."""
    arr = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(arr, axis=1, keepdims=True)
    unit = np.divide(arr, norms, out=np.zeros_like(arr), where=norms > 0)
    sim = unit @ unit.T
    kernel = np.exp(scale * sim)
    kernel = (kernel + kernel.T) / 2.0
    kernel[np.diag_indices_from(kernel)] += 1e-8
    return kernel


def _dpp_gains(kernel: np.ndarray, selected: list[int], candidates: np.ndarray) -> np.ndarray:
    """log det L_{S+i} - log det L_S for each candidate, via Schur complements."""
    diag = kernel[candidates, candidates]
    if not selected:
        sc = diag
    else:
        sub = kernel[np.ix_(selected, selected)]
        rhs = kernel[np.ix_(selected, candidates)]
        try:
            solved = np.linalg.solve(sub, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularKernel(
                f"kernel submatrix of order {len(selected)} is singular"
            ) from exc
        sc = diag - np.einsum("ij,ij->j", rhs, solved)
    return np.log(np.maximum(sc, _SC_FLOOR))


def _greedy_dpp(kernel, labels, cfg: SgtConfig | None, lam, budget, base_tag):
    n = kernel.shape[0]
    if kernel.shape != (n, n):
        raise ValueError(f"kernel must be square, got {kernel.shape}")
    steps = min(budget, n)
    tracker = CoverageTracker(labels, cfg) if labels is not None else None
    selected: list[int] = []
    records: list[StepRecord] = []
    alive = np.ones(n, dtype=bool)
    for _ in range(steps):
        candidates = np.flatnonzero(alive)
        base_gain = _dpp_gains(kernel, selected, candidates)
        if tracker is not None:
            phi_now = tracker.phi()
            coverage = np.array(
                [tracker.gain_if_added(int(i), phi_now) for i in candidates]
            )
        else:
            coverage = np.zeros(candidates.size)
        total = base_gain + lam * coverage
        pos = int(np.argmax(total))  # first max -> lowest index on ties
        pick = int(candidates[pos])
        records.append(StepRecord(pick, float(base_gain[pos]),
                                  float(coverage[pos]), float(total[pos])))
        selected.append(pick)
        alive[pick] = False
        if tracker is not None:
            tracker.add(pick)
    return selected, records


def greedy_dpp(kernel: np.ndarray, budget: int) -> list[int]:
    """Plain greedy MAP of a DPP: maximize log det of the selected principal
    submatrix, one item at a time."""
    indices, _ = _greedy_dpp(kernel, None, None, 0.0, budget, "dpp")
    return indices


def greedy_dpp_ucs(kernel: np.ndarray, labels: np.ndarray, cfg: SelectionConfig) -> SelectionResult:
    """Greedy DPP with coverage pressure: each step maximizes the log-det
    gain plus lambda * (Phi(S+i) - Phi(S)), spectrum updated incrementally."""
    indices, records = _greedy_dpp(kernel, labels, cfg.sgt, cfg.lam, cfg.budget, "dpp")
    return _finish(indices, records, labels, cfg, "dpp")


# ---------------------------------------------------------------------------
# VoteK


def _knn_graph(x: np.ndarray, k: int) -> np.ndarray:
    """Indices of each row's k nearest neighbors by cosine distance,
    self excluded, distance ties broken by index."""
    from .clustering import cosine_distance_matrix

    arr = np.asarray(x, dtype=np.float64)
    n = arr.shape[0]
    if not 1 <= k < n:
        raise TooFewPoints(f"votek_k={k} requires at least k+1={k + 1} points, got {n}")
    dist = cosine_distance_matrix(arr)
    np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1, kind="stable")
    return order[:, :k]


def _votes_from_graph(neighbors: np.ndarray, selected: list[int],
                      discount_base: float, n: int) -> np.ndarray:
    k = neighbors.shape[1]
    if selected:
        chosen = np.zeros(n, dtype=bool)
        chosen[selected] = True
        overlap = chosen[neighbors].sum(axis=1).astype(np.float64)
        voter_weight = discount_base ** (-overlap)
    else:
        voter_weight = np.ones(n, dtype=np.float64)
    return np.bincount(
        neighbors.ravel(), weights=np.repeat(voter_weight, k), minlength=n
    )


def votek_votes(x: np.ndarray, k: int, selected, discount_base: float = 10.0) -> np.ndarray:
    """Discounted vote scores: j votes for its k nearest neighbors with
    weight discount_base^-(selected among j's neighbors)."""
    neighbors = _knn_graph(x, k)
    return _votes_from_graph(neighbors, list(selected), discount_base, x.shape[0])


def _iterative_votes(x, labels, cfg: SelectionConfig, bonus: np.ndarray,
                     freeze_votes: bool, base_tag: str) -> SelectionResult:
    n = np.asarray(x).shape[0]
    neighbors = _knn_graph(x, cfg.votek_k)
    steps = min(cfg.budget, n)
    selected: list[int] = []
    records: list[StepRecord] = []
    frozen = (
        _votes_from_graph(neighbors, [], cfg.votek_discount_base, n)
        if freeze_votes else None
    )
    alive = np.ones(n, dtype=bool)
    for _ in range(steps):
        votes = frozen if frozen is not None else _votes_from_graph(
            neighbors, selected, cfg.votek_discount_base, n
        )
        total = votes + cfg.lam * bonus
        masked = np.where(alive, total, -np.inf)
        pick = int(np.argmax(masked))
        records.append(StepRecord(pick, float(votes[pick]), float(bonus[pick]),
                                  float(total[pick])))
        selected.append(pick)
        alive[pick] = False
    return _finish(selected, records, labels, cfg, base_tag)


def votek_select(x: np.ndarray, budget: int, k: int = 3,
                 discount_base: float = 10.0) -> list[int]:
    """Plain iterative VoteK: repeatedly take the highest-vote point,
    recomputing votes as selections accumulate."""
    cfg = SelectionConfig(budget=budget, lam=0.0, base="votek", votek_k=k,
                          votek_discount_base=discount_base)
    n = np.asarray(x).shape[0]
    result = _iterative_votes(x, None, cfg, np.zeros(n), False, "votek")
    return result.indices


def votek_ucs_select(
    x: np.ndarray,
    labels: np.ndarray,
    prior: CorpusPrior,
    cfg: SelectionConfig,
    freeze_votes: bool = False,
) -> SelectionResult:
    """VoteK with rarity pressure: score(i) = v(i) + lambda * log w_c(i).

    The prior must cover every non-noise cluster id in labels. freeze_votes
    computes votes once with nothing selected (used to test that coverage
    pressure is monotone in lambda).
    """
    lab = np.asarray(labels)
    bonus = np.zeros(lab.shape[0])
    for i, value in enumerate(lab):
        v = int(value)
        if cfg.sgt.noise_label is not None and v == cfg.sgt.noise_label:
            continue  # noise carries no coverage pressure
        if v not in prior.weights:
            raise ValueError(f"prior has no weight for cluster {v}")
        bonus[i] = prior.log_weight(v)
    return _iterative_votes(x, lab, cfg, bonus, freeze_votes, "votek")


def rarity_controls(
    x: np.ndarray,
    labels: np.ndarray,
    cfg: SelectionConfig,
    variant: str,
    eps: float = 1e-6,
) -> SelectionResult:
    """Rarity-only VoteK controls.

    B1 adds lambda / n_c(i) (inverse global cluster size). B2 adds
    lambda * log(C_total / (g_hat(n_c(i)) + eps)) from the smoothed corpus
    spectrum, skipping the Good-Turing ratio entirely.
    """
    if variant not in RARITY_VARIANTS:
        raise ValueError(f"variant must be one of {RARITY_VARIANTS}, got {variant!r}")
    lab = np.asarray(labels)
    prior = corpus_prior(lab, smoothing="power_law", eps=eps,
                         noise_label=cfg.sgt.noise_label)
    c_total = len(prior.sizes)
    bonus = np.zeros(lab.shape[0])
    for i, value in enumerate(lab):
        v = int(value)
        if v not in prior.sizes:
            continue  # noise
        size = prior.sizes[v]
        if variant == "B1":
            bonus[i] = 1.0 / size
        else:
            g_hat = prior.smoothed.get(size, 0.0)
            bonus[i] = math.log(c_total / (g_hat + eps))
    return _iterative_votes(x, lab, cfg, bonus, False, f"votek_{variant}")


# ---------------------------------------------------------------------------
# Subset utilities (MDL stand-in)


def best_subset(candidates: list[list[int]], utilities) -> int:
    """Position of the highest-utility candidate; first wins ties."""
    if not candidates:
        raise EmptyCandidateList("no candidate subsets supplied")
    scores = np.asarray(utilities, dtype=np.float64)
    if scores.shape[0] != len(candidates):
        raise ValueError(
            f"{len(candidates)} candidates but {scores.shape[0]} utilities"
        )
    return int(np.argmax(scores))


def subset_utility_ucs(
    candidates: list[list[int]],
    utilities,
    labels: np.ndarray,
    cfg: SelectionConfig,
) -> SelectionResult:
    """Pick argmax over candidate subsets of utility(S) + lambda * Phi(S).

    Every candidate must have exactly cfg.budget members.
    """
    if not candidates:
        raise EmptyCandidateList("no candidate subsets supplied")
    for pos, subset in enumerate(candidates):
        if len(subset) != cfg.budget:
            raise ValueError(
                f"candidate {pos} has {len(subset)} members, budget is {cfg.budget}"
            )
    scores = np.asarray(utilities, dtype=np.float64)
    if scores.shape[0] != len(candidates):
        raise ValueError(
            f"{len(candidates)} candidates but {scores.shape[0]} utilities"
        )
    phis = np.array(
        [coverage_phi(labels, subset, cfg.sgt)[0] for subset in candidates]
    )
    totals = scores + cfg.lam * phis
    winner = int(np.argmax(totals))
    record = StepRecord(winner, float(scores[winner]), float(phis[winner]),
                        float(totals[winner]))
    result = _finish(list(candidates[winner]), [record], labels, cfg, "subset_utility")
    return result


def redundancy_utility(x: np.ndarray, candidates: list[list[int]]) -> np.ndarray:
    """Synthetic offline utility: negative mean pairwise cosine similarity
    inside each subset (0 for singletons)."""
    arr = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(arr, axis=1, keepdims=True)
    unit = np.divide(arr, norms, out=np.zeros_like(arr), where=norms > 0)
    out = np.empty(len(candidates), dtype=np.float64)
    for pos, subset in enumerate(candidates):
        rows = unit[list(subset)]
        m = len(subset)
        if m < 2:
            out[pos] = 0.0
            continue
        sim = rows @ rows.T
        off_sum = float(sim.sum() - np.trace(sim))
        out[pos] = -off_sum / (m * (m - 1))
    return out


def sample_candidate_subsets(
    x: np.ndarray,
    query: np.ndarray,
    budget: int,
    candidate_num: int,
    seed: int,
    top_pool: int = 30,
) -> list[list[int]]:
    """Seeded top-similarity proposals: rank the pool by cosine similarity to
    `query`, keep the top max(budget, top_pool) rows, and draw candidate_num
    budget-sized subsets from them without replacement (within a subset)."""
    arr = np.asarray(x, dtype=np.float64)
    n = arr.shape[0]
    if budget > n:
        raise ValueError(f"budget {budget} exceeds pool size {n}")
    q = np.asarray(query, dtype=np.float64).ravel()
    norms = np.linalg.norm(arr, axis=1)
    qn = np.linalg.norm(q)
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = np.where((norms > 0) & (qn > 0), arr @ q / (norms * qn + 1e-300), 0.0)
    order = np.lexsort((np.arange(n), -sims))
    pool = order[: max(budget, min(top_pool, n))]
    rng = np.random.default_rng(seed)
    return [
        [int(j) for j in rng.choice(pool, size=budget, replace=False)]
        for _ in range(candidate_num)
    ]
