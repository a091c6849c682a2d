import numpy as np
import pytest

from ucs.coverage import SgtConfig, corpus_prior, coverage_phi
from ucs.errors import EmptyCandidateList, SingularKernel, TooFewPoints
from ucs.selection import (
    SelectionConfig,
    best_subset,
    dpp_kernel,
    greedy_dpp,
    greedy_dpp_ucs,
    rarity_controls,
    redundancy_utility,
    sample_candidate_subsets,
    subset_utility_ucs,
    votek_select,
    votek_ucs_select,
    votek_votes,
)


def _angles(degrees):
    rad = np.deg2rad(np.asarray(degrees, dtype=np.float64))
    return np.stack([np.cos(rad), np.sin(rad)], axis=1)


# five points on the unit circle whose 1-NN graph is a hand-checkable chain:
# 0<->1, 2->1, 3->2, 4->3
CHAIN = _angles([0.0, 10.0, 25.0, 45.0, 70.0])


def test_dpp_kernel_scale_zero_is_ones_plus_jitter():
    x = np.random.default_rng(0).standard_normal((6, 3))
    kernel = dpp_kernel(x, scale=0.0)
    assert np.allclose(kernel, np.ones((6, 6)) + 1e-8 * np.eye(6), atol=1e-15)


def test_dpp_kernel_orthogonal_rows():
    kernel = dpp_kernel(np.eye(3), scale=1.0)
    off = ~np.eye(3, dtype=bool)
    assert np.allclose(kernel[off], 1.0, atol=1e-15)
    assert np.allclose(np.diag(kernel), np.e + 1e-8, atol=1e-12)


def test_dpp_kernel_elementwise_recomputation():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((12, 5))
    scale = 0.37
    unit = x / np.linalg.norm(x, axis=1, keepdims=True)
    want = np.exp(scale * (unit @ unit.T))
    want = (want + want.T) / 2.0 + 1e-8 * np.eye(12)
    assert np.array_equal(dpp_kernel(x, scale), want)


def test_dpp_kernel_positive_definite():
    rng = np.random.default_rng(2)
    kernel = dpp_kernel(rng.standard_normal((50, 8)))
    np.linalg.cholesky(kernel)  # raises if not PD


def test_greedy_dpp_identity_kernel_takes_lowest_indices():
    assert greedy_dpp(np.eye(7), budget=3) == [0, 1, 2]


def test_greedy_dpp_matches_brute_force_logdet():
    rng = np.random.default_rng(3)
    for trial in range(6):
        n = int(rng.integers(5, 13))
        budget = int(rng.integers(1, 5))
        kernel = dpp_kernel(rng.standard_normal((n, 6)), scale=0.5)
        labels = np.arange(n)
        cfg = SelectionConfig(budget=budget, lam=0.0, base="dpp")
        result = greedy_dpp_ucs(kernel, labels, cfg)

        selected: list[int] = []
        for step, record in enumerate(result.records):
            base = np.linalg.slogdet(kernel[np.ix_(selected, selected)])[1] \
                if selected else 0.0
            gains = np.full(n, -np.inf)
            for i in range(n):
                if i in selected:
                    continue
                trial_set = selected + [i]
                gains[i] = np.linalg.slogdet(
                    kernel[np.ix_(trial_set, trial_set)]
                )[1] - base
            best_idx = int(np.argmax(gains))
            assert record.index == best_idx, f"trial {trial} step {step}"
            assert record.base_gain == pytest.approx(gains[best_idx], abs=1e-7)
            selected.append(best_idx)
        assert result.indices == selected


def test_greedy_dpp_singular_kernel():
    with pytest.raises(SingularKernel):
        greedy_dpp(np.zeros((3, 3)), budget=2)


def test_greedy_dpp_ucs_lambda_zero_equals_base():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((20, 4))
    kernel = dpp_kernel(x)
    labels = rng.integers(1, 6, size=20)
    cfg = SelectionConfig(budget=6, lam=0.0, base="dpp")
    assert greedy_dpp_ucs(kernel, labels, cfg).indices == greedy_dpp(kernel, 6)


def test_greedy_dpp_ucs_large_lambda_prefers_distinct_clusters():
    rng = np.random.default_rng(5)
    centers = rng.standard_normal((6, 8))
    # 4 copies of cluster 1 + six singleton clusters
    x = np.vstack([centers[0] + 0.01 * rng.standard_normal((4, 8)), centers[1:]])
    labels = np.array([1, 1, 1, 1, 2, 3, 4, 5, 6])
    cfg = SelectionConfig(budget=4, lam=1e6, base="dpp", sgt=SgtConfig(t=2.0))
    result = greedy_dpp_ucs(dpp_kernel(x), labels, cfg)
    assert len(set(labels[result.indices])) == 4
    assert result.k_seen == 4


def test_votek_votes_indegree_hand_oracle():
    votes = votek_votes(CHAIN, k=1, selected=[])
    assert np.array_equal(votes, [1.0, 2.0, 1.0, 1.0, 0.0])


def test_votek_votes_discount_hand_oracle():
    # voters 0 and 2 each have the selected point 1 as their neighbor
    votes = votek_votes(CHAIN, k=1, selected=[1])
    assert np.allclose(votes, [1.0, 0.2, 1.0, 1.0, 0.0], atol=1e-12)


def test_votek_votes_discount_base_one_disables_discounting():
    a = votek_votes(CHAIN, k=2, selected=[], discount_base=1.0)
    b = votek_votes(CHAIN, k=2, selected=[0, 3], discount_base=1.0)
    assert np.array_equal(a, b)


def test_votek_requires_enough_points():
    with pytest.raises(TooFewPoints):
        votek_votes(CHAIN, k=5, selected=[])


def test_votek_select_iterative_hand_sequence():
    # step 1 takes the top voted point 1; discounting then drops its voters
    picks = votek_select(CHAIN, budget=2, k=1)
    assert picks[0] == 1
    # after selecting 1: votes [1, .2, 1, 1, 0] -> tie 0/2/3 -> lowest index
    assert picks[1] == 0


def test_votek_ucs_lambda_zero_and_unit_weights():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((18, 4))
    base = votek_select(x, budget=5, k=3)
    labels = np.repeat(np.arange(1, 7), 3)  # all clusters size 3
    prior = corpus_prior(labels)
    for lam in (0.0, 0.7, 13.0):
        cfg = SelectionConfig(budget=5, lam=lam, base="votek", votek_k=3)
        result = votek_ucs_select(x, labels, prior, cfg)
        # equal-size clusters give unit weights, so any lambda is a no-op
        assert result.indices == base


def test_votek_ucs_large_lambda_selects_singletons():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((12, 6))
    labels = np.array([1, 1, 1, 1, 1, 1, 1, 1, 1, 2, 3, 4])
    prior = corpus_prior(labels)
    cfg = SelectionConfig(budget=3, lam=1e6, base="votek", votek_k=3,
                          sgt=SgtConfig(t=2.0))
    result = votek_ucs_select(x, labels, prior, cfg)
    assert sorted(labels[result.indices]) == [2, 3, 4]


def test_votek_ucs_frozen_votes_monotone_in_lambda():
    rng = np.random.default_rng(8)
    centers = rng.standard_normal((8, 5))
    rows, labels = [], []
    for c, count in enumerate([6, 6, 6, 1, 1, 1, 1, 1], start=1):
        rows.append(centers[c - 1] + 0.05 * rng.standard_normal((count, 5)))
        labels.extend([c] * count)
    x = np.vstack(rows)
    labels = np.array(labels)
    prior = corpus_prior(labels)
    uniq = []
    for lam in (0.0, 0.2, 1.0, 5.0, 100.0):
        cfg = SelectionConfig(budget=5, lam=lam, base="votek", votek_k=3)
        result = votek_ucs_select(x, labels, prior, cfg, freeze_votes=True)
        uniq.append(len(set(labels[result.indices])))
    assert uniq == sorted(uniq)


def test_votek_ucs_missing_cluster_weight():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((6, 3))
    labels = np.array([1, 1, 2, 2, 3, 3])
    prior = corpus_prior(labels[:4])  # no weight for cluster 3
    cfg = SelectionConfig(budget=2, base="votek", votek_k=2)
    with pytest.raises(ValueError):
        votek_ucs_select(x, labels, prior, cfg)


def test_rarity_b1_constant_bonus_is_plain_votek():
    rng = np.random.default_rng(10)
    x = rng.standard_normal((10, 4))
    labels = np.arange(1, 11)  # every cluster size 1
    cfg = SelectionConfig(budget=4, lam=3.0, base="votek", votek_k=2)
    result = rarity_controls(x, labels, cfg, "B1")
    assert result.indices == votek_select(x, budget=4, k=2)


def test_rarity_b2_uniform_spectrum_is_plain_votek():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((12, 4))
    labels = np.repeat(np.arange(1, 5), 3)  # uniform sizes -> flat spectrum
    cfg = SelectionConfig(budget=4, lam=2.0, base="votek", votek_k=2)
    result = rarity_controls(x, labels, cfg, "B2")
    assert result.indices == votek_select(x, budget=4, k=2)


def test_rarity_bonuses_differ_from_ucs_weights():
    rng = np.random.default_rng(12)
    x = rng.standard_normal((4, 3))
    labels = np.array([1, 1, 2, 3])  # sizes {2,1,1}
    cfg = SelectionConfig(budget=1, lam=1.0, base="votek", votek_k=1)
    b1 = rarity_controls(x, labels, cfg, "B1")
    prior = corpus_prior(labels, smoothing="off")
    ucs = votek_ucs_select(x, labels, prior, cfg)
    # B1 bonus for a singleton item is exactly 1; the UCS bonus is
    # log(1.2) ~= 0.182, so the two scoring rules are genuinely distinct
    bonuses_b1 = {int(i): 1.0 / prior.sizes[int(labels[i])] for i in range(4)}
    assert b1.records[0].coverage_term == pytest.approx(
        bonuses_b1[b1.records[0].index]
    )
    assert ucs.records[0].coverage_term == pytest.approx(
        np.log(prior.weights[int(labels[ucs.records[0].index])])
    )
    assert not np.isclose(1.0, np.log(1.2))


def test_rarity_unknown_variant():
    cfg = SelectionConfig(budget=1, base="votek", votek_k=1)
    with pytest.raises(ValueError):
        rarity_controls(CHAIN, np.arange(5), cfg, "B3")


def test_best_subset_argmax_and_ties():
    assert best_subset([[0], [1], [2]], [0.3, 0.9, 0.9]) == 1
    with pytest.raises(EmptyCandidateList):
        best_subset([], [])
    with pytest.raises(ValueError):
        best_subset([[0], [1]], [1.0])


def test_subset_utility_lambda_zero_plain_argmax():
    labels = np.array([1, 2, 3, 3])
    cands = [[0, 1], [2, 3], [0, 3]]
    utils = [0.1, 0.8, 0.3]
    cfg = SelectionConfig(budget=2, lam=0.0, base="subset_utility")
    result = subset_utility_ucs(cands, utils, labels, cfg)
    assert result.indices == [2, 3]
    assert result.records[0].index == 1


def test_subset_utility_singletons_beat_duplicates():
    labels = np.array([1, 2, 3, 3])
    cands = [[0, 1], [2, 3]]  # distinct clusters vs one duplicated cluster
    cfg = SelectionConfig(budget=2, lam=0.5, base="subset_utility",
                          sgt=SgtConfig(t=2.0))
    result = subset_utility_ucs(cands, [1.0, 1.0], labels, cfg)
    assert result.indices == [0, 1]
    phi_a = coverage_phi(labels, [0, 1], cfg.sgt)[0]
    phi_b = coverage_phi(labels, [2, 3], cfg.sgt)[0]
    assert phi_a > phi_b


def test_subset_utility_single_candidate():
    labels = np.array([1, 2])
    cfg = SelectionConfig(budget=2, lam=1.0, base="subset_utility")
    result = subset_utility_ucs([[0, 1]], [-5.0], labels, cfg)
    assert result.indices == [0, 1]


def test_subset_utility_validation():
    labels = np.array([1, 2, 3])
    cfg = SelectionConfig(budget=2, base="subset_utility")
    with pytest.raises(EmptyCandidateList):
        subset_utility_ucs([], [], labels, cfg)
    with pytest.raises(ValueError):
        subset_utility_ucs([[0, 1, 2]], [1.0], labels, cfg)
    with pytest.raises(ValueError):
        subset_utility_ucs([[0, 1]], [1.0, 2.0], labels, cfg)


def test_subset_utility_constant_shift_invariance():
    rng = np.random.default_rng(13)
    labels = rng.integers(1, 5, size=10)
    cands = [sorted(rng.choice(10, size=3, replace=False).tolist()) for _ in range(6)]
    utils = rng.standard_normal(6)
    cfg = SelectionConfig(budget=3, lam=0.4, base="subset_utility")
    a = subset_utility_ucs(cands, utils, labels, cfg)
    b = subset_utility_ucs(cands, utils + 17.5, labels, cfg)
    assert a.indices == b.indices


def test_step_records_total_identity():
    rng = np.random.default_rng(14)
    x = rng.standard_normal((15, 5))
    labels = rng.integers(1, 6, size=15)
    prior = corpus_prior(labels)
    lam = 0.8
    cfg = SelectionConfig(budget=5, lam=lam, base="votek", votek_k=3,
                          sgt=SgtConfig(t=2.0))
    for result in (
        greedy_dpp_ucs(dpp_kernel(x), labels, cfg),
        votek_ucs_select(x, labels, prior, cfg),
        rarity_controls(x, labels, cfg, "B1"),
        rarity_controls(x, labels, cfg, "B2"),
    ):
        assert len(result.indices) == 5
        assert len(set(result.indices)) == 5
        for record in result.records:
            assert record.total == pytest.approx(
                record.base_gain + lam * record.coverage_term, abs=1e-9
            )
    cands = [sorted(rng.choice(15, size=5, replace=False).tolist()) for _ in range(4)]
    result = subset_utility_ucs(cands, rng.standard_normal(4), labels, cfg)
    record = result.records[0]
    assert record.total == pytest.approx(
        record.base_gain + lam * record.coverage_term, abs=1e-9
    )


def test_budget_larger_than_pool_is_clamped():
    assert len(greedy_dpp(np.eye(3) * 2.0, budget=10)) == 3
    assert len(votek_select(CHAIN, budget=10, k=1)) == 5


def test_selection_config_validation():
    with pytest.raises(ValueError):
        SelectionConfig(budget=-1)
    with pytest.raises(ValueError):
        SelectionConfig(lam=-0.1)
    with pytest.raises(ValueError):
        SelectionConfig(base="random")


def test_sample_candidate_subsets_seeded_and_sized():
    rng = np.random.default_rng(15)
    x = rng.standard_normal((40, 6))
    query = rng.standard_normal(6)
    a = sample_candidate_subsets(x, query, budget=4, candidate_num=12, seed=3)
    b = sample_candidate_subsets(x, query, budget=4, candidate_num=12, seed=3)
    assert a == b
    assert len(a) == 12
    sims = (x / np.linalg.norm(x, axis=1, keepdims=True)) @ (query / np.linalg.norm(query))
    top = set(np.argsort(-sims)[:30].tolist())
    for subset in a:
        assert len(subset) == 4
        assert len(set(subset)) == 4
        assert set(subset) <= top
    with pytest.raises(ValueError):
        sample_candidate_subsets(x, query, budget=41, candidate_num=1, seed=0)


def test_redundancy_utility_hand_values():
    x = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    utils = redundancy_utility(x, [[0, 1], [0, 2], [0], [0, 1, 2]])
    assert utils[0] == pytest.approx(-1.0, abs=1e-12)  # identical rows
    assert utils[1] == pytest.approx(0.0, abs=1e-12)  # orthogonal rows
    assert utils[2] == 0.0  # singleton
    # mean of pairwise sims {1, 0, 0} twice each over 6 ordered pairs
    assert utils[3] == pytest.approx(-1.0 / 3.0, abs=1e-12)
