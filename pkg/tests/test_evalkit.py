import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmlsp.errors import DimMismatch, NoMatchForQuery, ShapeMismatch
from cmlsp.evalkit import (METRICS, CrossModalSplitter, EmbeddingBank, RoleSplitter, cmc, concat_banks, evaluate,
                           mean_average_precision, mean_inverse_negative_penalty, pairwise_distances,
                           protocol_run, summarize)
from cmlsp.losses import THERMAL, VISIBLE


def ranked(matches):
    """Distances that rank gallery item i at position i, with the given match pattern for one query."""
    g_ids = np.where(np.asarray(matches, bool), 0, 1)
    return np.arange(len(matches), dtype=float)[None, :], np.array([0]), g_ids


def bank(vectors, ids, mods=None, cams=None, **kw):
    n = len(ids)
    mods = np.zeros(n, int) if mods is None else mods
    cams = np.zeros(n, int) if cams is None else cams
    return EmbeddingBank(vectors, ids, mods, cams, **kw)


# -- distances ------------------------------------------------------------------

def test_identical_rows_have_zero_distance():
    rng = np.random.default_rng(0)
    g = rng.standard_normal((5, 3))
    d = pairwise_distances(bank(g[[2]], [0]), bank(g, np.arange(5)))
    assert d[0, 2] == pytest.approx(0.0, abs=1e-7)


def test_orthonormal_vectors():
    e = np.eye(4)
    d = pairwise_distances(bank(e, np.arange(4)), bank(e, np.arange(4)))
    np.testing.assert_allclose(d[~np.eye(4, dtype=bool)], np.sqrt(2), atol=1e-12)


def test_distances_match_double_loop():
    rng = np.random.default_rng(1)
    q, g = rng.standard_normal((6, 5)), rng.standard_normal((7, 5))
    d = pairwise_distances(bank(q, np.arange(6)), bank(g, np.arange(7)))
    for i in range(6):
        for j in range(7):
            assert d[i, j] == pytest.approx(np.sqrt(sum((q[i, k] - g[j, k]) ** 2 for k in range(5))), abs=1e-12)


def test_dim_mismatch():
    with pytest.raises(DimMismatch):
        pairwise_distances(bank(np.zeros((2, 3)), [0, 1]), bank(np.zeros((2, 4)), [0, 1]))


def test_align_and_both_modes():
    rng = np.random.default_rng(2)
    s = rng.standard_normal((4, 3, 2))
    v = rng.standard_normal((4, 5))
    b = bank(v, np.arange(4), stripes=s)
    eu = pairwise_distances(b, b)
    al = pairwise_distances(b, b, mode="align")
    np.testing.assert_allclose(pairwise_distances(b, b, mode="both", align_weight=0.5), eu + 0.5 * al)
    with pytest.raises(ValueError):
        pairwise_distances(b, b, mode="cosine")
    with pytest.raises(ValueError):
        pairwise_distances(bank(v, np.arange(4)), b, mode="align")


def test_bank_validation():
    with pytest.raises(ShapeMismatch):
        EmbeddingBank(np.zeros((3, 2)), [0, 1], [0, 0], [0, 0])
    with pytest.raises(ValueError):
        bank(np.array([[np.nan]]), [0])
    maps = np.random.default_rng(3).standard_normal((2, 4, 6, 2))
    b = bank(np.zeros((2, 1)), [0, 1], maps=maps)
    assert b.stripe_sets(3).shape == (2, 3, 4)


# -- metrics --------------------------------------------------------------------------

def test_perfect_embedding():
    ids = np.arange(5)
    d = 1.0 - np.eye(5)
    assert cmc(d, ids, ids)[0] == 1.0
    assert mean_average_precision(d, ids, ids) == 1.0
    assert mean_inverse_negative_penalty(d, ids, ids) == 1.0


def test_first_match_at_rank_three():
    d, q, g = ranked([0, 0, 1, 0, 1])
    np.testing.assert_array_equal(cmc(d, q, g), [0, 0, 1, 1, 1])


def test_ap_ranks_one_and_three():
    assert abs(mean_average_precision(*ranked([1, 0, 1, 0])) - 5 / 6) < 1e-12


@pytest.mark.parametrize("r", [1, 2, 5, 9])
def test_ap_single_match(r):
    m = np.zeros(9, int)
    m[r - 1] = 1
    assert abs(mean_average_precision(*ranked(m)) - 1 / r) < 1e-12


def test_inp_cases():
    assert mean_inverse_negative_penalty(*ranked([1, 0, 0, 1, 0])) == 0.5
    assert mean_inverse_negative_penalty(*ranked([1, 1, 1, 0])) == 1.0


def test_ties_break_by_gallery_index():
    d = np.zeros((1, 3))
    assert mean_average_precision(d, [0], [1, 0, 0]) == pytest.approx((1 / 2 + 2 / 3) / 2)


def test_no_match():
    with pytest.raises(NoMatchForQuery):
        cmc(np.zeros((1, 2)), [5], [0, 1])
    with pytest.raises(ShapeMismatch):
        evaluate(np.zeros((2, 2)), [0], [0, 1])


def _random_problem(seed, q=4, g=12, ids=3):
    rng = np.random.default_rng(seed)
    g_ids = rng.integers(0, ids, g)
    g_ids[:ids] = np.arange(ids)
    q_ids = rng.integers(0, ids, q)
    return rng.random((q, g)), q_ids, g_ids


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_metric_ranges_and_ordering(seed):
    d, q, g = _random_problem(seed)
    r = evaluate(d, q, g)
    assert np.all(np.diff(r.cmc) >= 0) and 0 <= r.cmc[0] and r.cmc[-1] == 1.0
    assert 0 < r.minp <= 1 and 0 < r.map <= 1


def test_inp_can_exceed_ap():
    # matches at ranks 2 and 3: AP = (1/2 + 2/3) / 2 < INP = 2/3, so mINP <= mAP is not a law
    d, q, g = ranked([0, 1, 1, 0])
    assert mean_inverse_negative_penalty(d, q, g) > mean_average_precision(d, q, g)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gallery_permutation_invariance(seed):
    d, q, g = _random_problem(seed)
    perm = np.random.default_rng(seed + 1).permutation(len(g))
    a, b = summarize(evaluate(d, q, g)), summarize(evaluate(d[:, perm], q, g[perm]))
    assert a == b


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_monotone_transform_invariance(seed):
    d, q, g = _random_problem(seed)
    assert summarize(evaluate(d, q, g)) == summarize(evaluate(np.exp(3 * d) - 7, q, g))


def test_camera_filter_drops_same_camera_matches():
    d = np.array([[0.0, 1.0, 2.0]])
    q, g = [0], [0, 1, 0]
    assert mean_average_precision(d, q, g) == pytest.approx((1 + 2 / 3) / 2)
    # the rank-1 match shares the query's camera and is removed
    assert mean_average_precision(d, q, g, q_cams=[4], g_cams=[4, 0, 5]) == pytest.approx(1 / 2)
    with pytest.raises(NoMatchForQuery):
        cmc(d, q, g, q_cams=[4], g_cams=[4, 0, 4])


# -- protocol ---------------------------------------------------------------------

def _cross_modal_bank(seed=0, ids=5, per=3, noise=0.5):
    rng = np.random.default_rng(seed)
    centres = rng.standard_normal((ids, 4))
    identity = np.repeat(np.arange(ids), 2 * per)
    modality = np.tile(np.repeat([VISIBLE, THERMAL], per), ids)
    vectors = centres[identity] + noise * rng.standard_normal((len(identity), 4))
    stripes = vectors.reshape(-1, 2, 2)
    return EmbeddingBank(vectors, identity, modality, 2 * modality, stripes=stripes)


def test_cross_modal_splitter():
    b = _cross_modal_bank()
    q, g = CrossModalSplitter("t2v", 1)(b, np.random.default_rng(0))
    assert np.all(b.modality[q] == THERMAL) and np.all(b.modality[g] == VISIBLE)
    assert sorted(b.identity[g]) == list(range(5))
    q, g = CrossModalSplitter("v2t", None)(b, np.random.default_rng(0))
    assert len(q) == len(g) == 15 and np.all(b.modality[g] == THERMAL)
    with pytest.raises(ValueError):
        CrossModalSplitter("x2y")(b, np.random.default_rng(0))


def test_single_repeat_equals_direct_evaluation():
    b = _cross_modal_bank()
    res = protocol_run(b, CrossModalSplitter(), repeats=1, seed=3)
    q, g = CrossModalSplitter()(b, np.random.default_rng(3))
    direct = summarize(evaluate(pairwise_distances(b.subset(q), b.subset(g)), b.identity[q], b.identity[g]))
    assert res.mean == direct
    assert all(v == 0 for v in res.std.values())


def test_identical_splits_have_zero_std():
    res = protocol_run(_cross_modal_bank(), CrossModalSplitter(gallery_shots=None), repeats=4)
    assert all(v == 0 for v in res.std.values()) and len(res.runs) == 4


def test_protocol_is_seeded():
    b = _cross_modal_bank(noise=1.0)
    a = protocol_run(b, CrossModalSplitter(), repeats=5, seed=1)
    assert a.mean == protocol_run(b, CrossModalSplitter(), repeats=5, seed=1).mean
    assert set(a.mean) == set(METRICS)


def test_protocol_gallery_order_invariance():
    b = _cross_modal_bank(noise=1.0)
    perm = np.random.default_rng(0).permutation(len(b))
    split = CrossModalSplitter(gallery_shots=None)
    assert protocol_run(b, split, 1).mean == protocol_run(b.subset(perm), split, 1).mean


def test_protocol_hooks():
    b = _cross_modal_bank()
    split = CrossModalSplitter(gallery_shots=None)
    plain = protocol_run(b, split, 1)
    same = protocol_run(b, split, 1, rerank=lambda qg, qq, gg: qg)
    assert plain.mean == same.mean
    aligned = protocol_run(b, split, 1, distance=lambda q, g: pairwise_distances(q, g, mode="align"))
    assert aligned.mean["rank1"] > 0
    cams = protocol_run(b, split, 1, use_cameras=True)
    assert cams.mean == plain.mean  # thermal and visible cameras never coincide here


def test_role_splitter_and_concat():
    a, b = _cross_modal_bank(0), _cross_modal_bank(1)
    both = concat_banks(a, b)
    assert len(both) == len(a) + len(b) and both.stripes.shape[0] == len(both)
    q, g = RoleSplitter(len(a), 2)(both, np.random.default_rng(0))
    assert np.array_equal(q, np.arange(len(a))) and np.all(g >= len(a)) and len(g) == 10
    q, g = RoleSplitter(len(a), None)(both, np.random.default_rng(0))
    assert len(g) == len(b)
