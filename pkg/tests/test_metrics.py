import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as nph

from coordkernel.metrics import (
    ATTN,
    AVGPOOL,
    BASE,
    UndefinedMetric,
    calinski_harabasz,
    cluster_report,
    davies_bouldin,
    dominant_fraction,
    fuse,
    fuse_population,
    inter_intra_ratio,
    kmeans,
    normalized_entropy,
    shannon_entropy,
    silhouette,
    spearman,
    wtdavg,
)

SIX = np.array([[0, 0], [1, 0], [0, 1], [4, 4], [5, 4], [4, 5]], float)
SIX_LABELS = np.array([0, 0, 0, 1, 1, 1])


def test_fusion_degenerate_cases():
    rng = np.random.default_rng(0)
    v = rng.normal(size=5)
    tools = rng.normal(size=(3, 5))
    assert np.array_equal(fuse(wtdavg(1.0), v, tools), v)
    assert np.array_equal(fuse(BASE, v, tools), v)
    assert np.allclose(fuse(AVGPOOL, v, [v]), v)
    t = rng.normal(size=5)
    assert np.allclose(fuse(ATTN, v, [t]), 0.5 * v + 0.5 * t)


def test_fusion_formulas():
    v = np.array([1.0, 0.0])
    tools = np.array([[0.0, 1.0], [1.0, 1.0]])
    assert np.allclose(fuse(wtdavg(0.5), v, tools), [0.75, 0.5])
    assert np.allclose(fuse(AVGPOOL, v, tools), [2 / 3, 2 / 3])
    cos = np.array([0.0, 1 / np.sqrt(2)])
    w = np.exp(cos) / np.exp(cos).sum()
    assert np.allclose(fuse(ATTN, v, tools), 0.5 * v + 0.5 * (w @ tools))


def test_fusion_guards():
    with pytest.raises(ValueError):
        fuse(AVGPOOL, np.ones(2), np.zeros((0, 2)))
    with pytest.raises(ValueError):
        wtdavg(1.5)


@pytest.mark.parametrize("paradigm", [BASE, wtdavg(0.5), wtdavg(0.7), ATTN, AVGPOOL], ids=lambda p: p.label)
def test_population_fusion_matches_scalar(paradigm):
    rng = np.random.default_rng(1)
    agents = rng.normal(size=(7, 4))
    tools = rng.normal(size=(7, 3, 4))
    batch = fuse_population(paradigm, agents, tools)
    for i in range(7):
        f = fuse(paradigm, agents[i], tools[i])
        assert np.allclose(batch[i], f / np.linalg.norm(f))


def test_kmeans_separates_blobs():
    rng = np.random.default_rng(2)
    pts = np.vstack([rng.normal(0, 0.1, (30, 3)), rng.normal(5, 0.1, (30, 3))])
    labels = kmeans(pts, 2, seed=0).labels
    assert len(set(labels[:30])) == 1 and len(set(labels[30:])) == 1 and labels[0] != labels[-1]


def test_kmeans_single_cluster_is_mean():
    pts = np.random.default_rng(3).normal(size=(20, 4))
    assert np.allclose(kmeans(pts, 1).centroids[0], pts.mean(0))


def test_kmeans_beats_random_assignments():
    rng = np.random.default_rng(4)
    pts = rng.normal(size=(12, 2))
    res = kmeans(pts, 3, seed=1)
    wcss = ((pts - res.centroids[res.labels]) ** 2).sum()
    assert res.inertia == pytest.approx(wcss)
    for _ in range(50):
        lab = rng.integers(0, 3, 12)
        if len(set(lab)) < 3:
            continue
        cent = np.array([pts[lab == c].mean(0) for c in range(3)])
        assert wcss <= ((pts - cent[lab]) ** 2).sum() + 1e-12


def test_kmeans_close_to_sklearn():
    from sklearn.cluster import KMeans

    rng = np.random.default_rng(5)
    pts = np.vstack([rng.normal(c, 0.3, (40, 2)) for c in ([0, 0], [3, 0], [0, 3], [3, 3])])
    ours = kmeans(pts, 4, seed=0).inertia
    ref = KMeans(4, n_init=10, random_state=0).fit(pts).inertia_
    assert ours <= ref * 1.01


def test_kmeans_deterministic():
    pts = np.random.default_rng(6).normal(size=(50, 3))
    a, b = kmeans(pts, 4, seed=9), kmeans(pts, 4, seed=9)
    assert np.array_equal(a.labels, b.labels)


def test_six_point_fixture():
    rep = cluster_report(SIX, SIX_LABELS)
    assert rep.silhouette == pytest.approx(0.8003016549277945, abs=1e-9)
    assert rep.davies_bouldin == pytest.approx(0.23123764778713174, abs=1e-9)
    assert rep.calinski_harabasz == pytest.approx(72.0, abs=1e-9)
    assert rep.inter_intra_ratio == pytest.approx(4 * np.sqrt(2) / ((np.sqrt(2) + 2 * np.sqrt(5)) / 9), abs=1e-9)


def test_duplicated_points_silhouette_one():
    pts = np.array([[0, 0]] * 4 + [[10, 10]] * 4, float)
    assert silhouette(pts, [0] * 4 + [1] * 4) == pytest.approx(1.0, abs=1e-9)


def test_single_cluster_is_undefined():
    for fn in (silhouette, davies_bouldin, calinski_harabasz, inter_intra_ratio):
        with pytest.raises(UndefinedMetric):
            fn(SIX, np.zeros(6, int))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 5))
def test_cluster_indices_match_sklearn(seed, k):
    from sklearn.metrics import calinski_harabasz_score, davies_bouldin_score, silhouette_score

    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(40, 3))
    labels = np.arange(40) % k
    rng.shuffle(labels)
    assert silhouette(pts, labels) == pytest.approx(silhouette_score(pts, labels), abs=1e-9)
    assert davies_bouldin(pts, labels) == pytest.approx(davies_bouldin_score(pts, labels), abs=1e-9)
    assert calinski_harabasz(pts, labels) == pytest.approx(calinski_harabasz_score(pts, labels), rel=1e-9)


def test_entropy_examples():
    assert shannon_entropy([10]) == 0.0 and dominant_fraction([10]) == 1.0
    assert shannon_entropy([1] * 10) == pytest.approx(np.log2(10))
    assert dominant_fraction([1] * 10) == pytest.approx(0.1)
    h = shannon_entropy([7, 2, 1])
    assert h == pytest.approx(1.1568, abs=1e-3)
    assert normalized_entropy([7, 2, 1], 50) == pytest.approx(h / np.log2(50))
    assert dominant_fraction([7, 2, 1]) == pytest.approx(0.7)


@given(st.lists(st.integers(0, 20), min_size=1, max_size=12).filter(lambda c: sum(c) > 0))
def test_entropy_bounds(counts):
    h = shannon_entropy(counts)
    nz = sum(1 for c in counts if c)
    assert -1e-12 <= h <= np.log2(nz) + 1e-12
    assert 0 <= normalized_entropy(counts, max(2, len(counts))) <= 1 + 1e-12


def test_spearman_examples():
    x = [3.0, 1.0, 4.0, 1.5, 9.0]
    assert spearman(x, x) == 1.0
    assert spearman(x, [-v for v in x]) == -1.0
    assert spearman([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8)
    with pytest.raises(UndefinedMetric):
        spearman([1], [1])
    with pytest.raises(UndefinedMetric):
        spearman([1, 1, 1], [1, 2, 3])


@given(
    nph.arrays(float, 15, elements=st.integers(0, 5).map(float)),
    nph.arrays(float, 15, elements=st.floats(-100, 100)),
)
def test_spearman_matches_scipy(x, y):
    from scipy.stats import spearmanr

    if len(set(x)) < 2 or len(set(y)) < 2:
        return
    assert spearman(x, y) == pytest.approx(spearmanr(x, y).statistic, abs=1e-9)
