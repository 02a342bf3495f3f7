"""Fusion paradigms, k-means, cluster-quality indices and specialization metrics."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np


class UndefinedMetric(ValueError):
    """Raised when a metric has no value for the given input (one cluster, constant ranks...)."""


class FusionKind(Enum):
    BASE = "Base"
    WTDAVG = "WtdAvg"
    ATTN = "Attn"
    AVGPOOL = "AvgPool"


@dataclass(frozen=True)
class FusionParadigm:
    kind: FusionKind
    gamma: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")

    @property
    def label(self) -> str:
        if self.kind is FusionKind.WTDAVG:
            return f"WtdAvg ({self.gamma:g})"
        return self.kind.value


BASE = FusionParadigm(FusionKind.BASE)
ATTN = FusionParadigm(FusionKind.ATTN)
AVGPOOL = FusionParadigm(FusionKind.AVGPOOL)


def wtdavg(gamma: float) -> FusionParadigm:
    return FusionParadigm(FusionKind.WTDAVG, gamma)


FUSION_PARADIGMS = (BASE, wtdavg(0.5), wtdavg(0.7), ATTN, AVGPOOL)


def fuse(paradigm: FusionParadigm, v_agent: np.ndarray, tool_vectors: np.ndarray | Sequence[np.ndarray]) -> np.ndarray:
    """Combine an agent vector with its tool vectors. The result is not renormalized."""
    v_agent = np.asarray(v_agent, dtype=float)
    if paradigm.kind is FusionKind.BASE:
        return v_agent.copy()
    tools = np.asarray(tool_vectors, dtype=float)
    if tools.ndim != 2 or len(tools) == 0:
        raise ValueError(f"{paradigm.label} needs at least one tool vector")
    if tools.shape[1] != v_agent.shape[0]:
        raise ValueError("dimension mismatch between agent and tool vectors")
    if paradigm.kind is FusionKind.WTDAVG:
        g = paradigm.gamma
        return g * v_agent + (1.0 - g) * tools.mean(axis=0)
    if paradigm.kind is FusionKind.ATTN:
        cos = tools @ v_agent / (np.linalg.norm(tools, axis=1) * np.linalg.norm(v_agent))
        w = np.exp(cos - cos.max())
        w /= w.sum()
        return 0.5 * v_agent + 0.5 * (w @ tools)
    return (v_agent + tools.sum(axis=0)) / (len(tools) + 1)


def fuse_population(paradigm: FusionParadigm, agents: np.ndarray, tools: np.ndarray) -> np.ndarray:
    """Vectorized :func:`fuse` over ``agents`` (n, D) and ``tools`` (n, K, D), renormalized row-wise."""
    agents = np.asarray(agents, dtype=float)
    if paradigm.kind is FusionKind.BASE:
        out = agents.copy()
    elif paradigm.kind is FusionKind.WTDAVG:
        out = paradigm.gamma * agents + (1.0 - paradigm.gamma) * tools.mean(axis=1)
    elif paradigm.kind is FusionKind.ATTN:
        cos = np.einsum("nkd,nd->nk", tools, agents)
        cos /= np.linalg.norm(tools, axis=2) * np.linalg.norm(agents, axis=1)[:, None]
        w = np.exp(cos - cos.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        out = 0.5 * agents + 0.5 * np.einsum("nk,nkd->nd", w, tools)
    else:
        out = (agents + tools.sum(axis=1)) / (tools.shape[1] + 1)
    return out / np.linalg.norm(out, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# k-means


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    n_iter: int


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    pn = (points * points).sum(1)[:, None]
    cn = (centroids * centroids).sum(1)[None, :]
    d = pn - 2.0 * points @ centroids.T + cn
    # cancellation noise on (near-)duplicate rows would otherwise leak into sqrt
    d[d < 1e-12 * (pn + cn)] = 0.0
    return d


def kmeans(points: np.ndarray, k: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-6) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    An empty cluster is repaired by moving into it the point farthest from
    its centroid within the currently largest cluster.
    """
    x = np.asarray(points, dtype=float)
    n = len(x)
    if k < 1 or k > n:
        raise ValueError(f"k must satisfy 1 <= k <= n ({n}), got {k}")
    rng = np.random.default_rng(seed)

    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    closest = ((x - centroids[0]) ** 2).sum(1)
    for c in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centroids[c] = x[idx]
        closest = np.minimum(closest, ((x - centroids[c]) ** 2).sum(1))

    labels = np.zeros(n, dtype=np.int64)
    it = 0
    for it in range(1, max_iter + 1):
        d = _sq_dists(x, centroids)
        labels = d.argmin(axis=1)
        _repair_empty(x, labels, centroids, k)
        new = np.zeros_like(centroids)
        np.add.at(new, labels, x)
        counts = np.bincount(labels, minlength=k)
        new /= counts[:, None]
        shift = float(np.sqrt(((new - centroids) ** 2).sum(1)).max())
        centroids = new
        if shift < tol:
            break
    d = _sq_dists(x, centroids)
    labels = d.argmin(axis=1)
    _repair_empty(x, labels, centroids, k)
    inertia = float(((x - centroids[labels]) ** 2).sum())
    return KMeansResult(labels, centroids, inertia, it)


def _repair_empty(x, labels, centroids, k) -> None:
    counts = np.bincount(labels, minlength=k)
    for c in np.flatnonzero(counts == 0):
        big = int(counts.argmax())
        members = np.flatnonzero(labels == big)
        far = members[((x[members] - centroids[big]) ** 2).sum(1).argmax()]
        labels[far] = c
        centroids[c] = x[far]
        counts[big] -= 1
        counts[c] = 1


# ---------------------------------------------------------------------------
# cluster quality


def _check_clusters(points, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = np.asarray(points, dtype=float)
    lab = np.asarray(labels)
    if len(x) != len(lab):
        raise ValueError("points and labels differ in length")
    uniq, inv = np.unique(lab, return_inverse=True)
    if len(uniq) < 2:
        raise UndefinedMetric("cluster metrics need at least two non-empty clusters")
    return x, inv, uniq


def _centroids(x, inv, k):
    c = np.zeros((k, x.shape[1]))
    np.add.at(c, inv, x)
    return c / np.bincount(inv, minlength=k)[:, None]


def silhouette(points, labels) -> float:
    """Mean silhouette coefficient (Euclidean); singleton clusters score 0."""
    x, inv, uniq = _check_clusters(points, labels)
    k = len(uniq)
    n = len(x)
    counts = np.bincount(inv, minlength=k)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), inv] = 1.0
    sums = np.zeros((n, k))
    chunk = 2048
    for s in range(0, n, chunk):
        sums[s:s + chunk] = np.sqrt(_sq_dists(x[s:s + chunk], x)) @ onehot
    own = counts[inv]
    a = sums[np.arange(n), inv] / np.maximum(own - 1, 1)
    mean_other = sums / counts[None, :]
    mean_other[np.arange(n), inv] = np.inf
    b = mean_other.min(1)
    denom = np.maximum(a, b)
    s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    s[own == 1] = 0.0
    return float(s.mean())


def davies_bouldin(points, labels) -> float:
    x, inv, uniq = _check_clusters(points, labels)
    k = len(uniq)
    cent = _centroids(x, inv, k)
    scatter = np.zeros(k)
    np.add.at(scatter, inv, np.sqrt(((x - cent[inv]) ** 2).sum(1)))
    scatter /= np.bincount(inv, minlength=k)
    sep = np.sqrt(_sq_dists(cent, cent))
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (scatter[:, None] + scatter[None, :]) / sep
    np.fill_diagonal(r, -np.inf)
    r[~np.isfinite(r)] = -np.inf
    worst = r.max(1)
    worst[~np.isfinite(worst)] = 0.0
    return float(worst.mean())


def calinski_harabasz(points, labels) -> float:
    x, inv, uniq = _check_clusters(points, labels)
    k = len(uniq)
    n = len(x)
    cent = _centroids(x, inv, k)
    counts = np.bincount(inv, minlength=k)
    mean = x.mean(0)
    between = float((counts * ((cent - mean) ** 2).sum(1)).sum())
    within = float(((x - cent[inv]) ** 2).sum())
    if within == 0:
        return float("inf") if between > 0 else 1.0
    return between * (n - k) / (within * (k - 1))


def inter_intra_ratio(points, labels) -> float:
    """Mean pairwise centroid distance over mean point-to-own-centroid distance."""
    x, inv, uniq = _check_clusters(points, labels)
    k = len(uniq)
    cent = _centroids(x, inv, k)
    iu = np.triu_indices(k, 1)
    inter = float(np.sqrt(_sq_dists(cent, cent))[iu].mean())
    intra = float(np.sqrt(((x - cent[inv]) ** 2).sum(1)).mean())
    if intra == 0:
        return float("inf")
    return inter / intra


@dataclass
class ClusterReport:
    silhouette: float
    davies_bouldin: float
    calinski_harabasz: float
    inter_intra_ratio: float
    assignments: np.ndarray


def cluster_report(points, labels) -> ClusterReport:
    return ClusterReport(
        silhouette(points, labels),
        davies_bouldin(points, labels),
        calinski_harabasz(points, labels),
        inter_intra_ratio(points, labels),
        np.asarray(labels),
    )


# ---------------------------------------------------------------------------
# specialization


def _probs(domain_counts) -> np.ndarray:
    c = np.asarray(domain_counts, dtype=float)
    if np.any(c < 0):
        raise ValueError("counts must be non-negative")
    total = c.sum()
    if total <= 0:
        raise UndefinedMetric("all-zero counts")
    return c / total


def shannon_entropy(domain_counts) -> float:
    p = _probs(domain_counts)
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def normalized_entropy(domain_counts, k_domains: int) -> float:
    if k_domains < 2:
        raise UndefinedMetric("normalized entropy needs k_domains >= 2")
    return shannon_entropy(domain_counts) / np.log2(k_domains)


def dominant_fraction(domain_counts) -> float:
    p = _probs(domain_counts)
    return float(p.max())


def toolset_domain_counts(toolset_domains: Sequence[int]) -> np.ndarray:
    return np.bincount(np.asarray(toolset_domains, dtype=np.int64))


# ---------------------------------------------------------------------------
# rank correlation


def average_ranks(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Pearson correlation of average-tie ranks."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y):
        raise ValueError("length mismatch")
    if len(x) < 2:
        raise UndefinedMetric("need at least two observations")
    rx, ry = average_ranks(x), average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx * rx).sum() * (ry * ry).sum())
    if denom == 0:
        raise UndefinedMetric("constant input has no rank correlation")
    return float(np.clip((rx * ry).sum() / denom, -1.0, 1.0))
