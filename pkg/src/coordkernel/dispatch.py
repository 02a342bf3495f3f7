"""Market dispatch: hybrid sourcing of candidates and a boosted-tree ranker.

Candidates come from two channels. Active recruits are the top-k agents by
cosine similarity to the task above a threshold tau; passive bidders are
topic subscribers whose own policy decides to answer the call for proposals.
Every candidate is mapped to a 4-feature vector and scored by an additive
ensemble of shallow regression trees.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .orchestration import TaskNode
from .substrate import AgentRegistry, user_topic
from .value.agentrank import BASE_CREDIT, DAMPING

TAU = 0.3
K_RECRUIT = 8
TAU_BID = 0.5
BASE_COST = 1000
DEFAULT_CREDIT = (1.0 - DAMPING) * BASE_CREDIT
N_FEATURES = 4
FEATURE_NAMES = ("x_sem", "x_cre", "x_cost", "x_const")


class Channel(Enum):
    ACTIVE = "Active"
    PASSIVE = "Passive"


@dataclass(frozen=True)
class Bid:
    agent_id: int
    cost: int
    channel: Channel = Channel.PASSIVE
    topic: str | None = None

    def __post_init__(self):
        if self.cost < 0:
            raise ValueError("bid cost must be non-negative")


@dataclass(frozen=True)
class FeatureVector:
    x_sem: float
    x_cre: float
    x_cost: float
    x_const: float

    def __post_init__(self):
        if self.x_const not in (0.0, 1.0):
            raise ValueError("x_const must be 0 or 1")
        if self.x_cost < 0:
            raise ValueError("x_cost must be non-negative")

    def as_array(self) -> np.ndarray:
        return np.array([self.x_sem, self.x_cre, self.x_cost, self.x_const], dtype=float)


@dataclass(frozen=True)
class Cfp:
    node_id: str
    topic: str
    scope: str | None = None
    budget_cap: int = 0
    deadline: int = 0
    q_task: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not self.topic:
            raise ValueError("CFP topic must be non-empty")


# ---------------------------------------------------------------------------
# sourcing


def _similarities(
    q_task: np.ndarray, registry: AgentRegistry, ids: np.ndarray | None = None, all_sims: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Cosines for ``ids`` (default: everyone); ``all_sims`` reuses a full-registry pass."""
    if all_sims is None:
        all_sims = registry.cosines(np.asarray(q_task, dtype=float))
    if ids is None:
        return registry.ids, all_sims
    return ids, all_sims[registry.rows_of(ids)]


def recruit(
    q_task: np.ndarray,
    registry: AgentRegistry,
    k: int = K_RECRUIT,
    tau: float = TAU,
    exclude: Iterable[int] = (),
    all_sims: np.ndarray | None = None,
) -> list[int]:
    """Top-k agents by cosine similarity among those with similarity >= tau."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(registry) == 0:
        return []
    ids, sims = _similarities(q_task, registry, all_sims=all_sims)
    keep = sims >= tau
    ex = set(exclude)
    if ex:
        keep &= ~np.isin(ids, list(ex))
    ids, sims = ids[keep], sims[keep]
    order = np.lexsort((ids, -sims))[:k]
    return [int(a) for a in ids[order]]


@dataclass(frozen=True)
class BidPolicy:
    """Default rule: bid iff cosine(task, profile) >= tau_bid at base_cost * (1 + ability)."""

    tau_bid: float = TAU_BID
    base_cost: int = BASE_COST

    def price(self, ability: float) -> int:
        return int(round(self.base_cost * (1.0 + ability)))

    def wants(self, similarity: float) -> bool:
        return similarity >= self.tau_bid


def broadcast_cfp(
    cfp: Cfp,
    registry: AgentRegistry,
    bid_policy: BidPolicy = BidPolicy(),
    q_task: np.ndarray | None = None,
    all_sims: np.ndarray | None = None,
) -> list[Bid]:
    """Collect passive bids from topic subscribers (and the scoped private channel)."""
    q = cfp.q_task if q_task is None else q_task
    if q is None:
        raise ValueError("CFP needs a task embedding")
    members = set(registry.subscribers(cfp.topic))
    if cfp.scope is not None:
        members |= registry.subscribers(user_topic(cfp.scope))
    if not members:
        return []
    ids = np.array(sorted(members), dtype=np.int64)
    ids, sims = _similarities(q, registry, ids, all_sims)
    return [
        Bid(aid, bid_policy.price(registry._store[aid].ability), Channel.PASSIVE, cfp.topic)
        for aid, s in zip(ids.tolist(), sims.tolist())
        if bid_policy.wants(s)
    ]


def merge_pool(active: Sequence[Bid], passive: Sequence[Bid], exclude: Iterable[int] = ()) -> list[Bid]:
    """P = A_active U A_passive, deduplicated by agent_id with the Active entry kept."""
    ex = set(exclude)
    pool: dict[int, Bid] = {}
    for b in passive:
        if b.agent_id not in ex:
            pool.setdefault(b.agent_id, b)
    for b in active:
        if b.agent_id not in ex:
            pool[b.agent_id] = b
    return [pool[a] for a in sorted(pool)]


# ---------------------------------------------------------------------------
# features


def _satisfies(node: TaskNode, agent_id: int, registry: AgentRegistry) -> bool:
    scope = node.scope
    if scope is not None and agent_id not in registry.subscribers(user_topic(scope)):
        return False
    allowed = node.constraints.get("tiers")
    if allowed is not None and registry._store[agent_id].tier.value not in allowed:
        return False
    return True


def extract_features(bid: Bid, node: TaskNode, q_task: np.ndarray, credit_store: Mapping[int, float], registry: AgentRegistry) -> FeatureVector:
    profile = registry.lookup(bid.agent_id)
    q = np.asarray(q_task, dtype=float)
    x_sem = float(np.dot(q, profile.embedding) / (np.linalg.norm(q) * np.linalg.norm(profile.embedding)))
    x_cre = credit_store.get(bid.agent_id, DEFAULT_CREDIT) / BASE_CREDIT
    cap = node.budget_cap
    x_cost = 1.0 if cap == 0 else bid.cost / cap
    x_const = 1.0 if _satisfies(node, bid.agent_id, registry) else 0.0
    return FeatureVector(max(-1.0, min(1.0, x_sem)), x_cre, x_cost, x_const)


def feature_matrix(
    bids: Sequence[Bid],
    node: TaskNode,
    q_task: np.ndarray,
    credit_store: Mapping[int, float],
    registry: AgentRegistry,
    all_sims: np.ndarray | None = None,
) -> np.ndarray:
    """Vectorized :func:`extract_features` over a pool; rows follow ``bids``."""
    if not bids:
        return np.zeros((0, N_FEATURES))
    ids = np.array([b.agent_id for b in bids], dtype=np.int64)
    _, sims = _similarities(q_task, registry, ids, all_sims)
    x = np.empty((len(bids), N_FEATURES))
    x[:, 0] = np.clip(sims, -1.0, 1.0)
    x[:, 1] = [credit_store.get(a, DEFAULT_CREDIT) / BASE_CREDIT for a in ids.tolist()]
    cap = node.budget_cap
    x[:, 2] = 1.0 if cap == 0 else np.array([b.cost for b in bids], dtype=float) / cap
    if node.scope is None and "tiers" not in node.constraints:
        x[:, 3] = 1.0
    else:
        x[:, 3] = [1.0 if _satisfies(node, a, registry) else 0.0 for a in ids.tolist()]
    return x


# ---------------------------------------------------------------------------
# ranker


@dataclass
class TreeNode:
    """Split on ``x[feature] < threshold`` (left) or a leaf when ``feature`` is None."""

    feature: int | None = None
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    value: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def predict_one(self, x: Sequence[float]) -> float:
        node = self
        while not node.is_leaf:
            node = node.left if x[node.feature] < node.threshold else node.right
        return node.value

    def depth(self) -> int:
        return 0 if self.is_leaf else 1 + max(self.left.depth(), self.right.depth())


def leaf(value: float) -> TreeNode:
    return TreeNode(value=float(value))


def split(feature: int, threshold: float, left: TreeNode, right: TreeNode) -> TreeNode:
    if feature not in range(N_FEATURES):
        raise ValueError(f"split feature {feature} out of range")
    return TreeNode(feature, float(threshold), left, right)


class RankModel:
    """``score(x) = base_score + learning_rate * sum_m tree_m(x)``."""

    def __init__(self, trees: Sequence[TreeNode], learning_rate: float = 0.1, base_score: float = 0.0):
        if not 0.0 < learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        self.trees = list(trees)
        self.learning_rate = float(learning_rate)
        self.base_score = float(base_score)
        self._compiled = None

    def __eq__(self, other) -> bool:
        return isinstance(other, RankModel) and self.to_text() == other.to_text()

    # complete-binary-tree arrays for vectorized evaluation
    def _compile(self):
        if self._compiled is None:
            depth = max([t.depth() for t in self.trees] + [1])
            n_int = 2**depth - 1
            m = len(self.trees)
            feat = np.zeros((m, n_int), dtype=np.int64)
            thr = np.full((m, n_int), np.inf)
            vals = np.zeros((m, 2**depth))
            for t, tree in enumerate(self.trees):
                _fill(tree, 0, 0, depth, feat[t], thr[t], vals[t])
            offs = np.arange(m) * n_int
            leaf_offs = np.arange(m) * (n_int + 1) - n_int - offs
            self._compiled = (depth, offs, feat.ravel(), thr.ravel(), vals.ravel(), leaf_offs)
        return self._compiled

    def score_many(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if not self.trees or len(x) == 0:
            return np.full(len(x), self.base_score)
        depth, offs, feat_f, thr_f, vals_f, leaf_offs = self._compile()
        n, d = x.shape
        flat_x = x.ravel()
        row_base = np.arange(0, n * d, d)[:, None]
        # pos indexes the flattened internal-node arrays: tree offset + heap index
        pos = np.repeat(offs[None, :], n, axis=0)
        for _ in range(depth):
            pos = 2 * pos - offs + 1 + (flat_x[row_base + feat_f[pos]] >= thr_f[pos])
        return self.base_score + self.learning_rate * vals_f[pos + leaf_offs].sum(axis=1)

    def to_text(self) -> str:
        lines = [
            "rankmodel 1",
            f"base_score {self.base_score!r}",
            f"learning_rate {self.learning_rate!r}",
            f"trees {len(self.trees)}",
        ]
        for i, t in enumerate(self.trees):
            lines.append(f"tree {i}")
            _emit(t, lines)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RankModel":
        it = iter(text.strip().splitlines())
        if next(it) != "rankmodel 1":
            raise ValueError("not a rank model")
        base = float(next(it).split()[1])
        lr = float(next(it).split()[1])
        m = int(next(it).split()[1])
        trees = []
        for i in range(m):
            if next(it) != f"tree {i}":
                raise ValueError(f"expected tree {i}")
            trees.append(_parse(it))
        return cls(trees, lr, base)


def _fill(node: TreeNode, pos: int, level: int, depth: int, feat, thr, vals) -> None:
    if level == depth:
        vals[pos - (2**depth - 1)] = node.value
        return
    if node.is_leaf:
        # pad: an always-left split whose subtrees repeat the leaf
        feat[pos], thr[pos] = 0, np.inf
        _fill(node, 2 * pos + 1, level + 1, depth, feat, thr, vals)
        _fill(node, 2 * pos + 2, level + 1, depth, feat, thr, vals)
        return
    feat[pos], thr[pos] = node.feature, node.threshold
    _fill(node.left, 2 * pos + 1, level + 1, depth, feat, thr, vals)
    _fill(node.right, 2 * pos + 2, level + 1, depth, feat, thr, vals)


def _emit(node: TreeNode, lines: list[str]) -> None:
    if node.is_leaf:
        lines.append(f"L {node.value!r}")
    else:
        lines.append(f"S {node.feature} {node.threshold!r}")
        _emit(node.left, lines)
        _emit(node.right, lines)


def _parse(it) -> TreeNode:
    parts = next(it).split()
    if parts[0] == "L":
        return leaf(float(parts[1]))
    return split(int(parts[1]), float(parts[2]), _parse(it), _parse(it))


def score(model: RankModel, x: FeatureVector | Sequence[float]) -> float:
    arr = x.as_array() if isinstance(x, FeatureVector) else np.asarray(x, dtype=float)
    return float(model.score_many(arr[None, :])[0])


def _best_split(x: np.ndarray, r: np.ndarray) -> tuple[float, int, float] | None:
    n = len(r)
    if n < 2:
        return None
    total = r.sum()
    base = total * total / n
    best = None
    for f in range(x.shape[1]):
        order = np.argsort(x[:, f], kind="stable")
        xs, rs = x[order, f], r[order]
        csum = np.cumsum(rs)[:-1]
        n_left = np.arange(1, n)
        valid = xs[1:] > xs[:-1]
        if not valid.any():
            continue
        gain = csum**2 / n_left + (total - csum) ** 2 / (n - n_left) - base
        gain = np.where(valid, gain, -np.inf)
        i = int(np.argmax(gain))
        if best is None or gain[i] > best[0]:
            best = (float(gain[i]), f, float((xs[i] + xs[i + 1]) / 2.0))
    if best is None or best[0] <= 1e-12 * max(1.0, float((r * r).sum())):
        return None
    return best


def _grow(x: np.ndarray, r: np.ndarray, depth: int) -> TreeNode:
    if depth == 0:
        return leaf(r.mean())
    found = _best_split(x, r)
    if found is None:
        return leaf(r.mean())
    _, f, thr = found
    mask = x[:, f] < thr
    return split(f, thr, _grow(x[mask], r[mask], depth - 1), _grow(x[~mask], r[~mask], depth - 1))


def train_rank_model(
    samples: Sequence[tuple[FeatureVector | Sequence[float], float]],
    m: int = 50,
    gamma: float = 0.1,
    depth: int = 3,
) -> RankModel:
    """Pointwise least-squares gradient boosting with greedy variance-reduction splits."""
    if len(samples) < 10:
        raise ValueError("need at least 10 training samples")
    if not 1 <= depth <= 3:
        raise ValueError("tree depth must be within 1..3")
    if m < 1:
        raise ValueError("need at least one tree")
    x = np.array([s.as_array() if isinstance(s, FeatureVector) else np.asarray(s, float) for s, _ in samples])
    y = np.array([float(t) for _, t in samples])
    if not np.all(np.isfinite(y)):
        raise ValueError("labels must be finite")
    base = float(y.mean())
    pred = np.full(len(y), base)
    trees = []
    for _ in range(m):
        resid = y - pred
        tree = _grow(x, resid, depth)
        if tree.is_leaf and abs(tree.value) < 1e-15:
            tree = leaf(0.0)
        trees.append(tree)
        pred += gamma * np.array([tree.predict_one(row) for row in x])
    return RankModel(trees, gamma, base)


def canonical_label(x: np.ndarray, noise: np.ndarray | float = 0.0) -> np.ndarray:
    """Simulated historical utility: 5 x_sem + 2 x_cre - x_cost - 10 (1 - x_const) + noise."""
    x = np.atleast_2d(x)
    return 5.0 * x[:, 0] + 2.0 * x[:, 1] - x[:, 2] - 10.0 * (1.0 - x[:, 3]) + noise


@dataclass(frozen=True)
class TrainingRecipe:
    n_samples: int = 2000
    m: int = 60
    gamma: float = 0.2
    depth: int = 3
    sem_range: tuple[float, float] = (-0.2, 1.0)
    cre_range: tuple[float, float] = (-1.0, 2.0)
    cost_range: tuple[float, float] = (0.0, 1.5)
    p_violation: float = 0.2
    noise_sd: float = 0.1
    seed: int = 2024


def canonical_training_set(recipe: TrainingRecipe = TrainingRecipe()) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(recipe.seed)
    n = recipe.n_samples
    x = np.column_stack(
        [
            rng.uniform(*recipe.sem_range, n),
            rng.uniform(*recipe.cre_range, n),
            rng.uniform(*recipe.cost_range, n),
            (rng.random(n) >= recipe.p_violation).astype(float),
        ]
    )
    return x, canonical_label(x, rng.normal(0.0, recipe.noise_sd, n))


def canonical_model(recipe: TrainingRecipe = TrainingRecipe()) -> RankModel:
    x, y = canonical_training_set(recipe)
    return train_rank_model(list(zip(x, y)), recipe.m, recipe.gamma, recipe.depth)


# ---------------------------------------------------------------------------
# award


@dataclass(frozen=True)
class DispatchConfig:
    tau: float = TAU
    k: int = K_RECRUIT
    bid_policy: BidPolicy = BidPolicy()
    use_bids: bool = True


@dataclass
class AwardResult:
    winner: int | None
    ranked: list[tuple[int, float]]
    pool_size: int
    bids: dict[int, Bid] = field(default_factory=dict)

    @property
    def no_winner(self) -> bool:
        return self.winner is None


def rank_pool(model: RankModel, bids: Sequence[Bid], x: np.ndarray) -> list[tuple[int, float]]:
    """Sort by score descending, ties by lowest agent_id."""
    if not bids:
        return []
    s = model.score_many(x)
    ids = np.array([b.agent_id for b in bids], dtype=np.int64)
    order = np.lexsort((ids, -s))
    return [(int(ids[i]), float(s[i])) for i in order]


def dispatch(
    node: TaskNode,
    q_task: np.ndarray,
    registry: AgentRegistry,
    credit_store: Mapping[int, float],
    model: RankModel,
    exclude: Iterable[int] = (),
    config: DispatchConfig = DispatchConfig(),
) -> AwardResult:
    """Hybrid sourcing plus ranking; an empty pool yields no winner."""
    ex = set(exclude)
    policy = config.bid_policy
    if len(registry) == 0:
        return AwardResult(None, [], 0)
    sims = registry.cosines(np.asarray(q_task, dtype=float))
    active_ids = recruit(q_task, registry, config.k, config.tau, ex, sims)
    active = [Bid(a, policy.price(registry._store[a].ability), Channel.ACTIVE) for a in active_ids]
    passive: list[Bid] = []
    if config.use_bids:
        cfp = Cfp(node.node_id, node.skill, node.scope, node.budget_cap)
        passive = broadcast_cfp(cfp, registry, policy, q_task, sims)
    pool = merge_pool(active, passive, ex)
    if not pool:
        return AwardResult(None, [], 0)
    x = feature_matrix(pool, node, q_task, credit_store, registry, sims)
    ranked = rank_pool(model, pool, x)
    return AwardResult(ranked[0][0], ranked, len(pool), {b.agent_id: b for b in pool})

