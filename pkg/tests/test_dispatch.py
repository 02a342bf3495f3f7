import functools
import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as nph

from coordkernel.dispatch import (
    Bid,
    BidPolicy,
    Cfp,
    Channel,
    DispatchConfig,
    FeatureVector,
    RankModel,
    broadcast_cfp,
    canonical_model,
    dispatch,
    extract_features,
    feature_matrix,
    leaf,
    merge_pool,
    recruit,
    score,
    split,
    train_rank_model,
)
from coordkernel.orchestration import TaskNode
from coordkernel.substrate import (
    AgentProfile,
    AgentRegistry,
    Archetype,
    Rqt,
    Tier,
    cosine_sim,
    normalize,
    synth_embedding,
    synthesize_population,
    user_topic,
)


trained = functools.cache(canonical_model)


@pytest.fixture(scope="module")
def reg():
    return synthesize_population(50, 2, 7)


def _walk(tree, x):
    while tree.feature is not None:
        tree = tree.left if x[tree.feature] < tree.threshold else tree.right
    return tree.value


def _profile(aid, vec, ability=0.5, domain=0):
    return AgentProfile(aid, Rqt("r", "q", "t"), "n", normalize(np.asarray(vec, float)), Tier.LIGHT, (), Archetype.GENERIC, ability, domain_id=domain)


def test_recruit_threshold_above_one_is_empty(reg):
    assert recruit(synth_embedding(1, 0), reg, k=5, tau=1.0 + 1e-9) == []


def test_recruit_top3_matches_sort():
    small = synthesize_population(10, 3, 2)
    q = synth_embedding(4, 1)
    brute = sorted(small, key=lambda p: -cosine_sim(q, p.embedding))[:3]
    assert recruit(q, small, k=3, tau=-1.0) == [p.agent_id for p in brute]


def test_recruit_excludes_previous_winner(reg):
    q = synth_embedding(4, 1)
    top = recruit(q, reg, k=1, tau=-1)[0]
    again = recruit(q, reg, k=3, tau=-1, exclude={top})
    assert top not in again and len(again) == 3


def test_cfp_without_subscribers(reg):
    assert broadcast_cfp(Cfp("n", "nobody/listens", q_task=synth_embedding(1, 0)), reg) == []


def test_cfp_scope_reaches_private_channel():
    r = AgentRegistry(2)
    r.insert(_profile(1, [1, 0], domain=5))
    r.subscribe(user_topic("acme"), 1)
    bids = broadcast_cfp(Cfp("n", "domain/none", scope="acme", q_task=np.array([1.0, 0.0])), r)
    assert [b.agent_id for b in bids] == [1]
    assert bids[0].channel is Channel.PASSIVE


def test_cfp_matches_predicate_filter():
    rng = np.random.default_rng(3)
    r = AgentRegistry(8)
    for i in range(50):
        r.insert(_profile(i + 1, rng.normal(size=8), float(rng.random())))
        r.subscribe("topic/x", i + 1)
    q = rng.normal(size=8)
    policy = BidPolicy(0.5)
    got = {(b.agent_id, b.cost) for b in broadcast_cfp(Cfp("n", "topic/x", q_task=q), r, policy)}
    want = {(p.agent_id, policy.price(p.ability)) for p in r if cosine_sim(q, p.embedding) >= 0.5}
    assert got == want


def test_merge_prefers_active_and_dedups():
    a = [Bid(2, 10, Channel.ACTIVE)]
    p = [Bid(2, 10), Bid(3, 11), Bid(3, 12)]
    pool = merge_pool(a, p, exclude={9})
    assert [(b.agent_id, b.channel) for b in pool] == [(2, Channel.ACTIVE), (3, Channel.PASSIVE)]
    assert merge_pool(a, p, exclude={2, 3}) == []


def test_feature_examples():
    r = AgentRegistry(2)
    r.insert(_profile(1, [1, 0]))
    q = np.array([1.0, 0.0])
    node = TaskNode("n", "d", constraints={"budget_cap": 500})
    fv = extract_features(Bid(1, 500), node, q, {1: 100.0}, r)
    assert fv.x_cre == 1.0 and fv.x_cost == 1.0 and fv.x_const == 1.0 and fv.x_sem == pytest.approx(1.0)
    scoped = TaskNode("n", "d", constraints={"scope": "someone"})
    assert extract_features(Bid(1, 5), scoped, q, {}, r).x_const == 0.0


def test_feature_matrix_agrees_with_scalar(reg):
    q = synth_embedding(8, 1)
    bids = [Bid(int(a), 1000 + i) for i, a in enumerate(reg.ids[:12])]
    credit = {int(a): float(i * 7) for i, a in enumerate(reg.ids[:6])}
    for node in (TaskNode("n", "d", constraints={"budget_cap": 1500}), TaskNode("n", "d", constraints={"tiers": ["Light"]})):
        x = feature_matrix(bids, node, q, credit, reg)
        rows = np.array([extract_features(b, node, q, credit, reg).as_array() for b in bids])
        assert np.allclose(x, rows, atol=1e-12)


def test_feature_vector_guards():
    with pytest.raises(ValueError):
        FeatureVector(0, 0, 0, 0.5)
    with pytest.raises(ValueError):
        FeatureVector(0, 0, -1, 1)


def test_empty_model_scores_base():
    assert score(RankModel([], 0.1, 3.5), [0.1, 0.2, 0.3, 1.0]) == 3.5


def test_hand_stump():
    stump = RankModel([split(3, 0.5, leaf(-10.0), leaf(1.0))], learning_rate=1.0, base_score=0.0)
    assert score(stump, FeatureVector(0.3, 1.0, 0.2, 0.0)) == -10.0
    assert score(stump, FeatureVector(0.3, 1.0, 0.2, 1.0)) == 1.0


def test_vectorized_score_equals_tree_walk():
    model = trained()
    x = np.random.default_rng(0).uniform([-0.2, -1, 0, 0], [1, 2, 1.5, 1], size=(500, 4))
    x[:, 3] = np.round(x[:, 3])
    walk = np.array([model.base_score + model.learning_rate * sum(_walk(t, row) for t in model.trees) for row in x])
    assert np.allclose(model.score_many(x), walk, atol=1e-12)


def test_constant_labels_give_constant_model():
    samples = [([i / 10, 0, 0, 1], 4.0) for i in range(20)]
    model = train_rank_model(samples, m=5)
    assert all(t.is_leaf and t.value == 0.0 for t in model.trees)
    assert score(model, [0.77, 3, 1, 0]) == 4.0


def test_fit_single_feature():
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 1, size=(400, 4))
    y = x[:, 0]
    model = train_rank_model(list(zip(x, y)), m=50, gamma=0.1, depth=3)
    rmse = np.sqrt(np.mean((model.score_many(x) - y) ** 2))
    assert rmse < 0.05


def test_gbrt_matches_sklearn():
    from sklearn.ensemble import GradientBoostingRegressor

    rng = np.random.default_rng(4)
    x = rng.uniform(-1, 1, size=(300, 4))
    y = 3 * x[:, 0] - x[:, 1] ** 2 + 0.5 * x[:, 2] * x[:, 3]
    ours = train_rank_model(list(zip(x, y)), m=20, gamma=0.2, depth=2)
    ref = GradientBoostingRegressor(n_estimators=20, learning_rate=0.2, max_depth=2, criterion="squared_error", min_samples_leaf=1, random_state=0).fit(x, y)
    assert np.allclose(ours.score_many(x), ref.predict(x), atol=1e-8)


def test_constraint_violation_dominates():
    model = trained()
    for s, c, k in itertools.product(np.linspace(0, 1, 5), np.linspace(0, 2, 5), np.linspace(0, 1.5, 5)):
        assert score(model, [s, c, k, 1.0]) > score(model, [s, c, k, 0.0])


def test_model_text_round_trip():
    model = trained()
    assert RankModel.from_text(model.to_text()) == model


def test_training_guards():
    with pytest.raises(ValueError):
        train_rank_model([([0, 0, 0, 1], 1.0)] * 5)
    with pytest.raises(ValueError):
        train_rank_model([([0, 0, 0, 1], 1.0)] * 20, depth=4)


def test_dispatch_single_and_empty():
    r = AgentRegistry(2)
    assert dispatch(TaskNode("n", "d"), np.array([1.0, 0.0]), r, {}, trained()).no_winner
    r.insert(_profile(9, [1, 0]))
    res = dispatch(TaskNode("n", "d"), np.array([1.0, 0.0]), r, {}, trained())
    assert res.winner == 9 and res.pool_size == 1
    assert dispatch(TaskNode("n", "d"), np.array([1.0, 0.0]), r, {}, trained(), exclude={9}).no_winner


def test_dispatch_matches_exhaustive_ranking():
    rng = np.random.default_rng(2)
    r = AgentRegistry(4)
    for i in range(10):
        r.insert(_profile(i + 1, rng.normal(size=4) + np.array([3, 0, 0, 0]), float(rng.random())))
    q = np.array([1.0, 0.0, 0.0, 0.0])
    credit = {i + 1: float(rng.uniform(0, 150)) for i in range(10)}
    model = RankModel([split(0, 0.9, leaf(0.0), leaf(1.0)), split(1, 0.6, leaf(0.0), leaf(2.0))], 1.0)
    node = TaskNode("n", "d", constraints={"budget_cap": 2000})
    cfg = DispatchConfig(tau=-1.0, k=10)
    res = dispatch(node, q, r, credit, model, config=cfg)
    brute = sorted(
        ((score(model, extract_features(Bid(p.agent_id, 0), node, q, credit, r)), p.agent_id) for p in r),
        key=lambda t: (-t[0], t[1]),
    )
    assert res.pool_size == 10
    assert res.winner == brute[0][1]
    assert [a for a, _ in res.ranked] == [a for _, a in brute]


@settings(max_examples=100, deadline=None)
@given(nph.arrays(float, (6, 4), elements=st.floats(-2, 2)))
def test_score_many_rowwise(x):
    model = trained()
    many = model.score_many(x)
    for i, row in enumerate(x):
        assert many[i] == score(model, row)
