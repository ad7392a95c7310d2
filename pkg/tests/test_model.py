import math

import numpy as np
import pytest

from nser import tensor as T
from nser.graph import enumerate_paths, path_from_ids
from nser.model import (
    Model,
    path_forward,
    path_loss,
    ranking_loss,
    relation_forward,
    step_logprob,
    total_loss,
)
from nser.synth import SynthParams, gen_synth
from nser.teacher import TeacherConfig, train_teacher
from nser.train import TrainConfig, TrainingDiverged, train

from conftest import SCHEMA, build_graph, random_graph, with_inverses
from gradcheck import loss_case, max_relative_error


def _np_phi(m, r, u, e):
    mod = m.module(r)
    h = np.maximum(np.concatenate([u, e]) @ mod.W1.data + mod.b1.data, 0.0)
    return h @ mod.W2.data + mod.b2.data


def _np_logprob(m, g, r, vec, target):
    cand = g.type_members[g.relation(r).tail_type]
    s = m.embedding.data[cand] @ vec
    s = s - s.max()
    return s[g.entity_local[target]] - np.log(np.exp(s).sum())


def test_zero_module_gives_zero(small_graph):
    m = Model.for_graph(small_graph, d=4)
    for _, p in m.store.items():
        if p.name.startswith("rel0."):
            p.data[...] = 0
    out = relation_forward(m, 0, m.vector(0), m.vector(3))
    assert np.all(out.data == 0)


def test_hand_traced_module():
    m = Model(3, 1, d=2)
    mod = m.module(0)
    mod.W1.data[...] = [[1, 0], [0, 1], [1, 0], [0, -1]]
    mod.b1.data[...] = [0.5, 0.5]
    mod.W2.data[...] = [[2, 1], [0, 3]]
    mod.b2.data[...] = [-1, 0]
    # concat = [1,0,0,1] -> hidden [1.5, -0.5] -> relu [1.5, 0] -> [3, 1.5] + b2
    out = relation_forward(m, 0, T.constant([1.0, 0.0]), T.constant([0.0, 1.0]))
    np.testing.assert_allclose(out.data, [2.0, 1.5])


@pytest.mark.parametrize("d", [2, 4, 8])
def test_module_output_dim(d, small_graph):
    m = Model.for_graph(small_graph, d=d, seed=d)
    assert relation_forward(m, 2, m.vector(0), m.vector(5)).shape == (d,)
    with pytest.raises(ValueError):
        relation_forward(m, 2, m.vector(0), T.constant(np.ones(d + 1)))
    with pytest.raises(KeyError):
        m.module(99)


def test_init_bounds():
    m = Model(500, 3, d=16, seed=5)
    b = 1 / math.sqrt(16)
    E = m.embedding.data
    assert E.min() >= -b and E.max() <= b
    # spread over the interval, not collapsed near zero
    assert E.min() < -0.9 * b and E.max() > 0.9 * b
    assert abs(E.mean()) < 0.01


def test_init_is_seeded():
    a, b, c = Model(20, 2, 8, seed=1), Model(20, 2, 8, seed=1), Model(20, 2, 8, seed=2)
    assert np.array_equal(a.embedding.data, b.embedding.data)
    assert not np.array_equal(a.embedding.data, c.embedding.data)


def test_uniform_step_logprob(small_graph):
    g = small_graph
    m = Model.for_graph(g, d=4)
    m.embedding.data[...] = 0.3
    u = g.lookup("user", "u0")
    lp = step_logprob(m, g, u, m.vector(u.global_id), g.relation_index["purchase"], g.lookup("item", "i2"))
    assert abs(lp.item() - math.log(1 / 4)) < 1e-6
    assert abs(lp.item() - (-1.386294)) < 1e-6


def test_step_logprob_type_check(small_graph):
    g = small_graph
    m = Model.for_graph(g, d=4)
    u = g.lookup("user", "u0")
    with pytest.raises(TypeError):
        step_logprob(m, g, u, m.vector(0), g.relation_index["purchase"], g.lookup("feature", "f0"))


def test_one_hop_uniform_loss_is_ln10():
    ents = [("user", "u")] + [("item", f"i{k}") for k in range(10)]
    g = build_graph(ents, SCHEMA[:2], with_inverses([("user:u", "purchase", "item:i3")]))
    m = Model.for_graph(g, d=4)
    m.embedding.data[...] = 0.0
    path = path_from_ids(g, [0, 4], [0])
    assert abs(path_loss(m, g, g.ref(0), [path]).item() - 2.302585) < 1e-6


def test_normalization_over_type_partition():
    rng = np.random.default_rng(0)
    g = random_graph(rng, 8, 30, 5, 0.3)
    m = Model.for_graph(g, d=8, seed=3)
    for _ in range(50):
        u = g.ref(int(rng.choice(g.users())))
        r = int(rng.integers(len(g.relations)))
        prev = T.constant(rng.normal(size=8) * 3)
        tail = g.relation(r).tail_type
        total = sum(math.exp(step_logprob(m, g, u, prev, r, g.ref(int(t))).item()) for t in g.type_members[tail])
        assert abs(total - 1) < 1e-6


def test_two_hop_paths_match_stepwise_oracle(small_graph):
    g = small_graph
    m = Model.for_graph(g, d=4, seed=9, dtype=np.float64)
    u = g.lookup("user", "u0")
    rels = (g.relation_index["mention"], g.relation_index["describes"])
    rows = enumerate_paths(g, u.global_id, rels, [int(i) for i in g.items()])
    assert len(rows) == 2
    paths = [path_from_ids(g, row, rels) for row in rows]

    uvec = m.embedding.data[u.global_id]
    nll = []
    for row in rows:
        e1 = _np_phi(m, rels[0], uvec, uvec)
        e2 = _np_phi(m, rels[1], uvec, e1)
        nll.append(-(_np_logprob(m, g, rels[0], e1, row[1]) + _np_logprob(m, g, rels[1], e2, row[2])))
    got = path_loss(m, g, u, paths).item()
    assert abs(got - np.mean(nll)) < 1e-10
    assert path_loss(m, g, u, paths[::-1]).item() == pytest.approx(got, abs=1e-12)


def test_teacher_forced_feeds_observed_entity(small_graph):
    g = small_graph
    m = Model.for_graph(g, d=4, seed=2, dtype=np.float64)
    u = g.lookup("user", "u0").global_id
    rels = (g.relation_index["mention"], g.relation_index["describes"])
    row = enumerate_paths(g, u, rels, [int(i) for i in g.items()])[:1]
    uvec = m.embedding.data[u]
    e2 = _np_phi(m, rels[1], uvec, m.embedding.data[row[0, 1]])
    _, leaf = path_forward(m, g, row, rels, chained=False)
    np.testing.assert_allclose(leaf.data[0], e2, atol=1e-12)


def test_path_loss_rejects_bad_input(small_graph):
    g = small_graph
    m = Model.for_graph(g, d=4)
    with pytest.raises(ValueError):
        path_loss(m, g, g.ref(0), [])


def _rank_setup():
    m = Model(3, 1, d=2)
    m.embedding.data[1] = [1.0, 0.0]  # positive
    m.embedding.data[2] = [-1.0, 0.0]  # negative
    return m


def test_ranking_loss_values():
    m = _rank_setup()
    ref = lambda k: type("R", (), {"global_id": k})()  # noqa: E731
    leaf = T.constant([1.0, 0.0])
    assert ranking_loss(m, ref(0), leaf, ref(1), [ref(2)]).item() == pytest.approx(0.119203, abs=1e-6)
    assert ranking_loss(m, ref(0), leaf, ref(1), [ref(1)]).item() == 0.5
    assert ranking_loss(m, ref(0), leaf, ref(1), []).item() == 0.0


def test_ranking_loss_decreases_with_positive_score():
    m = _rank_setup()
    ref = lambda k: type("R", (), {"global_id": k})()  # noqa: E731
    vals = []
    for x in np.linspace(-3, 3, 13):
        m.embedding.data[1] = [x, 0.0]
        v = ranking_loss(m, ref(0), T.constant([1.0, 0.0]), ref(1), [ref(2)]).item()
        assert 0 < v < 1
        vals.append(v)
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_total_loss_combines_parts():
    g = random_graph(np.random.default_rng(1), 5, 8, 3, 0.4)
    m, _ = loss_case(g, 1)
    u = g.ref(int(g.users()[0]))
    items = [int(i) for i in g.items()]
    rels = (0,)
    rows = enumerate_paths(g, u.global_id, rels, items)
    paths = [path_from_ids(g, r, rels) for r in rows]
    negs = [[g.ref(items[0]), g.ref(items[-1])] for _ in paths]
    zero = total_loss(m, g, u, paths, negs, 0.0)
    assert zero.total.item() == zero.path.item()
    assert zero.total.data.tobytes() == zero.path.data.tobytes()
    ten = total_loss(m, g, u, paths, negs, 10.0)
    assert ten.total.item() == pytest.approx(ten.path.item() + 10 * ten.rank.item(), rel=1e-12)
    assert ten.rank.item() > 0


@pytest.mark.parametrize("seed", range(5))
def test_loss_gradients_match_finite_differences(seed):
    g = random_graph(np.random.default_rng(seed), 5, 8, 3, 0.4)
    m, builders = loss_case(g, seed)
    rng = np.random.default_rng(100 + seed)
    params = [p for _, p in m.store.items()]
    for name, build in builders.items():
        assert max_relative_error(build, params, rng) < 1e-3, name


def _small_synth():
    return gen_synth(SynthParams(users=30, items=40, brands=4, categories=5, features=12, purchases_per_user=6), seed=1)


def test_zero_epochs_returns_init():
    g, _ = _small_synth()
    m, log = train(g, None, TrainConfig(epochs=0, dim=8, seed=4))
    fresh = Model.for_graph(g, d=8, seed=4)
    assert log.epochs == []
    for (n, a), (_, b) in zip(m.store.items(), fresh.store.items()):
        assert np.array_equal(a.data, b.data), n


def test_training_reduces_path_loss():
    g, _ = gen_synth(seed=0)
    t, _ = train_teacher(g, TeacherConfig(seed=0))
    _, log = train(g, t, TrainConfig(epochs=30, seed=0))
    first, last = log.epochs[0], log.epochs[-1]
    assert last.mean_path_loss < first.mean_path_loss
    assert all(len(r.line().split(", ")) == 4 for r in log.epochs)


def test_training_is_deterministic(tmp_path):
    g, _ = _small_synth()
    t, _ = train_teacher(g, TeacherConfig(seed=1, epochs=3))
    cfg = TrainConfig(epochs=3, dim=8, seed=7, max_len=2)
    for k in range(2):
        m, _ = train(g, t, cfg)
        m.save(tmp_path / f"m{k}.ckpt")
    assert (tmp_path / "m0.ckpt").read_bytes() == (tmp_path / "m1.ckpt").read_bytes()
    back, meta = Model.load(tmp_path / "m0.ckpt")
    assert back.d == 8 and meta["d"] == "8"
    assert np.array_equal(back.embedding.data, m.embedding.data)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_epoch():
    g, _ = _small_synth()
    with pytest.raises(TrainingDiverged) as exc:
        train(g, None, TrainConfig(epochs=5, dim=8, lr=1e6, lam=0, max_len=1))
    assert exc.value.epoch >= 0


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lam=-1)
    with pytest.raises(ValueError):
        TrainConfig(dim=1)
