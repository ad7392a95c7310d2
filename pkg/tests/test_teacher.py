import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nser.graph import EntityRef
from nser.params import CheckpointError
from nser.synth import gen_synth
from nser.teacher import (
    TeacherConfig,
    TeacherModel,
    negative_set,
    score,
    select_negatives,
    teacher_rank,
    train_teacher,
)


def item(k):
    return EntityRef(1, k, 100 + k)


USER = EntityRef(0, 0, 0)


def teacher_with_scores(logits):
    """One user with factor [1] and items whose single factor is the given logit."""
    return TeacherModel(np.ones((1, 1)), np.asarray(logits, dtype=np.float64).reshape(-1, 1))


@pytest.fixture(scope="module")
def planted():
    g, _ = gen_synth(seed=0)
    return g


def test_zero_factors_give_half():
    t = TeacherModel(np.zeros((2, 4)), np.zeros((3, 4)))
    assert score(t, USER, item(2)) == 0.5


def test_unit_factors():
    t = TeacherModel(np.ones((1, 2)), np.ones((1, 2)))
    assert score(t, USER, item(0)) == pytest.approx(0.880797, abs=1e-6)


def test_score_symmetric_in_factors():
    rng = np.random.default_rng(0)
    p, q = rng.normal(size=(1, 5)), rng.normal(size=(1, 5))
    assert score(TeacherModel(p, q), USER, item(0)) == score(TeacherModel(q, p), USER, item(0))


def test_unknown_ids():
    t = TeacherModel(np.zeros((1, 2)), np.zeros((2, 2)))
    with pytest.raises(KeyError):
        score(t, USER, item(5))
    with pytest.raises(KeyError):
        score(t, item(0), item(0))


def test_negative_set_direct_filter():
    # sigmoid is monotone, so logits order the scores: a > b > c
    t = teacher_with_scores([2.2, -0.4, -1.4])
    a, b, c = item(0), item(1), item(2)
    assert negative_set(t, USER, a, [a, b, c], cap=10) == [b, c]


def test_lowest_candidate_has_no_negatives():
    t = teacher_with_scores([2.2, -0.4, -1.4])
    assert negative_set(t, USER, item(2), [item(0), item(1), item(2)], cap=10) == []


def test_ties_are_excluded():
    t = teacher_with_scores([0.5, 0.5, 0.1])
    assert negative_set(t, USER, item(0), [item(1), item(2)], cap=10) == [item(2)]


@settings(max_examples=200, deadline=None)
@given(
    logits=st.lists(st.floats(-4, 4), min_size=1, max_size=30),
    pos=st.integers(0, 29),
    cap=st.integers(0, 8),
    seed=st.integers(0, 1000),
)
def test_negatives_are_dominated_subset(logits, pos, cap, seed):
    t = teacher_with_scores(logits)
    cands = [item(k) for k in range(len(logits))]
    i = cands[pos % len(cands)]
    got = negative_set(t, USER, i, cands, cap, seed)
    # oracle: full scan of the pool
    qualifying = [c for c in cands if c != i and score(t, USER, c) < score(t, USER, i)]
    assert len(got) == min(cap, len(qualifying))
    assert set(got) <= set(qualifying)
    assert i not in got
    assert got == sorted(got, key=lambda e: e.global_id)
    assert negative_set(t, USER, i, cands, cap, seed) == got


def test_select_negatives_is_uniform_over_qualifiers():
    rng = np.random.default_rng(0)
    ids = np.arange(10)
    scores = np.linspace(0, 0.9, 10)
    counts = np.zeros(10)
    for _ in range(4000):
        for x in select_negatives(0.55, ids, scores, exclude=-1, cap=2, rng=rng):
            counts[x] += 1
    assert counts[6:].sum() == 0
    # 6 qualifiers, 2 picks each time: expected 4000 * 2 / 6 per qualifier
    assert np.all(np.abs(counts[:6] - 4000 * 2 / 6) < 100)


def test_untrained_teacher_is_near_half(planted):
    t, hist = train_teacher(planted, TeacherConfig(epochs=0))
    assert hist == []
    assert np.all(np.abs(t.user_scores(0) - 0.5) < 0.05)
    t0, _ = train_teacher(planted, TeacherConfig(epochs=0, init_scale=0.0))
    assert np.all(t0.user_scores(3) == 0.5)


def test_training_separates_observed_pairs(planted):
    g = planted
    t, hist = train_teacher(g, TeacherConfig(seed=0))
    assert hist[-1] < hist[0]
    inter = g.interactions("purchase")
    obs, other = [], []
    rng = np.random.default_rng(1)
    for u, items in inter.items():
        s = t.user_scores(int(g.entity_local[u]))
        own = set(items)
        obs += [s[g.entity_local[i]] for i in items]
        pool = [int(i) for i in g.items() if int(i) not in own]
        other += [s[g.entity_local[i]] for i in rng.choice(pool, len(items), replace=False)]
    assert np.mean(obs) > np.mean(other) + 0.1
    assert all(0 < x < 1 for x in obs + other)


def test_training_is_deterministic(planted, tmp_path):
    a, _ = train_teacher(planted, TeacherConfig(seed=3, epochs=3))
    b, _ = train_teacher(planted, TeacherConfig(seed=3, epochs=3))
    a.save(tmp_path / "a.ckpt")
    b.save(tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    back = TeacherModel.load(tmp_path / "a.ckpt")
    assert np.array_equal(back.item_factors, a.item_factors)
    with pytest.raises(CheckpointError):
        from nser.model import Model

        Model.load(tmp_path / "a.ckpt")


def test_teacher_rank_excludes_and_orders(planted):
    g = planted
    t, _ = train_teacher(g, TeacherConfig(seed=0, epochs=2))
    u = int(g.users()[0])
    seen = set(g.interactions("purchase")[u])
    ranked = teacher_rank(t, g, u, 10, seen)
    assert len(ranked) == 10
    assert not seen & {i for i, _ in ranked}
    s = [x for _, x in ranked]
    assert s == sorted(s, reverse=True)
