"""Central finite-difference checks for the loss functions (float64 models)."""

from __future__ import annotations

import numpy as np

from nser import tensor as T
from nser.graph import enumerate_metapaths, enumerate_paths, path_from_ids
from nser.model import Model, path_forward, path_loss, ranking_loss, total_loss


def max_relative_error(build, params, rng, n_coords=24, n_zero=4, h=1e-6, floor=1e-7):
    """Largest |numeric - analytic| / max(|numeric|, |analytic|, floor) over sampled coordinates.

    Coordinates with a non-zero analytic gradient are preferred; a few
    zero-gradient ones are mixed in to catch missing contributions.
    """
    for p in params:
        p.zero_grad()
    T.backward(build())
    worst = 0.0
    for p in params:
        flat, grad = p.data.reshape(-1), p.grad.reshape(-1).copy()
        nz = np.flatnonzero(grad)
        z = np.flatnonzero(grad == 0)
        picks = list(rng.choice(nz, min(n_coords, len(nz)), replace=False)) if len(nz) else []
        picks += list(rng.choice(z, min(n_zero, len(z)), replace=False)) if len(z) else []
        for k in picks:
            old = flat[k]
            flat[k] = old + h
            fp = build().item()
            flat[k] = old - h
            fm = build().item()
            flat[k] = old
            num = (fp - fm) / (2 * h)
            err = abs(num - grad[k]) / max(abs(num), abs(grad[k]), floor)
            worst = max(worst, err)
    return worst


def loss_case(g, seed, d=8):
    """A float64 model plus one (user, metapath) path set with negatives and three loss builders."""
    rng = np.random.default_rng(seed)
    m = Model.for_graph(g, d=d, seed=seed, dtype=np.float64)
    # perturb biases so ReLU units are not all at the same kink
    for _, p in m.store.items():
        p.data[...] += rng.normal(0, 0.1, p.data.shape)
    mps = enumerate_metapaths(g, 3)
    items = [int(i) for i in g.items()]
    for _ in range(100):
        u = int(rng.choice(g.users()))
        mp = mps[rng.integers(len(mps))]
        arr = enumerate_paths(g, u, mp.relations, items)
        if len(arr):
            break
    arr = arr[:3]
    paths = [path_from_ids(g, row, mp.relations) for row in arr]
    uref = g.ref(u)
    negs = [[g.ref(int(x)) for x in rng.choice(items, 3, replace=False)] for _ in paths]
    lam = float(rng.uniform(0.5, 20))

    def pl():
        return path_loss(m, g, uref, paths)

    def rl():
        _, out = path_forward(m, g, arr[:1], mp.relations)
        return ranking_loss(m, uref, T.reshape(out, (m.d,)), paths[0].end, negs[0])

    def tl():
        return total_loss(m, g, uref, paths, negs, lam).total

    return m, {"path": pl, "rank": rl, "total": tl}
