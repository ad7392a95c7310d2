"""Synthetic e-commerce knowledge graphs with planted user preferences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph, RelationDef
from .rng import substream

TYPES = ("user", "item", "brand", "category", "feature")

# (name, head type, tail type); inverse pairs are adjacent
RELATIONS = (
    ("purchase", "user", "item"),
    ("purchase_by", "item", "user"),
    ("produced_by", "item", "brand"),
    ("produces", "brand", "item"),
    ("belongs_to", "item", "category"),
    ("contains", "category", "item"),
    ("described_by", "item", "feature"),
    ("describes", "feature", "item"),
    ("mention", "user", "feature"),
    ("mentioned_by", "feature", "user"),
)


class InfeasibleParams(ValueError):
    pass


@dataclass
class SynthParams:
    users: int = 200
    items: int = 300
    brands: int = 10
    categories: int = 12
    features: int = 40
    purchases_per_user: int = 12
    categories_per_item: int = 2
    features_per_item: int = 3
    features_per_category: int = 6
    mentions_per_user: int = 3
    boost: float = 8.0


@dataclass
class GroundTruth:
    """Latent preferences and attributes, indexed by local id within each type."""

    preferred_brand: np.ndarray
    preferred_category: np.ndarray
    item_brand: np.ndarray
    item_categories: list[frozenset[int]]
    purchases: list[list[int]]

    def preferred_share(self) -> np.ndarray:
        """Per user, the fraction of purchases matching the preferred brand or category."""
        out = np.zeros(len(self.purchases))
        for u, items in enumerate(self.purchases):
            hits = sum(
                1
                for i in items
                if self.item_brand[i] == self.preferred_brand[u]
                or self.preferred_category[u] in self.item_categories[i]
            )
            out[u] = hits / len(items) if items else 0.0
        return out


def _check(p: SynthParams) -> None:
    for name in ("users", "items", "brands", "categories", "features", "purchases_per_user",
                 "categories_per_item", "features_per_item", "features_per_category"):
        if getattr(p, name) <= 0:
            raise InfeasibleParams(f"{name} must be positive")
    if p.boost <= 0:
        raise InfeasibleParams("boost must be positive")
    if p.mentions_per_user < 0:
        raise InfeasibleParams("mentions_per_user must be non-negative")
    if p.purchases_per_user > p.items:
        raise InfeasibleParams(f"{p.purchases_per_user} purchases per user but only {p.items} items exist")
    if p.categories_per_item > p.categories:
        raise InfeasibleParams(f"{p.categories_per_item} categories per item but only {p.categories} exist")
    if p.features_per_category > p.features:
        raise InfeasibleParams(f"{p.features_per_category} features per category but only {p.features} exist")
    if p.features_per_item > p.features_per_category * p.categories_per_item:
        raise InfeasibleParams("features_per_item exceeds the feature pool of an item's categories")
    if p.mentions_per_user > p.features_per_category:
        raise InfeasibleParams("mentions_per_user exceeds the preferred category's feature pool")


def gen_synth(params: SynthParams | None = None, seed: int = 0) -> tuple[Graph, GroundTruth]:
    """Generate a typed purchase graph with both directions of every relation.

    Each user prefers one brand and one category. Purchase weights are
    multiplied by ``boost`` once for a brand match and once for a category
    match. Item features come from their categories' feature pools; users
    mention features of their preferred category.
    """
    p = params or SynthParams()
    _check(p)
    rng = substream(seed, "synth")

    item_brand = rng.integers(0, p.brands, p.items)
    item_cats = [frozenset(rng.choice(p.categories, p.categories_per_item, replace=False).tolist()) for _ in range(p.items)]
    cat_pool = [rng.choice(p.features, p.features_per_category, replace=False) for _ in range(p.categories)]
    item_feats = []
    for i in range(p.items):
        pool = np.unique(np.concatenate([cat_pool[c] for c in sorted(item_cats[i])]))
        item_feats.append(sorted(rng.choice(pool, p.features_per_item, replace=False).tolist()))

    pref_brand = rng.integers(0, p.brands, p.users)
    pref_cat = rng.integers(0, p.categories, p.users)
    purchases, mentions = [], []
    for u in range(p.users):
        w = np.ones(p.items)
        w[item_brand == pref_brand[u]] *= p.boost
        in_cat = np.array([pref_cat[u] in cs for cs in item_cats])
        w[in_cat] *= p.boost
        bought = rng.choice(p.items, p.purchases_per_user, replace=False, p=w / w.sum())
        purchases.append(sorted(bought.tolist()))
        mentions.append(sorted(rng.choice(cat_pool[pref_cat[u]], p.mentions_per_user, replace=False).tolist()))

    counts = {"user": p.users, "item": p.items, "brand": p.brands, "category": p.categories, "feature": p.features}
    entities, offset = [], {}
    for t, name in enumerate(TYPES):
        offset[name] = len(entities)
        entities += [(t, f"{name}_{k}") for k in range(counts[name])]
    rels = [RelationDef(r, name, TYPES.index(h), TYPES.index(t)) for r, (name, h, t) in enumerate(RELATIONS)]
    rid = {name: r for r, (name, _, _) in enumerate(RELATIONS)}

    U, I, B, C, F = (offset[n] for n in TYPES)
    triples = []

    def both(fwd, rev, h, t):
        triples.append((h, rid[fwd], t))
        triples.append((t, rid[rev], h))

    for u, items in enumerate(purchases):
        for i in items:
            both("purchase", "purchase_by", U + u, I + i)
        for f in mentions[u]:
            both("mention", "mentioned_by", U + u, F + f)
    for i in range(p.items):
        both("produced_by", "produces", I + i, B + int(item_brand[i]))
        for c in sorted(item_cats[i]):
            both("belongs_to", "contains", I + i, C + c)
        for f in item_feats[i]:
            both("described_by", "describes", I + i, F + f)

    g = Graph(TYPES, entities, rels, triples)
    truth = GroundTruth(pref_brand, pref_cat, item_brand, item_cats, purchases)
    return g, truth
