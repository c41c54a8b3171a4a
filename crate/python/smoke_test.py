"""End-to-end smoke test of the nnmf_py extension module.

Build and install first:

    pip install --no-build-isolation -e crates/py
"""

import math

import nnmf_py as nn


def main():
    data = nn.InteractionMatrix.synthetic(120, 60, 1500, exponent=1.0, seed=3)
    assert (data.n_users, data.n_items, data.nnz) == (120, 60, 1500)
    split = data.split((0.6, 0.2, 0.2), seed=1)
    train, test = split.train, split.test
    assert train.nnz + split.validation.nnz + test.nnz == data.nnz

    sim = nn.SimilarityMatrix.cosine(train, "item", k=5, shrink=2.0)
    assert sim.get(0, 0) == 1.0 and len(sim.row(0)) <= 6

    base = dict(f=8, epochs_max=15, eval_every=5, init_seed=1, sample_seed=2)
    mf = nn.train(split, nn.ModelConfig("bpr", False, **base))
    ident = nn.train_with(
        split,
        nn.ModelConfig("bpr", False, **base),
        nn.SimilarityMatrix.identity(120),
        nn.SimilarityMatrix.identity(60),
    )
    assert mf.item_factors() == ident.item_factors(), "identity similarities must reproduce MF"

    nnmf = nn.train(split, nn.ModelConfig("bpr", True, user_k=5, item_k=5, **base))
    recs = nnmf.recommend(train, 10)
    assert len(recs) == 120
    for u, items in enumerate(recs):
        assert not set(items) & set(train.items_of(u))
    for metric in (nn.map_at_k(recs, test, 10), nn.recall_at_k(recs, test, 10)):
        assert 0.0 <= metric <= 1.0
    tail = nn.longtail(train, test)
    print("MAP@10", round(nn.map_at_k(recs, test, 10), 4), "long-tail", round(nn.map_at_k(recs, tail, 10), 4))

    knn = nn.Baseline.item_knn(train, k=10)
    svd = nn.Baseline.pure_svd(train, f=5, seed=0)
    for model in (knn, svd):
        assert math.isfinite(model.score(0, 0))
        assert len(model.recommend(train, 5)[0]) == 5

    seeds = nn.run_seeds(split, nn.ModelConfig("funk", True, user_k=5, item_k=5, **base), [1, 2, 3])
    overall, per_user = nn.recommendation_stability(seeds, train, 10)
    assert 0.0 <= overall <= 1.0 and len(per_user) == 120
    item_overall, _ = nn.representation_stability(seeds, "item", 10)
    same, _ = nn.recommendation_stability([seeds[0], seeds[0]], train, 10)
    assert same == 1.0
    assert nn.jaccard([1, 2, 3], [2, 3, 4]) == 0.5
    bins = nn.popularity_bins(train)
    assert len(bins) == 60

    try:
        nn.ModelConfig("bpr", True, user_k=1, item_k=1)
    except ValueError:
        pass
    else:
        raise AssertionError("NNMF with fewer than 2 neighbors must be rejected")

    print("stability@10", round(overall, 4), "item representations@10", round(item_overall, 4))
    print("smoke test passed")


if __name__ == "__main__":
    main()
