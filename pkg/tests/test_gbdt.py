import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from labelerhot import gbdt
from labelerhot.evaluation import average_precision
from labelerhot.gbdt import (
    Ensemble,
    ModelFormatError,
    Tree,
    TrainConfig,
    best_split,
    grow_tree,
    load_model,
    logistic_grad_hess,
    save_model,
    train,
)
from oracles import best_split_bruteforce, split_gain


def test_grad_hess_at_zero():
    g, h = logistic_grad_hess(np.zeros(2), np.array([1, 0]))
    np.testing.assert_array_equal(g, [-0.5, 0.5])
    np.testing.assert_array_equal(h, [0.25, 0.25])


def test_grad_hess_saturation():
    g, h = logistic_grad_hess(np.array([40.0, 800.0]), np.array([1, 1]))
    assert abs(g[0]) < 1e-15 and g[1] == 0.0
    assert 0 <= h[1] < 1e-300
    g, h = logistic_grad_hess(np.linspace(-30, 30, 101), np.ones(101))
    assert np.all((g > -1) & (g <= 0)) and np.all((h > 0) & (h <= 0.25))


def test_best_split_example():
    g, h = logistic_grad_hess(np.zeros(4), np.array([0, 0, 1, 1]))
    s = best_split([1, 2, 3, 4], g, h, reg_lambda=1.0, gamma=0.0)
    assert s.threshold == 2.5
    assert s.gain == pytest.approx(0.5 * (1 / 1.5 + 1 / 1.5), abs=1e-15)
    assert s.gain == pytest.approx(0.6667, abs=1e-4)


def test_best_split_none_cases():
    g, h = logistic_grad_hess(np.zeros(4), np.ones(4))
    assert best_split([1, 2, 3, 4], g, h) is None
    g, h = logistic_grad_hess(np.zeros(4), np.array([0, 1, 0, 1]))
    assert best_split([7, 7, 7, 7], g, h) is None
    assert best_split([1], g[:1], h[:1]) is None


def test_gamma_suppresses_split():
    g, h = logistic_grad_hess(np.zeros(4), np.array([0, 0, 1, 1]))
    assert best_split([1, 2, 3, 4], g, h, gamma=0.7) is None


def test_ties_go_to_lowest_feature_then_threshold():
    X = np.array([[0, 0], [1, 1], [2, 2], [3, 3.0]])
    g, h = logistic_grad_hess(np.zeros(4), np.array([0, 1, 0, 1]))
    tree = grow_tree(X, g, h, TrainConfig(max_depth=1))
    assert tree.feature[0] == 0
    assert (0, tree.threshold[0]) == best_split_bruteforce(X, g, h)


def test_depth_zero_single_leaf():
    g = np.array([0.3, -0.2, 0.5])
    h = np.array([0.2, 0.1, 0.25])
    tree = grow_tree(np.zeros((3, 1)), g, h, TrainConfig(max_depth=0, learning_rate=0.3))
    assert tree.n_nodes == 1
    assert tree.value[0] == pytest.approx(-0.3 * 0.6 / (0.55 + 1.0), rel=1e-15)


def test_separable_depth_one_matches_oracle():
    x = np.array([0.1, 0.4, 0.35, 0.8, 0.9, 0.75])
    y = np.array([0, 0, 0, 1, 1, 1])
    g, h = logistic_grad_hess(np.zeros(6), y)
    tree = grow_tree(x.reshape(-1, 1), g, h, TrainConfig(max_depth=1))
    assert (tree.feature[0], tree.threshold[0]) == best_split_bruteforce(x.reshape(-1, 1), g, h)
    assert tree.threshold[0] == pytest.approx(0.575)
    assert tree.value[tree.left[0]] < 0 < tree.value[tree.right[0]]


def test_colsample_without_informative_feature():
    rng = np.random.default_rng(0)
    y = np.array([0, 1] * 10)
    X = np.column_stack([y.astype(float), np.zeros(20)])
    g, h = logistic_grad_hess(np.zeros(20), y)
    tree = grow_tree(X, g, h, TrainConfig(max_depth=3), rng, cols=np.array([1]))
    assert tree.n_nodes == 1


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(2, 60),
    d=st.integers(1, 5),
    seed=st.integers(0, 2**31 - 1),
    discrete=st.booleans(),
    lam=st.sampled_from([0.0, 1.0, 5.0]),
)
def test_depth_one_split_matches_bruteforce(n, d, seed, discrete, lam):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 4, size=(n, d)).astype(float) if discrete else rng.normal(size=(n, d))
    y = rng.integers(0, 2, size=n)
    g, h = logistic_grad_hess(rng.normal(size=n), y)
    tree = grow_tree(X, g, h, TrainConfig(max_depth=1, reg_lambda=lam))
    expect = best_split_bruteforce(X, g, h, lam=lam)
    got = None if tree.feature[0] < 0 else (int(tree.feature[0]), float(tree.threshold[0]))
    assert got == expect


def test_leaf_weights_finite_with_zero_lambda():
    y = np.array([1, 1, 1, 0])
    X = np.arange(4.0).reshape(-1, 1)
    ens = train(X, y, TrainConfig(n_trees=20, max_depth=2, reg_lambda=0.0, learning_rate=1.0))
    assert all(np.all(np.isfinite(t.value)) for t in ens.trees)


def test_separable_toy_set():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(80, 3))
    y = (X[:, 0] + 0.5 * X[:, 1] > 0).astype(int)
    ens = train(X, y, TrainConfig(n_trees=100, learning_rate=0.1, max_depth=3), track_loss=True)
    hist = np.array(ens.history)
    assert len(hist) == 101 and np.all(np.diff(hist) <= 1e-12)
    assert average_precision(ens.predict_proba(X), y) == 1.0


def test_single_positive_example():
    margins = [
        train(np.zeros((1, 1)), np.array([1]), TrainConfig(n_trees=n, learning_rate=1.0)).predict_margin(
            np.zeros((1, 1))
        )[0]
        for n in (1, 10, 100, 1000)
    ]
    assert np.all(np.diff(margins) > 0.9)
    assert gbdt.sigmoid(margins[-1]) > 0.998


def test_same_seed_byte_identical():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(200, 6))
    y = rng.integers(0, 2, 200)
    cfg = TrainConfig(n_trees=30, max_depth=4, colsample_per_tree=0.5, rowsample_per_tree=0.5, seed=9)
    assert train(X, y, cfg).dumps() == train(X, y, cfg).dumps()
    other = TrainConfig(**{**cfg.to_dict(), "seed": 10})
    assert train(X, y, other).dumps() != train(X, y, cfg).dumps()


def test_subsample_sizes_round_half_up():
    rng = np.random.default_rng(0)
    assert len(gbdt._subsample(rng, 59, 0.2)) == 12
    assert len(gbdt._subsample(rng, 65, 0.1)) == 7
    assert len(gbdt._subsample(rng, 3, 0.1)) == 1
    assert len(gbdt._subsample(rng, 10, 1.0)) == 10


def test_training_input_validation():
    with pytest.raises(ValueError):
        train(np.zeros((0, 2)), np.zeros(0), TrainConfig())
    with pytest.raises(ValueError):
        train(np.zeros((2, 2)), np.array([0, 2]), TrainConfig())
    with pytest.raises(ValueError):
        train(np.array([[np.nan], [0.0]]), np.array([0, 1]), TrainConfig())
    for bad in ({"learning_rate": 0}, {"colsample_per_tree": 1.5}, {"base_score": 1.0}, {"reg_lambda": -1}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_empty_ensemble_predicts_base_score():
    ens = Ensemble([], 0.0, ["a", "b"], TrainConfig(n_trees=0))
    np.testing.assert_array_equal(ens.predict_proba(np.ones((3, 2))), 0.5)


def test_single_leaf_ensemble():
    leaf = Tree(*(np.array(v) for v in ([-1], [0.0], [-1], [-1], [0.7], [True])))
    ens = Ensemble([leaf], 0.0, ["a"], TrainConfig())
    assert ens.predict_proba(np.zeros((1, 1)))[0] == pytest.approx(1 / (1 + math.exp(-0.7)), rel=1e-15)


@pytest.fixture(scope="module")
def fitted():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(300, 8))
    y = (X[:, 0] * X[:, 1] + 0.3 * rng.normal(size=300) > 0).astype(int)
    cfg = TrainConfig(n_trees=40, max_depth=5, learning_rate=0.2, colsample_per_tree=0.5, seed=1)
    return X, y, train(X, y, cfg, scheme="v2", K=3, encoded_length=6)


def test_batch_equals_per_example(fitted):
    X, _, ens = fitted
    batch = ens.predict_margin(X[:50])
    single = np.array([ens.predict_margin(x)[0] for x in X[:50]])
    assert batch.tobytes() == single.tobytes()


def test_padded_layout_equals_pointer_walk(fitted):
    X, _, ens = fitted
    ref = np.zeros(len(X)) + ens.base_margin
    for t in ens.trees:
        ref += gbdt._tree_margin(t, X)
    np.testing.assert_allclose(ens.predict_margin(X), ref, rtol=0, atol=1e-12)
    out = np.empty(len(X))
    f, thr, left, right, val, off, _, _ = ens._pack()
    gbdt._predict_margin(X, f, thr, left, right, val, off, ens.base_margin, out)
    assert out.tobytes() == ens.predict_margin(X).tobytes()


def test_variants_equal_separate_predictions(fitted):
    X, _, ens = fitted
    S, R = X[:, :5], np.array([[0, 0, 0], [1, 0, 1], [-2, 3, 0.5]])
    V = ens.predict_margin_variants(S, R)
    for v, r in enumerate(R):
        full = np.hstack([S, np.broadcast_to(r, (len(S), 3))])
        assert V[v].tobytes() == ens.predict_margin(full).tobytes()


def test_prediction_dimension_and_finiteness(fitted):
    X, _, ens = fitted
    with pytest.raises(ValueError):
        ens.predict_margin(X[:, :7])
    bad = X[:2].copy()
    bad[0, 0] = np.inf
    with pytest.raises(ValueError):
        ens.predict_margin(bad)


def test_model_roundtrip(fitted, tmp_path):
    X, _, ens = fitted
    path = save_model(ens, tmp_path / "m.json")
    back = load_model(path)
    assert back.predict_margin(X).tobytes() == ens.predict_margin(X).tobytes()
    assert back.dumps() == ens.dumps()
    d = json.loads(path.read_text())
    assert d["encoded_length"] == 6 and d["K"] == 3 and d["scheme"] == "v2"
    assert {"version", "config", "seed", "layout", "base_margin", "trees"} <= set(d)


def test_corrupted_models(fitted, tmp_path):
    _, _, ens = fitted
    d = ens.to_dict()
    with pytest.raises(ModelFormatError, match="version"):
        Ensemble.from_dict({**d, "version": 99})
    with pytest.raises(ModelFormatError):
        Ensemble.from_dict({k: v for k, v in d.items() if k != "trees"})
    bad = json.loads(json.dumps(d))
    bad["trees"][0]["left"][0] = 10_000
    with pytest.raises(ModelFormatError):
        Ensemble.from_dict(bad)
    (tmp_path / "x.json").write_text("{not json")
    with pytest.raises(ModelFormatError):
        load_model(tmp_path / "x.json")


def test_monotone_transform_invariance():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(120, 3))
    y = (X[:, 0] + X[:, 2] > 0.2).astype(int)
    cfg = TrainConfig(n_trees=15, max_depth=3, learning_rate=0.3)
    a = train(X, y, cfg)
    Z = X.copy()
    Z[:, 0] = np.exp(2 * Z[:, 0])
    b = train(Z, y, cfg)
    np.testing.assert_allclose(a.predict_margin(X), b.predict_margin(Z), rtol=0, atol=1e-12)


def test_oracle_gain_formula():
    assert split_gain(1.0, 0.5, -1.0, 0.5, 1.0, 0.0) == pytest.approx(2 / 3)
