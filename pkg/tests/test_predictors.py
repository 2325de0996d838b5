import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ttshield.nn import flatten_params
from ttshield.predictors import (
    LogisticModel,
    LrHyper,
    MlpHyper,
    TrainingMechanism,
    eval_metrics,
    load_model,
    lr_logit,
    lr_objective,
    lr_predict,
    lr_train,
    mlp_predict,
    mlp_raw_flatten,
    mlp_train,
    model_from_json,
    model_param_vector,
    model_to_json,
    predict_scores,
    save_model,
    train_mechanism,
    youden_threshold,
)
from ttshield.tt import Standardizer


def toy_data(n=120, n_feat=5, seed=0, w=None):
    rng = np.random.default_rng(seed)
    X = rng.normal(loc=3.0, scale=2.0, size=(n, n_feat))
    if w is None:
        w = np.zeros(n_feat)
        w[0], w[1] = 2.0, -1.5
    z = (X - X.mean(0)) @ w
    y = (z + rng.normal(scale=0.3, size=n) > 0).astype(float)
    if y.sum() < 2:
        y[:2] = 1.0
    if (1 - y).sum() < 2:
        y[-2:] = 0.0
    return X, y


def auc_pairwise(y, scores):
    """Brute-force rank AUC: P(score_pos > score_neg) + 0.5 P(tie)."""
    pos = scores[y == 1]
    neg = scores[y == 0]
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


def test_lr_separable_toy_is_perfect():
    rng = np.random.default_rng(1)
    x = np.concatenate([rng.uniform(-2, -1, 40), rng.uniform(1, 2, 40)])
    X = x.reshape(-1, 1)
    y = (x > 0).astype(float)
    model = lr_train(X, y, LrHyper(l1_ratio=0.0, C=10.0), seed=0)
    acc = ((lr_predict(model, X) > 0.5) == y).mean()
    assert acc == 1.0


def test_lr_single_class_rejected():
    X = np.random.default_rng(0).normal(size=(10, 3))
    with pytest.raises(ValueError):
        lr_train(X, np.ones(10), LrHyper(class_weight=None))


def test_lr_identity_standardizer_means_no_rescale_shift():
    X, y = toy_data(seed=2)
    Xs = Standardizer.fit(X).transform(X)
    model = lr_train(Xs, y, LrHyper(), seed=3)
    # data already standardized: refitting mu~0, sigma~1, so rescaled
    # parameters only pick up the tiny residual moments
    assert np.allclose(model.standardizer.mu, 0.0, atol=1e-12)
    assert np.allclose(model.standardizer.sigma, 1.0, atol=1e-12)


def test_lr_raw_vs_standardized_paths_agree():
    X, y = toy_data(seed=4)
    model = lr_train(X, y, LrHyper(), seed=5)
    std = model.standardizer
    w_std = model.w * std.sigma
    b_std = model.b + float(np.sum(w_std * std.mu / std.sigma))
    for x in X[:50]:
        raw = lr_logit(model, x)
        via_std = float(std.transform(x[None, :])[0] @ w_std + b_std)
        assert raw == pytest.approx(via_std, abs=1e-12 * max(1, abs(raw)))


def test_lr_logit_hand_values():
    std = Standardizer.identity(3)
    model = LogisticModel(w=np.array([2.0, -1.0, 0.0]), b=0.5, standardizer=std)
    assert lr_logit(model, np.array([1.0, 1.0, 0.0])) == pytest.approx(1.5)
    zero = LogisticModel(w=np.zeros(3), b=0.0, standardizer=std)
    assert lr_predict(zero, np.random.default_rng(0).normal(size=(20, 3))).tolist() == [0.5] * 20


def test_lr_objective_duplication_equals_double_weight():
    X, y = toy_data(n=40, seed=6)
    rng = np.random.default_rng(7)
    w = rng.normal(size=X.shape[1])
    b = 0.3
    hyper = LrHyper(class_weight=None)
    minority = y == (1.0 if y.sum() < y.size / 2 else 0.0)
    X_dup = np.concatenate([X, X[minority]])
    y_dup = np.concatenate([y, y[minority]])
    weights = np.where(minority, 2.0, 1.0)
    a = lr_objective(w, b, X_dup, y_dup, hyper)
    c = lr_objective(w, b, X, y, hyper, sample_weight=weights)
    assert a == pytest.approx(c, abs=1e-10)


def test_lr_trained_params_near_objective_minimum():
    X, y = toy_data(n=200, seed=8)
    hyper = LrHyper(l1_ratio=0.5, C=1.0, max_iter=2000)
    model = lr_train(X, y, hyper, seed=9)
    std = model.standardizer
    w_std = model.w * std.sigma
    b_std = model.b + float(np.sum(w_std * std.mu / std.sigma))
    Xs = std.transform(X)
    base = lr_objective(w_std, b_std, Xs, y, hyper)
    rng = np.random.default_rng(10)
    for _ in range(20):
        dw = rng.normal(scale=0.05, size=w_std.size)
        db = rng.normal(scale=0.05)
        assert lr_objective(w_std + dw, b_std + db, Xs, y, hyper) > base - 1e-6


def test_mlp_learns_xor():
    rng = np.random.default_rng(11)
    X = rng.uniform(-1, 1, size=(400, 2))
    y = ((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(float)
    model = mlp_train(X, y, MlpHyper(hidden=(16, 8), epochs=200, lr=1e-2), seed=12)
    m = eval_metrics(model, X, y)
    assert m["balanced_accuracy"] >= 0.95


def test_mlp_zero_epochs_is_initialization():
    from ttshield.nn import init_params

    X, y = toy_data(seed=13)
    model = mlp_train(X, y, MlpHyper(epochs=0), seed=14)
    ref = init_params(model.params.sizes, np.random.default_rng(14))
    assert all(np.array_equal(a, b) for a, b in zip(model.params.weights, ref.weights))
    assert all(np.all(b == 0) for b in model.params.biases)
    p = mlp_predict(model, X)
    assert abs(p.mean() - 0.5) < 0.3 and np.all((p > 0.005) & (p < 0.995))


def test_mlp_seed_determinism():
    X, y = toy_data(seed=15)
    h = MlpHyper(hidden=(6,), epochs=3)
    a = mlp_train(X, y, h, seed=16)
    b = mlp_train(X, y, h, seed=16)
    assert np.array_equal(flatten_params(a.params), flatten_params(b.params))


def test_mlp_flatten_length_818_for_reference_shape():
    X, y = toy_data(n=80, n_feat=21, seed=17)
    model = mlp_train(X, y, MlpHyper(hidden=(19, 19), epochs=1), seed=18)
    assert mlp_raw_flatten(model).size == 818
    assert flatten_params(model.params).size == 21 * 19 + 19 + 19 * 19 + 19 + 19 + 1


def test_mlp_raw_flatten_operates_on_raw_inputs():
    X, y = toy_data(seed=19)
    model = mlp_train(X, y, MlpHyper(hidden=(4,), epochs=5), seed=20)
    from ttshield.nn import unflatten_params, predict_probs

    raw = unflatten_params(mlp_raw_flatten(model), model.params.sizes)
    direct = predict_probs(raw, X).ravel()
    assert np.allclose(direct, mlp_predict(model, X), atol=1e-12)


def test_mechanism_vanilla_reproducible():
    X, y = toy_data(seed=21)
    a = train_mechanism("lr", LrHyper(), X, y, TrainingMechanism("vanilla"), seed=22)
    b = train_mechanism("lr", LrHyper(), X, y, TrainingMechanism("vanilla"), seed=22)
    assert np.array_equal(a.w, b.w) and a.b == b.b


def test_mechanism_averaged_is_mean_of_fold_models():
    X, y = toy_data(n=60, seed=23)
    mech = TrainingMechanism("averaged", J=1, K=2)
    model = train_mechanism("lr", LrHyper(), X, y, mech, seed=24)
    # replicate the internal fan-out
    from ttshield.predictors import _stratified_folds
    from ttshield.seeds import child_seed

    folds = _stratified_folds(y, 2, child_seed(24, "rep", 0) % (2**31))
    vecs = []
    for k, test in enumerate(folds):
        mask = np.ones(y.size, dtype=bool)
        mask[test] = False
        m = lr_train(X[mask], y[mask], LrHyper(), child_seed(24, "rep", 0, "fold", k))
        vecs.append(model_param_vector(m))
    mean = np.mean(vecs, axis=0)
    assert np.allclose(model_param_vector(model), mean, atol=0)


def test_mechanism_averaged_reduces_parameter_variance():
    X, y = toy_data(n=150, seed=25)
    van, avg = [], []
    for r in range(12):
        van.append(model_param_vector(
            train_mechanism("lr", LrHyper(), X, y, TrainingMechanism("vanilla"), seed=100 + r)
        ))
        avg.append(model_param_vector(
            train_mechanism("lr", LrHyper(), X, y, TrainingMechanism("averaged", J=4, K=3), seed=100 + r)
        ))
    v_van = np.var(np.array(van), axis=0).mean()
    v_avg = np.var(np.array(avg), axis=0).mean()
    assert v_avg < v_van


def test_mechanism_rejects_bad_kind_and_folds():
    with pytest.raises(ValueError):
        TrainingMechanism("bootstrap")
    with pytest.raises(ValueError):
        TrainingMechanism("averaged", J=0, K=3)
    with pytest.raises(ValueError):
        TrainingMechanism("averaged", J=1, K=1)


def test_metrics_perfect_and_constant_scorers():
    y = np.array([0, 0, 1, 1, 0, 1], dtype=float)
    X = y.reshape(-1, 1)
    perfect = eval_metrics(lambda X: X[:, 0], X, y)
    assert perfect == {"balanced_accuracy": 1.0, "auc": 1.0}
    const = eval_metrics(lambda X: np.full(len(X), 0.7), X, y)
    assert const["auc"] == 0.5


def test_auc_matches_pairwise_brute_force():
    rng = np.random.default_rng(26)
    y = rng.integers(0, 2, size=1000).astype(float)
    y[:2], y[-2:] = 0, 1
    scores = y + rng.uniform(-0.4, 0.4, size=1000)
    m = eval_metrics(lambda X: scores, np.zeros((1000, 1)), y)
    assert m["auc"] == pytest.approx(auc_pairwise(y, scores), abs=1e-12)


def test_metrics_single_class_rejected():
    with pytest.raises(ValueError):
        eval_metrics(lambda X: np.zeros(len(X)), np.zeros((5, 1)), np.ones(5))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_youden_threshold_maximizes_balanced_accuracy(seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, size=60).astype(float)
    y[:2], y[-2:] = 0, 1
    scores = rng.normal(size=60) + y
    thr = youden_threshold(y, scores)
    def ba(t):
        pred = scores >= t
        return 0.5 * (np.mean(pred[y == 1]) + np.mean(~pred[y == 0]))
    best = max(ba(t) for t in np.concatenate([scores, [scores.max() + 1]]))
    assert ba(thr) == pytest.approx(best, abs=1e-12)


def test_model_json_roundtrip_lr(tmp_path):
    X, y = toy_data(seed=27)
    model = lr_train(X, y, LrHyper(l1_ratio=1.0, C=0.1), seed=28)
    path = tmp_path / "m.json"
    save_model(model, path)
    back = load_model(path)
    assert np.array_equal(back.w, model.w) and back.b == model.b
    assert np.array_equal(back.standardizer.mu, model.standardizer.mu)
    assert back.hyper == model.hyper
    doc = json.loads(path.read_text())
    assert set(doc) == {"type", "params", "standardizer", "hyper"}
    assert doc["type"] == "lr" and len(doc["params"]) == X.shape[1] + 1


def test_model_json_roundtrip_mlp(tmp_path):
    X, y = toy_data(seed=29)
    model = mlp_train(X, y, MlpHyper(hidden=(4, 3), epochs=2), seed=30)
    path = tmp_path / "m.json"
    save_model(model, path)
    back = load_model(path)
    assert np.array_equal(flatten_params(back.params), flatten_params(model.params))
    assert np.allclose(mlp_predict(back, X), mlp_predict(model, X), atol=0)


def test_model_json_dp_block_preserved(tmp_path):
    X, y = toy_data(seed=31)
    model = lr_train(X, y, seed=32)
    dp_model = LogisticModel(
        w=model.w, b=model.b, standardizer=model.standardizer,
        hyper=model.hyper, dp={"epsilon": 1.0, "delta": 0.0, "sigma": None, "clip": 1.0},
    )
    doc = model_to_json(dp_model)
    assert doc["dp"]["epsilon"] == 1.0
    back = model_from_json(doc)
    assert back.dp == dp_model.dp


def test_predict_scores_dispatch():
    X, y = toy_data(seed=33)
    lr = lr_train(X, y, seed=34)
    assert np.allclose(predict_scores(lr, X), lr_predict(lr, X))
    with pytest.raises(TypeError):
        predict_scores(object(), X)
