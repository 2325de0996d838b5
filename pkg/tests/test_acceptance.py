"""End-to-end acceptance gates for the desk-scale protocol.

One test per gate: exact tensor algebra, gauge obfuscation, scale
equivalence, coefficient recovery through the serving interface, attack
orderings across access levels, the privacy/utility trade-off,
interpretability alignment, and bit-for-bit reproducibility. The heavy
fixtures (cohorts, score-table suite) are shared across tests; every number
derives from master seed 0.
"""
import os
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import spearmanr

from ttshield.cohorts import FEATURES, default_specs, generate_cohorts, union
from ttshield.experiment import (
    ExperimentConfig,
    dp_accuracy_sweep,
    dp_attack_sweep,
    interface_extraction,
    make_cohorts,
    manifest_bytes,
    power_display,
    recovered_wb_corpus,
    run_attack_suite,
    shuffled_baseline,
    tt_accuracy_tradeoff,
)
from ttshield.interpret import (
    feature_sensitivity,
    max_normalize,
    monotonicity_curve,
    sensitivity_by_type,
)
from ttshield.predictors import LogisticModel, LrHyper, MlpHyper, lr_train, mlp_train, predict_scores
from ttshield.privacy import (
    TargetSpec,
    adversary_predict,
    adversary_train,
    canonical_lr_vector,
    extract_corpus,
    recover_lr_coeffs,
    recover_lr_via_endpoint,
    run_attack,
    train_shadow_models,
)
from ttshield.seeds import child_seed
from ttshield.serve import ModelServer, endpoint_client
from ttshield.tensorize import TensorizeConfig, tensorize_model
from ttshield.tt import (
    STANDARDIZED,
    Standardizer,
    random_tt,
    tt_classify,
    tt_classify_batch,
    tt_condition_many,
    tt_flatten,
    tt_gauge_randomize,
    tt_marginal,
    tt_partition,
    tt_rescale,
)

WORKERS = min(4, os.cpu_count() or 1)
BINARY_21 = (1,) + tuple(range(5, 21))


@pytest.fixture(scope="module")
def desk_config():
    return ExperimentConfig()


@pytest.fixture(scope="module")
def desk_cohorts(desk_config):
    return make_cohorts(desk_config)


@pytest.fixture(scope="module")
def desk_suite(desk_config):
    t0 = time.perf_counter()
    suite = run_attack_suite(desk_config, workers=WORKERS)
    return suite, time.perf_counter() - t0


def dense_tensor(tt):
    """Exhaustive coefficient tensor, one axis per site in chain order."""
    W = np.ones((1,))
    for core in tt.cores:
        W = np.tensordot(W, core, axes=(-1, 0))
    return W[..., 0]


def random_raw_lr(seed, n=21, scale=0.3):
    rng = np.random.default_rng(seed)
    return LogisticModel(
        w=rng.normal(0, scale, n),
        b=float(rng.normal(0, scale)),
        standardizer=Standardizer.identity(n),
        hyper={},
    )


def test_criterion_1_tt_algebra_matches_enumeration():
    t0 = time.perf_counter()
    rng = np.random.default_rng(814)
    for _ in range(200):
        n_sites = int(rng.integers(2, 11))
        rank = int(rng.integers(1, 5))
        out_site = int(rng.integers(0, n_sites))
        tt = random_tt(n_sites, rank, seed=int(rng.integers(2**32)), output_site=out_site)
        T = dense_tensor(tt)

        z = tt_partition(tt)
        z_ref = float((T * T).sum())
        assert abs(z - z_ref) <= 1e-10 * abs(z_ref)

        k = int(rng.integers(1, n_sites + 1))
        keep = sorted(int(s) for s in rng.choice(n_sites, size=k, replace=False))
        marg = tt_marginal(tt, keep)
        drop = tuple(s for s in range(n_sites) if s not in set(keep))
        marg_ref = (T * T).sum(axis=drop) if drop else T * T
        assert marg.shape == marg_ref.shape
        assert np.max(np.abs(marg - marg_ref)) <= 1e-10 * np.max(np.abs(marg_ref))

        for _ in range(3):
            x = rng.normal(0.0, 1.0, n_sites - 1)
            p = tt_classify(tt, x)
            amp = np.moveaxis(T, tt.output_site, 0)
            for v in x:
                amp = amp[:, 0, ...] + v * amp[:, 1, ...]
            p_ref = amp[1] ** 2 / float((amp * amp).sum())
            assert abs(p - p_ref) <= 1e-10 * abs(p_ref)
    assert time.perf_counter() - t0 < 60


def test_criterion_2_gauge_copies_hide_parameters(desk_cohorts):
    t0 = time.perf_counter()
    d = union(desk_cohorts, (0, 1, 2))
    mlp = mlp_train(d.X, d.y, MlpHyper(), seed=0)
    tt = tensorize_model(mlp, d.X, TensorizeConfig(pivot_count=50, ranks=5, bins=None, seed=1))

    rng = np.random.default_rng(2)
    rows = d.X[rng.choice(d.X.shape[0], size=1000, replace=True)]
    base_scores = tt_classify_batch(tt, rows)
    base_flat = tt_flatten(tt)
    norm = np.linalg.norm(base_flat)
    for i in range(100):
        copy = tt_gauge_randomize(tt, seed=i)
        assert np.max(np.abs(tt_classify_batch(copy, rows) - base_scores)) <= 1e-8
        assert np.linalg.norm(tt_flatten(copy) - base_flat) > 0.01 * norm

    spec = TargetSpec(
        "mlp", MlpHyper(), tensorize=TensorizeConfig(pivot_count=50, ranks=2, bins=2, seed=0)
    )
    models, fails = train_shadow_models(
        desk_cohorts, (spec,), R=20, seed=child_seed(0, "ttmlp-farm"),
        max_union_size=2, workers=WORKERS,
    )
    assert not fails
    corpus = extract_corpus(models, "wb")
    res = run_attack(corpus, repeats=5, folds=5, seed=child_seed(0, "ttmlp-attack"))
    base = shuffled_baseline(corpus, repeats=5, folds=5, seed=0)
    assert abs(res.mean - base.mean) <= 0.05
    assert time.perf_counter() - t0 < 600


def test_criterion_3_raw_and_standardized_paths_agree(desk_cohorts):
    d = union(desk_cohorts, (0, 1, 2))
    rng = np.random.default_rng(8)
    pop = Standardizer.fit(d.X)
    X = pop.mu + pop.sigma * rng.normal(size=(1000, d.X.shape[1]))

    model = lr_train(d.X, d.y, LrHyper(), seed=0)
    s = model.standardizer
    shifted = LogisticModel(
        w=model.w * s.sigma,
        b=model.b + float(model.w @ s.mu),
        standardizer=Standardizer.identity(X.shape[1]),
        hyper={},
    )
    p_raw = predict_scores(model, X)
    p_std = predict_scores(shifted, s.transform(X))
    assert np.max(np.abs(p_raw - p_std)) <= 1e-12

    tt_std = random_tt(X.shape[1] + 1, rank=3, seed=4, input_scale=STANDARDIZED, scale=0.8)
    tt_raw = tt_rescale(tt_std, s)
    q_raw = tt_classify_batch(tt_raw, X)
    q_std = tt_classify_batch(tt_std, s.transform(X))
    assert np.max(np.abs(q_raw - q_std)) <= 1e-12


def test_criterion_4_recovery_through_the_interface(desk_cohorts):
    for seed in range(10):
        model = random_raw_lr(seed)

        def q(x, m=model):
            return float(predict_scores(m, np.atleast_2d(x))[0])

        got = recover_lr_coeffs(q, 21)
        rec = np.concatenate([got.w, [got.b]])
        truth = np.concatenate([model.w, [model.b]])
        assert np.max(np.abs(rec - truth)) <= 1e-9

    d = union(desk_cohorts, (0, 1, 2))
    served = lr_train(d.X, d.y, LrHyper(), seed=0)
    with ModelServer(served, decimals=4) as server:
        got = recover_lr_via_endpoint(endpoint_client(server.url))
    truth = canonical_lr_vector(served.w, served.b)
    assert np.linalg.norm(got - truth) / np.linalg.norm(truth) <= 1e-2

    display = power_display(1.6)
    spec = TargetSpec("lr", LrHyper())
    models, fails = train_shadow_models(
        desk_cohorts, (spec,), R=20, seed=child_seed(0, "iface-farm"),
        max_union_size=1, workers=WORKERS,
    )
    assert not fails
    corpus = recovered_wb_corpus(models, display, decimals=2)
    adv = adversary_train(corpus.features, corpus.labels, seed=child_seed(0, "iface-adv"))
    wins = 0
    for trial in range(20):
        secret = trial % 3
        target = lr_train(
            desk_cohorts[secret].X, desk_cohorts[secret].y, LrHyper(), seed=100 + trial
        )
        feats = interface_extraction(target, display, decimals=2)
        probs = adversary_predict(adv, feats[None, :])[0]
        wins += int(int(np.argmax(probs)) == secret)
    assert wins >= 18


def test_criterion_5_attack_orderings(desk_suite):
    suite, elapsed = desk_suite
    assert not suite.failures
    table = suite.table

    def cell(row, col):
        return table.cell(row, col)[0]

    for row in ("lr/vanilla", "lr/averaged"):
        chain = [cell(row, c) for c in ("wbb2", "wbb6", "wbb10", "sbb")]
        assert all(a <= b for a, b in zip(chain, chain[1:])), (row, chain)
    assert cell("lr/averaged", "wb") > cell("lr/vanilla", "wb")
    assert cell("lr/vanilla", "wb") >= 0.70 - 0.07
    assert cell("lr/averaged", "sbb") >= 0.85 - 0.07
    assert elapsed < 1800


def test_criterion_6_privacy_utility_tradeoff(desk_config, desk_cohorts):
    att = dp_attack_sweep(desk_config, desk_cohorts, workers=WORKERS)
    eps = sorted(att)
    scores = [att[e].mean for e in eps]
    rho = spearmanr(eps, scores).statistic
    assert rho >= 0.8, (eps, scores)

    acc = dp_accuracy_sweep(desk_config, desk_cohorts, n_seeds=20)
    bas = [acc[e] for e in eps]
    assert all(a <= b for a, b in zip(bas, bas[1:])), bas
    assert bas[-1] <= acc["baseline"]

    tr = tt_accuracy_tradeoff(desk_config, desk_cohorts, b=2)
    assert abs(tr["ba_model"] - tr["ba_tt"]) <= 0.05

    tc = TensorizeConfig(desk_config.tt_pivots, desk_config.tt_rank, 2, 0)
    spec = TargetSpec("lr", desk_config.lr_grid[0], tensorize=tc)
    models, fails = train_shadow_models(
        desk_cohorts, (spec,), R=desk_config.R, seed=child_seed(0, "farm", "tt-lr/b=2"),
        max_union_size=desk_config.max_union_size, workers=WORKERS,
    )
    assert not fails
    corpus = extract_corpus(models, "wb")
    res = run_attack(corpus, repeats=5, folds=5, seed=child_seed(0, "attack", "tt-lr/b=2", "wb"))
    base = shuffled_baseline(corpus, repeats=5, folds=5, seed=0)
    assert abs(res.mean - base.mean) <= 0.05


def test_criterion_7_sensitivities_explain_the_model():
    specs = default_specs(sizes=(800,), rate=0.35, drift=0.0, seed=3)
    specs = [replace(s, coef=tuple(0.35 * c for c in s.coef)) for s in specs]
    cohort = generate_cohorts(specs, seed=3)[0]
    model = lr_train(cohort.X, cohort.y, LrHyper(), seed=1)
    tt = tensorize_model(
        model, cohort.X, TensorizeConfig(pivot_count=50, ranks=2, bins=6, seed=7)
    )

    rep = feature_sensitivity(
        tt, base_values=cohort.X.mean(axis=0), binary=BINARY_21, names=FEATURES
    )
    r = np.corrcoef(rep.normalized, max_normalize(model.w)[0])[0, 1]
    assert r >= 0.95

    t = 7
    fixed = {5 + k: (1.0 if k == t - 1 else 0.0) for k in range(16)}
    reduced = tt_condition_many(tt, fixed)
    X = cohort.X[:40].copy()
    X[:, 5:21] = 0.0
    X[:, 4 + t] = 1.0
    full = tt_classify_batch(tt, X)
    cond = tt_classify_batch(reduced, X[:, :5])
    assert np.max(np.abs(full - cond)) <= 1e-10

    T = 12
    mix = np.full(16, 0.8 / 15)
    mix[T - 1] = 0.2
    qspecs = default_specs(sizes=(600,), rate=0.4, drift=0.0, seed=21)
    qspecs = [
        replace(s, coef=tuple(0.35 * c for c in s.coef), type_mix=tuple(mix)) for s in qspecs
    ]
    qcohort = generate_cohorts(qspecs, seed=21)[0]
    y = qcohort.y.copy()
    y[qcohort.X[:, 4 + T] == 1.0] = 0.0
    qmodel = lr_train(qcohort.X, y, LrHyper(C=100.0, l1_ratio=0.0), seed=1)
    qtt = tensorize_model(
        qmodel, qcohort.X, TensorizeConfig(pivot_count=120, ranks=3, bins=None, seed=2)
    )
    base = qcohort.X.mean(axis=0)
    raws = {k: sensitivity_by_type(qtt, k, base_values=base).raw for k in range(1, 17)}
    global_max = max(abs(v) for raw in raws.values() for v in raw)
    assert max(abs(v) for v in raws[T]) < 0.1 * global_max

    c_lr = monotonicity_curve(model, cohort.X, cohort.y, bins=10, n_boot=100, seed=3)
    c_tt = monotonicity_curve(tt, cohort.X, cohort.y, bins=10, n_boot=100, seed=3)
    assert c_tt.slope < c_lr.slope


def test_criterion_8_reruns_are_byte_identical(desk_config, desk_suite):
    suite, _ = desk_suite
    second = run_attack_suite(desk_config, workers=WORKERS)
    assert second.table.to_csv_bytes() == suite.table.to_csv_bytes()
    assert manifest_bytes(second.manifest) == manifest_bytes(suite.manifest)
