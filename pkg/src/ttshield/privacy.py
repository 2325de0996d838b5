"""Membership-inference machinery against trained scorers.

The adversary holds public cohorts, trains shadow models on every candidate
union under a known recipe, extracts features at a fixed access level (b-WBB
discretized probe scores, SBB raw probe scores, or WB flattened raw-scale
parameters), and fits a multi-label MLP mapping features to the union's
multi-hot indicator. Scores are Hamming fractions over records and cohorts,
under a repeats x k-fold protocol whose per-record predictions come only
from fold models that held the record out of training.

Also houses the score-to-coefficient recovery attacks: finite-difference logit
probing of an LR behind a probability interface, and piecewise-linear
inversion of a monotone display map.
"""
from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .cohorts import Cohort, union
from .nn import MlpParams, predict_probs, train_mlp
from .predictors import (
    LogisticModel,
    LrHyper,
    MlpHyper,
    MlpModel,
    TrainingMechanism,
    mlp_raw_flatten,
    predict_scores,
    train_mechanism,
)
from .seeds import child_rng, child_seed
from .tensorize import TensorizeConfig, discretize, tensorize_model
from .tt import Standardizer, TensorTrain, tt_flatten

__all__ = [
    "ACCESS_LEVELS",
    "AccessError",
    "RecoveryError",
    "access",
    "TargetSpec",
    "train_target",
    "enumerate_unions",
    "ShadowModel",
    "train_shadow_models",
    "extract_corpus",
    "build_shadow_corpus",
    "AttackRecord",
    "AttackCorpus",
    "save_corpus",
    "load_corpus",
    "shuffle_labels",
    "Adversary",
    "ADVERSARY_HIDDEN",
    "adversary_train",
    "adversary_predict",
    "AttackResult",
    "run_attack",
    "hamming_score",
    "recover_lr_coeffs",
    "canonical_lr_vector",
    "recover_lr_via_endpoint",
    "invert_monotone_map",
]

ACCESS_LEVELS = ("wbb2", "wbb6", "wbb10", "sbb", "wb")
ADVERSARY_HIDDEN = (32, 16, 8)
_PROBE_BAND = (0.2, 0.8)
_MIN_STEP = 1.0 / 16.0


class AccessError(ValueError):
    pass


class RecoveryError(RuntimeError):
    pass


def _parse_level(level: str) -> int | None | str:
    """Returns bin count for b-WBB, None for SBB, 'wb' for white box."""
    if level == "wb":
        return "wb"
    if level == "sbb":
        return None
    m = re.fullmatch(r"wbb(\d+)", level)
    if m and int(m.group(1)) >= 2:
        return int(m.group(1))
    raise AccessError(f"unknown access level {level!r}")


def access(model, level: str, probes=None) -> np.ndarray:
    """Adversary's view of a target at one access level."""
    kind = _parse_level(level)
    if kind == "wb":
        if isinstance(model, LogisticModel):
            return np.concatenate([model.w, [model.b]])
        if isinstance(model, MlpModel):
            return mlp_raw_flatten(model)
        if isinstance(model, TensorTrain):
            return tt_flatten(model)
        raise AccessError(f"white-box access needs in-process parameters, got {type(model).__name__}")
    if probes is None:
        raise AccessError("black-box access needs probe samples")
    scores = predict_scores(model, np.asarray(probes, dtype=np.float64))
    if kind is not None:
        scores = discretize(scores, kind)
    return np.asarray(scores, dtype=np.float64)


@dataclass(frozen=True)
class TargetSpec:
    """One shadow-model recipe: architecture, hyper, mechanism, optional wraps."""

    arch: str
    hyper: object
    mechanism: TrainingMechanism = TrainingMechanism("vanilla")
    tensorize: TensorizeConfig | None = None
    dp_epsilon: float | None = None

    def __post_init__(self):
        if self.arch not in ("lr", "mlp"):
            raise ValueError(f"unknown architecture {self.arch!r}")
        if self.dp_epsilon is not None and self.arch != "lr":
            raise ValueError("output-perturbation defense applies to LR only")
        if self.dp_epsilon is not None and self.mechanism.kind != "vanilla":
            raise ValueError("DP training supports the vanilla mechanism only")

    @property
    def kind(self) -> str:
        base = f"dp-{self.arch}" if self.dp_epsilon is not None else self.arch
        return f"tt-{base}" if self.tensorize is not None else base

    def hyper_tag(self) -> str:
        return json.dumps(self.hyper.to_dict(), sort_keys=True)


def train_target(spec: TargetSpec, X, y, seed: int):
    """Train one target from its recipe; returns the artifact the attacker sees."""
    if spec.dp_epsilon is None:
        model = train_mechanism(spec.arch, spec.hyper, X, y, spec.mechanism, seed)
    else:
        from .defenses import dp_lr_train
        from sklearn.model_selection import train_test_split

        X_tr, _, y_tr, _ = train_test_split(
            np.asarray(X, dtype=np.float64),
            np.asarray(y, dtype=np.float64).ravel(),
            train_size=0.8,
            stratify=np.asarray(y).ravel(),
            random_state=seed % (2**32),
        )
        model = dp_lr_train(X_tr, y_tr, spec.dp_epsilon, spec.hyper, child_seed(seed, "vanilla"))
    if spec.tensorize is not None:
        config = replace(spec.tensorize, seed=child_seed(seed, "tensorize"))
        return tensorize_model(model, np.asarray(X, dtype=np.float64), config)
    return model


def enumerate_unions(n_cohorts: int, max_union_size: int | None = None) -> list:
    """All nonempty member subsets up to the size cap, in a fixed order."""
    cap = n_cohorts if max_union_size is None else min(max_union_size, n_cohorts)
    out = []
    for mask in range(1, 2**n_cohorts):
        members = tuple(m for m in range(n_cohorts) if mask >> m & 1)
        if len(members) <= cap:
            out.append(members)
    out.sort(key=lambda ms: (len(ms), ms))
    return out


@dataclass(frozen=True)
class ShadowModel:
    artifact: object
    label: tuple
    provenance: dict


def _members_tag(members) -> str:
    return "+".join(str(m + 1) for m in members)


def _mechanism_tag(mech: TrainingMechanism) -> str:
    if mech.kind == "vanilla":
        return "vanilla"
    return f"averaged(J={mech.J},K={mech.K})"


def _run_shadow_job(job):
    spec, X, y, job_seed = job
    try:
        return True, train_target(spec, X, y, job_seed)
    except Exception as exc:
        return False, f"{type(exc).__name__}: {exc}"


def train_shadow_models(
    cohorts: Sequence[Cohort],
    target_specs: Sequence[TargetSpec],
    R: int,
    seed: int,
    max_union_size: int | None = None,
    workers: int = 1,
) -> tuple:
    """Shadow farm: (models, failures). Failures are recorded, never dropped.

    Job seeds are derived from (spec index, members, replicate), so results
    are identical for any worker count.
    """
    if R < 1:
        raise ValueError("R must be >= 1")
    if not target_specs:
        raise ValueError("need at least one target spec")
    unions = enumerate_unions(len(cohorts), max_union_size)
    jobs, meta = [], []
    for si, spec in enumerate(target_specs):
        for members in unions:
            d = union(cohorts, members)
            for r in range(R):
                job_seed = child_seed(seed, "shadow", si, _members_tag(members), r)
                provenance = {
                    "kind": spec.kind,
                    "mechanism": _mechanism_tag(spec.mechanism),
                    "hyper": spec.hyper_tag(),
                    "members": _members_tag(members),
                    "replicate": r,
                    "seed": job_seed,
                }
                jobs.append((spec, d.X, d.y, job_seed))
                meta.append((d.indicator, provenance))
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        chunk = max(1, len(jobs) // (4 * workers))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_shadow_job, jobs, chunksize=chunk))
    else:
        outcomes = [_run_shadow_job(j) for j in jobs]
    models, failures = [], []
    for (indicator, provenance), (ok, payload) in zip(meta, outcomes):
        if ok:
            models.append(ShadowModel(payload, indicator, provenance))
        else:
            failures.append({**provenance, "error": payload})
    return models, failures


@dataclass(frozen=True)
class AttackRecord:
    features: np.ndarray
    label: tuple
    provenance: dict


@dataclass(frozen=True)
class AttackCorpus:
    records: tuple
    access: str
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.records:
            raise ValueError("empty attack corpus")
        k = self.records[0].features.size
        if any(r.features.size != k for r in self.records):
            raise ValueError("feature length must be constant within a corpus")
        m = len(self.records[0].label)
        if any(len(r.label) != m for r in self.records):
            raise ValueError("label length must be constant within a corpus")

    @property
    def features(self) -> np.ndarray:
        return np.stack([r.features for r in self.records])

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.float64)

    @property
    def n_labels(self) -> int:
        return len(self.records[0].label)


def extract_corpus(models: Sequence[ShadowModel], level: str, probes=None, manifest=None) -> AttackCorpus:
    records = tuple(
        AttackRecord(
            features=np.asarray(access(m.artifact, level, probes), dtype=np.float64),
            label=tuple(int(v) for v in m.label),
            provenance={**m.provenance, "access": level},
        )
        for m in models
    )
    return AttackCorpus(records=records, access=level, manifest=dict(manifest or {}))


def select_probes(cohorts: Sequence[Cohort], n_probes: int, seed: int) -> tuple:
    """Fixed probe set shared across a farm: (sorted ids, feature rows)."""
    pool = np.concatenate([c.X for c in cohorts], axis=0)
    if n_probes > pool.shape[0]:
        raise ValueError("not enough pooled samples for the probe set")
    probe_ids = sorted(
        int(i) for i in child_rng(seed, "probes").choice(pool.shape[0], n_probes, replace=False)
    )
    return probe_ids, pool[probe_ids]


def build_shadow_corpus(
    cohorts: Sequence[Cohort],
    hyper_grid: Sequence[TargetSpec],
    mechanisms: Sequence[TrainingMechanism],
    R: int,
    access_level: str,
    seed: int,
    n_probes: int = 100,
    max_union_size: int | None = None,
) -> AttackCorpus:
    """Train the grid x mechanisms farm, extract one corpus at the level."""
    _parse_level(access_level)
    if not hyper_grid or not mechanisms:
        raise ValueError("need a nonempty hyper grid and mechanism list")
    specs = [replace(spec, mechanism=mech) for spec in hyper_grid for mech in mechanisms]
    models, failures = train_shadow_models(cohorts, specs, R, seed, max_union_size)
    probes, probe_ids = None, []
    if access_level != "wb":
        probe_ids, probes = select_probes(cohorts, n_probes, seed)
    manifest = {
        "access": access_level,
        "n_probes": 0 if access_level == "wb" else n_probes,
        "probe_ids": probe_ids,
        "seed": seed,
        "R": R,
        "max_union_size": max_union_size,
        "failures": failures,
    }
    return extract_corpus(models, access_level, probes, manifest)


_PROVENANCE_COLS = ("kind", "mechanism", "access", "hyper", "members", "replicate", "seed")


def save_corpus(corpus: AttackCorpus, csv_path, manifest_path=None) -> None:
    F, L = corpus.features, corpus.labels
    header = (
        list(_PROVENANCE_COLS)
        + [f"f{j}" for j in range(F.shape[1])]
        + [f"l{m}" for m in range(L.shape[1])]
    )
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for rec, feats, label in zip(corpus.records, F, L):
            row = [str(rec.provenance.get(c, "")) for c in _PROVENANCE_COLS]
            row += [repr(float(v)) for v in feats]
            row += [str(int(v)) for v in label]
            writer.writerow(row)
    if manifest_path is not None:
        with open(manifest_path, "w", encoding="utf-8") as fh:
            json.dump(corpus.manifest, fh, indent=2, sort_keys=True)


def load_corpus(csv_path, manifest_path=None) -> AttackCorpus:
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_prov = len(_PROVENANCE_COLS)
        feat_cols = [j for j, name in enumerate(header) if name.startswith("f") and name[1:].isdigit()]
        label_cols = [j for j, name in enumerate(header) if name.startswith("l") and name[1:].isdigit()]
        if list(header[:n_prov]) != list(_PROVENANCE_COLS) or not feat_cols or not label_cols:
            raise ValueError(f"{csv_path}: unrecognized attack corpus header")
        records = []
        for row in reader:
            prov = dict(zip(_PROVENANCE_COLS, row[:n_prov]))
            prov["replicate"] = int(prov["replicate"])
            prov["seed"] = int(prov["seed"])
            feats = np.array([float(row[j]) for j in feat_cols])
            label = tuple(int(row[j]) for j in label_cols)
            records.append(AttackRecord(feats, label, prov))
    manifest = {}
    if manifest_path is not None:
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    return AttackCorpus(records=tuple(records), access=records[0].provenance["access"], manifest=manifest)


def shuffle_labels(corpus: AttackCorpus, seed: int) -> AttackCorpus:
    """No-signal baseline: permute whole label rows across records."""
    perm = child_rng(seed, "shuffle").permutation(len(corpus.records))
    records = tuple(
        AttackRecord(rec.features, corpus.records[p].label, dict(rec.provenance))
        for rec, p in zip(corpus.records, perm)
    )
    return AttackCorpus(records=records, access=corpus.access, manifest=dict(corpus.manifest, shuffled=True))


@dataclass(frozen=True)
class Adversary:
    params: MlpParams
    input_std: Standardizer


def adversary_train(
    F,
    L,
    seed: int,
    epochs: int = 100,
    batch_size: int = 32,
    lr: float = 1e-3,
    weight_decay: float = 1e-4,
) -> Adversary:
    F = np.asarray(F, dtype=np.float64)
    L = np.atleast_2d(np.asarray(L, dtype=np.float64))
    std = Standardizer.fit(F)
    params = train_mlp(
        std.transform(F),
        L,
        hidden=list(ADVERSARY_HIDDEN),
        epochs=epochs,
        batch_size=batch_size,
        lr=lr,
        weight_decay=weight_decay,
        seed=seed,
    )
    return Adversary(params=params, input_std=std)


def adversary_predict(adv: Adversary, F) -> np.ndarray:
    F = np.atleast_2d(np.asarray(F, dtype=np.float64))
    return predict_probs(adv.params, adv.input_std.transform(F))


def hamming_score(preds, labels) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError(f"shape mismatch {preds.shape} vs {labels.shape}")
    return float(np.mean(preds == labels))


@dataclass(frozen=True)
class AttackResult:
    mean: float
    std: float
    per_label_mean: tuple
    per_label_std: tuple
    per_repeat: tuple
    degenerate_labels: tuple
    repeats: int
    folds: int

    def __str__(self) -> str:
        return f"{self.mean:.3f} +/- {self.std:.3f}"


def run_attack(corpus: AttackCorpus, repeats: int = 5, folds: int = 5, seed: int = 0) -> AttackResult:
    """repeats x k-fold: each fold's adversary scores only its held-out
    records, so no record is judged by a model that trained on it."""
    F, L = corpus.features, corpus.labels
    n, M = L.shape
    patterns = {}
    for row in L:
        patterns[tuple(row)] = patterns.get(tuple(row), 0) + 1
    thin = min(patterns.values())
    if thin < folds:
        raise ValueError(f"need >= {folds} records per label pattern, thinnest has {thin}")
    degenerate = tuple(int(m) for m in range(M) if np.all(L[:, m] == L[0, m]))
    repeat_scores, per_label = [], []
    for r in range(repeats):
        order = child_rng(seed, "attack", r).permutation(n)
        fold_ids = np.array_split(order, folds)
        probs = np.zeros((n, M))
        for k, test in enumerate(fold_ids):
            mask = np.ones(n, dtype=bool)
            mask[test] = False
            adv = adversary_train(F[mask], L[mask], child_seed(seed, "attack", r, "fold", k))
            probs[test] = adversary_predict(adv, F[test])
        preds = (probs >= 0.5).astype(np.float64)
        repeat_scores.append(hamming_score(preds, L))
        per_label.append(np.mean(preds == L, axis=0))
    per_label = np.array(per_label)
    return AttackResult(
        mean=float(np.mean(repeat_scores)),
        std=float(np.std(repeat_scores, ddof=1)) if repeats > 1 else 0.0,
        per_label_mean=tuple(float(v) for v in per_label.mean(axis=0)),
        per_label_std=tuple(
            float(v) for v in (per_label.std(axis=0, ddof=1) if repeats > 1 else np.zeros(M))
        ),
        per_repeat=tuple(float(v) for v in repeat_scores),
        degenerate_labels=degenerate,
        repeats=repeats,
        folds=folds,
    )


def _logit(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise RecoveryError(f"probability {p} saturates the logit")
    return math.log(p / (1.0 - p))


def _center_probe(query: Callable, base: np.ndarray) -> np.ndarray:
    """Scale the base point so the displayed probability is well-conditioned."""
    lo, hi = _PROBE_BAND
    fallback, fallback_gap = None, math.inf
    for t in (1.0, 0.5, 2.0, 0.25, 4.0, 0.125, 8.0, 1.0 / 16, 16.0, 1.0 / 32, 32.0, 1.0 / 64, 64.0):
        x = base * t
        p = float(query(x))
        if lo <= p <= hi:
            return x
        if 0.0 < p < 1.0 and abs(p - 0.5) < fallback_gap:
            fallback, fallback_gap = x, abs(p - 0.5)
    if fallback is None:
        raise RecoveryError("all probe candidates saturate the interface")
    return fallback


def recover_lr_coeffs(query: Callable, n_features: int, base=None, step: float = 1.0) -> LogisticModel:
    """Finite-difference logit recovery of a sigmoid(w.x + b) behind a
    probability interface. Pairs of probes differ in one feature; saturated
    probes shrink their step down to 1/16 before giving up."""
    base = np.ones(n_features) if base is None else np.asarray(base, dtype=np.float64).copy()
    x0 = _center_probe(query, base)
    z0 = _logit(float(query(x0)))
    w = np.zeros(n_features)
    for j in range(n_features):
        h = max(step, abs(float(x0[j])) / 4.0)
        while True:
            x1 = x0.copy()
            x1[j] += h
            p1 = float(query(x1))
            if 0.0 < p1 < 1.0:
                w[j] = (_logit(p1) - z0) / h
                break
            h /= 2.0
            if h < _MIN_STEP:
                raise RecoveryError(f"persistent saturation probing feature {j}")
    b = z0 - float(w @ x0)
    return LogisticModel(
        w=w, b=b, standardizer=Standardizer.identity(n_features), hyper={"source": "recovered"}
    )


def canonical_lr_vector(w, b) -> np.ndarray:
    """Identifiable parametrization over the one-hot block: clinical
    coefficients, type deltas against type 1, intercept absorbing type 1."""
    w = np.asarray(w, dtype=np.float64)
    if w.size != 21:
        raise ValueError("expected the 21-feature layout")
    clinical = w[:5]
    deltas = w[6:21] - w[5]
    return np.concatenate([clinical, deltas, [float(b) + w[5]]])


_WIRE_CLINICAL = ("tmb", "psth", "albumin", "nlr", "age")


def recover_lr_via_endpoint(
    wire_query: Callable, step: float = 1.0, clamp: float | None = None
) -> np.ndarray:
    """Recover the canonical coefficient vector through the query interface
    {tmb, psth, albumin, nlr, age, cancer_type}; returns the same layout as
    canonical_lr_vector. PSTH uses the 0->1 flip, types difference against
    type 1, continuous features a positive step.

    clamp=None raises on any saturated probe. A coarsely rounded interface
    cannot resolve large one-hot offsets at all, so attack-mode callers set
    clamp to the finest probability the wire can represent and accept logit
    estimates pinned at that boundary.
    """
    if clamp is not None and not 0.0 < clamp < 0.5:
        raise ValueError("clamp must lie in (0, 0.5)")

    def zlog(p: float) -> float:
        if clamp is not None:
            p = min(max(p, clamp), 1.0 - clamp)
        return _logit(p)

    base = {"tmb": 10.0, "psth": 0, "albumin": 4.0, "nlr": 3.0, "age": 60.0, "cancer_type": 1}

    def query_scaled(scale_vec):
        q = dict(base)
        for name, v in zip(("tmb", "albumin", "nlr", "age"), scale_vec):
            q[name] = float(v)
        return float(wire_query(q))

    ray = np.array([base[n] for n in ("tmb", "albumin", "nlr", "age")])
    try:
        x0 = _center_probe(query_scaled, ray)
    except RecoveryError:
        if clamp is None:
            raise
        # a wire pinned at 0/1 everywhere still identifies the model as
        # saturated; read it at the base point and let the clamp speak
        x0 = ray
    probe = dict(base)
    for name, v in zip(("tmb", "albumin", "nlr", "age"), x0):
        probe[name] = float(v)
    z0 = zlog(float(wire_query(probe)))

    coeffs = np.zeros(5)
    for slot, name in enumerate(_WIRE_CLINICAL):
        if name == "psth":
            q = dict(probe, psth=1)
            coeffs[slot] = zlog(float(wire_query(q))) - z0
            continue
        # steps scale with the coordinate so rounding error on the slope
        # does not blow up the recovered intercept at large base values
        h0 = max(step, abs(float(probe[name])) / 4.0)
        h = h0
        while True:
            q = dict(probe)
            q[name] = float(q[name]) + h
            p1 = float(wire_query(q))
            if 0.0 < p1 < 1.0:
                coeffs[slot] = (_logit(p1) - z0) / h
                break
            h /= 2.0
            if h < _MIN_STEP:
                if clamp is None:
                    raise RecoveryError(f"persistent saturation probing {name}")
                q = dict(probe)
                q[name] = float(q[name]) + h0
                coeffs[slot] = (zlog(float(wire_query(q))) - z0) / h0
                break
    deltas = np.zeros(15)
    for k in range(2, 17):
        q = dict(probe, cancer_type=k)
        deltas[k - 2] = zlog(float(wire_query(q))) - z0
    clin_vals = np.array([probe[n] for n in _WIRE_CLINICAL], dtype=np.float64)
    intercept = z0 - float(coeffs @ clin_vals)
    return np.concatenate([coeffs, deltas, [intercept]])


def invert_monotone_map(calibration, observed: float):
    """Piecewise-linear inverse of a monotone score->display map.

    calibration: sequence of (score, displayed) pairs. Returns (score,
    clamped) where clamped flags observations outside the calibrated range.
    """
    pairs = np.asarray(list(calibration), dtype=np.float64)
    if pairs.ndim != 2 or pairs.shape[1] != 2 or pairs.shape[0] < 2:
        raise ValueError("calibration needs >= 2 (score, displayed) pairs")
    order = np.argsort(pairs[:, 0], kind="stable")
    scores, disp = pairs[order, 0], pairs[order, 1]
    if np.any(np.diff(disp) < -1e-12):
        raise ValueError("calibration map is not monotone non-decreasing")
    # collapse plateaus to their mean score so interp sees increasing x
    uniq, inverse = np.unique(disp, return_inverse=True)
    xp = uniq
    fp = np.array([scores[inverse == k].mean() for k in range(uniq.size)])
    clamped = bool(observed < uniq[0] or observed > uniq[-1])
    val = float(np.interp(observed, xp, fp))
    return val, clamped
