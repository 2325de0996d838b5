"""Synthetic immunotherapy-response cohorts and dataset unions.

Schema: 5 clinical features (TMB, PSTH, Albumin, NLR, Age), 16 exclusive
one-hot cancer-type flags, binary Response. Cohorts are sampled from
per-cohort parametric feature distributions; labels come from a latent
logistic model whose coefficients are perturbed per cohort ("drift"), which is
the only signal a membership attack can exploit. All jitters are gated by the
drift knob so drift=0 makes cohorts identically distributed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .seeds import child_rng

__all__ = [
    "FEATURES",
    "HEADER",
    "N_FEATURES",
    "N_TYPES",
    "TYPE_SLICE",
    "BINARY_FEATURES",
    "CONTINUOUS_FEATURES",
    "PAPER_NAMES",
    "PAPER_SIZES",
    "Cohort",
    "CohortSpec",
    "DatasetUnion",
    "default_specs",
    "paper_specs",
    "generate_cohort",
    "generate_cohorts",
    "save_csv",
    "load_csv",
    "union",
    "type_counts",
]

N_TYPES = 16
FEATURES = ["TMB", "PSTH", "Albumin", "NLR", "Age"] + [
    f"CancerType_{k:02d}" for k in range(1, N_TYPES + 1)
]
N_FEATURES = len(FEATURES)
HEADER = ",".join(FEATURES + ["Response"])
TYPE_SLICE = slice(5, 5 + N_TYPES)
BINARY_FEATURES = [1] + list(range(5, N_FEATURES))
CONTINUOUS_FEATURES = [0, 2, 3, 4]

PAPER_NAMES = ("Cho1", "Cho2", "MSK1", "MSK2", "Shim", "Kato")
PAPER_SIZES = (964, 515, 453, 104, 198, 35)

# latent coefficients on standardized features: response rises with TMB and
# albumin, falls with prior systemic therapy and NLR, weak age effect
_BASE_CLINICAL_COEF = (1.1, -0.8, 0.7, -0.9, 0.15)
_TYPE_COEF_SCALE = 0.45


class CohortValidationError(ValueError):
    pass


@dataclass(frozen=True)
class Cohort:
    name: str
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64).ravel()
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if X.ndim != 2 or X.shape[1] != N_FEATURES:
            raise CohortValidationError(f"expected (n, {N_FEATURES}) features, got {X.shape}")
        if X.shape[0] != y.size:
            raise CohortValidationError("feature/label row counts differ")
        if not np.all(np.isfinite(X)):
            raise CohortValidationError("non-finite feature value")
        if not np.all((y == 0) | (y == 1)):
            raise CohortValidationError("response must be 0/1")
        flags = X[:, TYPE_SLICE]
        if not np.all((flags == 0) | (flags == 1)):
            raise CohortValidationError("cancer-type flags must be 0/1")
        bad = np.flatnonzero(flags.sum(axis=1) != 1)
        if bad.size:
            raise CohortValidationError(f"row {bad[0]}: expected exactly one cancer-type flag")
        if not np.all((X[:, 1] == 0) | (X[:, 1] == 1)):
            raise CohortValidationError("PSTH must be 0/1")
        if np.any(X[:, 0] < 0) or np.any(X[:, [2, 3, 4]] <= 0):
            raise CohortValidationError("TMB must be >= 0; Albumin/NLR/Age must be > 0")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def response_rate(self) -> float:
        return float(self.y.mean())


@dataclass(frozen=True)
class CohortSpec:
    name: str
    size: int
    rate: float = 0.3
    tmb_log_mean: float = 1.5
    tmb_log_sigma: float = 0.8
    psth_p: float = 0.25
    albumin_mean: float = 3.9
    albumin_sigma: float = 0.5
    nlr_log_mean: float = 1.2
    nlr_log_sigma: float = 0.6
    age_mean: float = 63.0
    age_sigma: float = 11.0
    type_mix: tuple = (1.0 / N_TYPES,) * N_TYPES
    coef: tuple = _BASE_CLINICAL_COEF + (0.0,) * N_TYPES

    def __post_init__(self):
        if self.size < 10:
            raise ValueError("cohort size must be >= 10")
        if not 0.0 < self.rate < 1.0:
            raise ValueError("response rate must lie in (0, 1)")
        if not 0.0 < self.psth_p < 1.0:
            raise ValueError("psth_p must lie in (0, 1)")
        if min(self.tmb_log_sigma, self.albumin_sigma, self.nlr_log_sigma, self.age_sigma) <= 0:
            raise ValueError("distribution sigmas must be positive")
        mix = np.asarray(self.type_mix, dtype=np.float64)
        if mix.size != N_TYPES or np.any(mix < 0) or mix.sum() <= 0:
            raise ValueError("type_mix must be 16 nonnegative weights")
        object.__setattr__(self, "type_mix", tuple(mix / mix.sum()))
        if len(self.coef) != N_FEATURES:
            raise ValueError(f"coef must have length {N_FEATURES}")


def default_specs(
    sizes: Sequence[int] = (320, 280, 240),
    rate: float = 0.3,
    drift: float = 0.3,
    seed: int = 0,
    names: Sequence[str] | None = None,
) -> list:
    """Cohort specs sharing a base population, perturbed per cohort by drift."""
    if names is None:
        names = [f"C{m + 1}" for m in range(len(sizes))]
    if len(names) != len(sizes):
        raise ValueError("names and sizes must align")
    base_rng = child_rng(seed, "spec-base")
    type_coef = base_rng.normal(0.0, _TYPE_COEF_SCALE, N_TYPES)
    base_mix = base_rng.dirichlet(np.full(N_TYPES, 4.0))
    base_coef = np.array(_BASE_CLINICAL_COEF + tuple(type_coef))
    specs = []
    for m, (name, size) in enumerate(zip(names, sizes)):
        rng = child_rng(seed, "spec", m)
        eta = rng.normal(size=N_FEATURES)
        coef = base_coef * (1.0 + drift * eta)
        mix = base_mix * np.exp(drift * rng.normal(0.0, 0.5, N_TYPES))
        specs.append(
            CohortSpec(
                name=name,
                size=int(size),
                rate=rate,
                tmb_log_mean=1.5 + drift * rng.normal(0.0, 0.25),
                tmb_log_sigma=0.8,
                psth_p=float(np.clip(0.25 + drift * rng.normal(0.0, 0.12), 0.02, 0.98)),
                albumin_mean=3.9 + drift * rng.normal(0.0, 0.15),
                albumin_sigma=0.5,
                nlr_log_mean=1.2 + drift * rng.normal(0.0, 0.2),
                nlr_log_sigma=0.6,
                age_mean=63.0 + drift * rng.normal(0.0, 3.0),
                age_sigma=11.0,
                type_mix=tuple(mix / mix.sum()),
                coef=tuple(coef),
            )
        )
    return specs


def paper_specs(rate: float = 0.3, drift: float = 0.3, seed: int = 0) -> list:
    return default_specs(sizes=PAPER_SIZES, rate=rate, drift=drift, seed=seed, names=PAPER_NAMES)


def _analytic_moments(spec: CohortSpec):
    """Population mean/std per feature, used to standardize the latent logit."""
    mu, sd = np.zeros(N_FEATURES), np.ones(N_FEATURES)

    def lognorm(m, s):
        mean = math.exp(m + s * s / 2.0)
        return mean, mean * math.sqrt(math.exp(s * s) - 1.0)

    mu[0], sd[0] = lognorm(spec.tmb_log_mean, spec.tmb_log_sigma)
    mu[1], sd[1] = spec.psth_p, math.sqrt(spec.psth_p * (1 - spec.psth_p))
    mu[2], sd[2] = spec.albumin_mean, spec.albumin_sigma
    mu[3], sd[3] = lognorm(spec.nlr_log_mean, spec.nlr_log_sigma)
    mu[4], sd[4] = spec.age_mean, spec.age_sigma
    for k, p in enumerate(spec.type_mix):
        mu[5 + k] = p
        sd[5 + k] = max(math.sqrt(p * (1 - p)), 0.05)
    return mu, sd


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _bisect_intercept(z: np.ndarray, rate: float) -> float:
    lo, hi = -40.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _sigmoid(z + mid).mean() < rate:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def generate_cohort(spec: CohortSpec, seed: int = 0) -> Cohort:
    rng = child_rng(seed, "cohort", spec.name)
    n = spec.size
    tmb = rng.lognormal(spec.tmb_log_mean, spec.tmb_log_sigma, n)
    psth = (rng.random(n) < spec.psth_p).astype(np.float64)
    albumin = np.maximum(rng.normal(spec.albumin_mean, spec.albumin_sigma, n), 0.5)
    nlr = rng.lognormal(spec.nlr_log_mean, spec.nlr_log_sigma, n)
    age = np.maximum(rng.normal(spec.age_mean, spec.age_sigma, n), 18.0)
    kinds = rng.choice(N_TYPES, size=n, p=np.asarray(spec.type_mix))
    flags = np.zeros((n, N_TYPES))
    flags[np.arange(n), kinds] = 1.0
    X = np.column_stack([tmb, psth, albumin, nlr, age, flags])
    mu, sd = _analytic_moments(spec)
    z = ((X - mu) / sd) @ np.asarray(spec.coef)
    p = _sigmoid(z + _bisect_intercept(z, spec.rate))
    # one uniform per stratum of width 1/n keeps the realized rate tight while
    # each label stays marginally Bernoulli(p_i)
    u = (rng.permutation(n) + rng.random(n)) / n
    y = (u < p).astype(np.float64)
    return Cohort(spec.name, X, y)


def generate_cohorts(specs: Sequence[CohortSpec], seed: int = 0) -> list:
    return [generate_cohort(spec, seed) for spec in specs]


def save_csv(cohort: Cohort, path) -> None:
    lines = [HEADER]
    for x, label in zip(cohort.X, cohort.y):
        parts = [repr(float(x[j])) for j in range(5)]
        parts[1] = str(int(x[1]))
        parts += [str(int(v)) for v in x[TYPE_SLICE]]
        parts.append(str(int(label)))
        lines.append(",".join(parts))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_csv(path, name: str | None = None) -> Cohort:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise CohortValidationError(f"{path}: empty file")
    if lines[0] != HEADER:
        got = lines[0].split(",")
        want = HEADER.split(",")
        for j, (g, w) in enumerate(zip(got, want)):
            if g != w:
                raise CohortValidationError(f"{path}: header column {j}: expected {w!r}, got {g!r}")
        raise CohortValidationError(f"{path}: header has {len(got)} columns, expected {len(want)}")
    rows = []
    for i, line in enumerate(lines[1:]):
        fields = line.split(",")
        if len(fields) != N_FEATURES + 1:
            raise CohortValidationError(
                f"{path}: row {i}: expected {N_FEATURES + 1} fields, got {len(fields)}"
            )
        try:
            vals = [float(f) for f in fields]
        except ValueError:
            bad = next(j for j, f in enumerate(fields) if not _is_float(f))
            raise CohortValidationError(
                f"{path}: row {i}, column {_column_name(bad)}: not a number: {fields[bad]!r}"
            ) from None
        if any(math.isnan(v) for v in vals):
            bad = next(j for j, v in enumerate(vals) if math.isnan(v))
            raise CohortValidationError(f"{path}: row {i}, column {_column_name(bad)}: missing value")
        rows.append(vals)
    if not rows:
        raise CohortValidationError(f"{path}: no data rows")
    data = np.array(rows, dtype=np.float64)
    try:
        return Cohort(name or str(path), data[:, :N_FEATURES], data[:, N_FEATURES])
    except CohortValidationError as exc:
        raise CohortValidationError(f"{path}: {exc}") from None


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def _column_name(j: int) -> str:
    cols = FEATURES + ["Response"]
    return cols[j] if j < len(cols) else str(j)


@dataclass(frozen=True)
class DatasetUnion:
    X: np.ndarray
    y: np.ndarray
    indicator: tuple
    member_names: tuple

    @property
    def n(self) -> int:
        return self.X.shape[0]


def union(cohorts: Sequence[Cohort], members: Sequence[int]) -> DatasetUnion:
    """Concatenate the selected cohorts (0-based indices) into one dataset."""
    members = sorted(set(int(m) for m in members))
    if not members:
        raise ValueError("union needs at least one member")
    if members[0] < 0 or members[-1] >= len(cohorts):
        raise ValueError(f"member index out of range for {len(cohorts)} cohorts")
    indicator = tuple(1 if m in members else 0 for m in range(len(cohorts)))
    X = np.concatenate([cohorts[m].X for m in members], axis=0)
    y = np.concatenate([cohorts[m].y for m in members])
    return DatasetUnion(
        X=X, y=y, indicator=indicator, member_names=tuple(cohorts[m].name for m in members)
    )


def type_counts(cohort: Cohort) -> np.ndarray:
    return cohort.X[:, TYPE_SLICE].sum(axis=0).astype(int)
