"""Tensor trains: representation, evaluation, Born-rule classification, and
bond algebra (partition function, marginals, conditioning, gauge moves,
standardization rescaling).

A tensor train (TT) here is a chain of order-3 cores ``G_n`` of shape
``(r_{n-1}, d_n, r_n)`` with boundary ranks ``r_0 = r_N = 1``.  One site is a
categorical output site (its middle dimension indexes classes); every other
site carries the degree-1 polynomial embedding ``phi(x) = [1, x]``, so the
chain evaluates a multilinear function of the raw features.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "RAW",
    "STANDARDIZED",
    "POLY1",
    "TensorTrain",
    "Standardizer",
    "TTShapeError",
    "DegenerateAmplitudeError",
    "tt_evaluate",
    "tt_amplitudes",
    "tt_amplitudes_batch",
    "tt_classify",
    "tt_classify_batch",
    "tt_element",
    "tt_partition",
    "tt_marginal",
    "tt_condition",
    "tt_condition_many",
    "tt_gauge_randomize",
    "tt_rescale",
    "tt_flatten",
    "tt_to_json",
    "tt_from_json",
    "random_tt",
]

log = logging.getLogger(__name__)

RAW = "raw"
STANDARDIZED = "standardized"
POLY1 = "poly1"

GAUGE_COND_LIMIT = 100.0


class TTShapeError(ValueError):
    """Core shapes, ranks, or argument dimensions do not line up."""


class DegenerateAmplitudeError(ArithmeticError):
    """Both class amplitudes vanished; the TT cannot classify this input."""


# ---------- containers ----------


@dataclass(frozen=True)
class Standardizer:
    """Per-feature means and standard deviations on the raw scale.

    ``sigma`` entries are strictly positive; zero-variance features are
    recorded with sigma 1 (the feature becomes a constant shift).
    """

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        sigma = np.asarray(self.sigma, dtype=np.float64).reshape(-1)
        if mu.shape != sigma.shape:
            raise TTShapeError("mu and sigma lengths differ")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise ValueError("non-finite standardizer parameters")
        if np.any(sigma <= 0):
            raise ValueError("sigma must be strictly positive")
        mu.flags.writeable = False
        sigma.flags.writeable = False
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=np.float64)
        mu = X.mean(axis=0)
        sigma = X.std(axis=0)
        sigma = np.where(sigma > 0, sigma, 1.0)
        return cls(mu, sigma)

    @classmethod
    def identity(cls, n: int) -> "Standardizer":
        return cls(np.zeros(n), np.ones(n))

    def transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        return (X - self.mu) / self.sigma

    def inverse(self, Z):
        Z = np.asarray(Z, dtype=np.float64)
        return Z * self.sigma + self.mu

    def __len__(self) -> int:
        return self.mu.size


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class TensorTrain:
    """Immutable TT: ``cores[n]`` has shape ``(r_{n-1}, d_n, r_n)``.

    ``output_site`` marks the single categorical core (no embedding); every
    other site is an input site read through ``embedding``.  ``input_scale``
    records whether input sites expect raw or standardized features.
    """

    cores: tuple
    output_site: int
    input_scale: str = RAW
    embedding: str = POLY1

    def __post_init__(self):
        cores = tuple(_freeze(np.asarray(c)) for c in self.cores)
        if not cores:
            raise TTShapeError("empty core list")
        for n, c in enumerate(cores):
            if c.ndim != 3:
                raise TTShapeError(f"core {n} is order {c.ndim}, expected 3")
            if not np.all(np.isfinite(c)):
                raise ValueError(f"core {n} contains non-finite entries")
        if cores[0].shape[0] != 1 or cores[-1].shape[2] != 1:
            raise TTShapeError("boundary ranks must be 1")
        for n in range(len(cores) - 1):
            if cores[n].shape[2] != cores[n + 1].shape[0]:
                raise TTShapeError(
                    f"rank mismatch between cores {n} and {n + 1}: "
                    f"{cores[n].shape[2]} vs {cores[n + 1].shape[0]}"
                )
        if not 0 <= self.output_site < len(cores):
            raise TTShapeError("output_site out of range")
        if self.input_scale not in (RAW, STANDARDIZED):
            raise ValueError(f"unknown input_scale {self.input_scale!r}")
        if self.embedding != POLY1:
            raise ValueError(f"unsupported embedding {self.embedding!r}")
        object.__setattr__(self, "cores", cores)

    @property
    def n_sites(self) -> int:
        return len(self.cores)

    @property
    def n_features(self) -> int:
        return len(self.cores) - 1

    @property
    def ranks(self) -> tuple:
        return (1,) + tuple(c.shape[2] for c in self.cores)

    @property
    def dims(self) -> tuple:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def n_classes(self) -> int:
        return self.cores[self.output_site].shape[1]

    def input_sites(self) -> tuple:
        return tuple(n for n in range(self.n_sites) if n != self.output_site)


# ---------- embedding and evaluation ----------


def _embed(value: float, d: int) -> np.ndarray:
    # poly1: [1, x]; only d = 2 input sites occur in this toolkit
    if d != 2:
        raise TTShapeError(f"poly1 embedding requires d=2 input sites, got d={d}")
    return np.array([1.0, float(value)])


def _check_x(tt: TensorTrain, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != tt.n_features:
        raise TTShapeError(f"expected {tt.n_features} features, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input features")
    return x


def tt_amplitudes(tt: TensorTrain, x) -> np.ndarray:
    """Amplitude vector ``f(x, y)`` over classes y, one left-to-right sweep."""
    x = _check_x(tt, x)
    left = np.ones(1)
    feat = 0
    out_core = None
    for n, core in enumerate(tt.cores):
        if n == tt.output_site:
            out_core = np.einsum("l,lyr->yr", left, core)
            left = None
            continue
        phi = _embed(x[feat], core.shape[1])
        mat = np.einsum("ldr,d->lr", core, phi)
        feat += 1
        if out_core is None:
            left = left @ mat
        else:
            out_core = out_core @ mat
    return out_core[:, 0]


def tt_evaluate(tt: TensorTrain, x, y: int) -> float:
    """Evaluate ``f(x, y)``: embedded matrix chain with class ``y`` selected."""
    amps = tt_amplitudes(tt, x)
    if not 0 <= int(y) < amps.size:
        raise TTShapeError(f"class index {y} out of range")
    return float(amps[int(y)])


def tt_amplitudes_batch(tt: TensorTrain, X) -> np.ndarray:
    """Amplitudes for a batch: returns array (n_samples, n_classes)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != tt.n_features:
        raise TTShapeError(f"expected {tt.n_features} features, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite input features")
    n = X.shape[0]
    left = np.ones((n, 1))
    carry = None  # (n, classes, r) once the output site is passed
    feat = 0
    for s, core in enumerate(tt.cores):
        if s == tt.output_site:
            carry = np.einsum("nl,lyr->nyr", left, core)
            left = None
            continue
        if core.shape[1] != 2:
            raise TTShapeError("poly1 embedding requires d=2 input sites")
        col = X[:, feat]
        feat += 1
        # per-sample transfer matrix G(1) + x * G(2)
        if carry is None:
            left = np.einsum("nl,lr->nr", left, core[:, 0, :]) + np.einsum(
                "nl,lr,n->nr", left, core[:, 1, :], col
            )
        else:
            carry = np.einsum("nyl,lr->nyr", carry, core[:, 0, :]) + np.einsum(
                "nyl,lr,n->nyr", carry, core[:, 1, :], col
            )
    return carry[:, :, 0]


def tt_classify(tt: TensorTrain, x) -> float:
    """Born-rule score over the output index: p(y=1|x) = f1^2 / (f0^2 + f1^2)."""
    amps = tt_amplitudes(tt, x)
    sq = amps * amps
    total = sq.sum()
    if total == 0.0:
        raise DegenerateAmplitudeError("all class amplitudes are zero")
    return float(sq[1] / total)


def tt_classify_batch(tt: TensorTrain, X) -> np.ndarray:
    amps = tt_amplitudes_batch(tt, X)
    sq = amps * amps
    total = sq.sum(axis=1)
    if np.any(total == 0.0):
        raise DegenerateAmplitudeError("all class amplitudes are zero for some input")
    return sq[:, 1] / total


def tt_element(tt: TensorTrain, indices: Sequence[int]) -> float:
    """Entry of the coefficient tensor W at an index string (all sites)."""
    if len(indices) != tt.n_sites:
        raise TTShapeError(f"expected {tt.n_sites} indices, got {len(indices)}")
    vec = np.ones(1)
    for core, i in zip(tt.cores, indices):
        if not 0 <= int(i) < core.shape[1]:
            raise TTShapeError("index out of range")
        vec = vec @ core[:, int(i), :]
    return float(vec[0])


# ---------- doubled-bond (squared) algebra ----------


def _transfer(core: np.ndarray) -> np.ndarray:
    """H = sum_i G(i) (x) G(i), an (r_l^2, r_r^2) transfer matrix."""
    l, d, r = core.shape
    return np.einsum("lir,mis->lmrs", core, core).reshape(l * l, r * r)


def tt_partition(tt: TensorTrain) -> float:
    """Z = sum over all index strings of T(i)^2 via the transfer-matrix chain."""
    vec = np.ones(1)
    for core in tt.cores:
        vec = vec @ _transfer(core)
    return float(vec[0])


def tt_marginal(tt: TensorTrain, keep: Iterable[int]) -> np.ndarray:
    """Unnormalized marginal over kept site indices: sum_rest T(i)^2.

    Parameters
    ----------
    keep : iterable of site indices (need not be contiguous).

    Returns
    -------
    Array with one axis per kept site, in ascending site order; dividing by
    ``tt_partition`` yields a distribution.
    """
    keep = sorted(set(int(k) for k in keep))
    if not keep:
        raise ValueError("keep set is empty")
    if keep[0] < 0 or keep[-1] >= tt.n_sites:
        raise TTShapeError("kept site out of range")
    keep_set = set(keep)
    # env has shape (d_k1, ..., d_kj, r*r); free axes accumulate left to right
    env = np.ones(1)
    for n, core in enumerate(tt.cores):
        if n in keep_set:
            l, d, r = core.shape
            dbl = np.einsum("lir,mis->ilmrs", core, core).reshape(d, l * l, r * r)
            env = np.einsum("...b,ibc->...ic", env, dbl)
        else:
            env = env @ _transfer(core)
    return np.asarray(env[..., 0])


# ---------- conditioning ----------


def _site_vector(core: np.ndarray, value) -> np.ndarray:
    """Embedding or one-hot vector used to pin a site.

    Integers (and bools) select an embedding index; floats are embedded via
    poly1, i.e. [1, x].
    """
    d = core.shape[1]
    if isinstance(value, (bool, np.bool_)) or (
        isinstance(value, (int, np.integer)) and not isinstance(value, float)
    ):
        i = int(value)
        if not 0 <= i < d:
            raise TTShapeError(f"index {i} out of range for site dimension {d}")
        v = np.zeros(d)
        v[i] = 1.0
        return v
    return _embed(float(value), d)


def tt_condition(tt: TensorTrain, site: int, value) -> TensorTrain:
    """Pin an input site to a value and absorb it into a neighboring core.

    ``value`` semantics: an int selects an embedding index, a float is read
    through the poly1 embedding.  The result has N-1 cores and agrees with the
    original TT evaluated at the fixed value.
    """
    if site == tt.output_site:
        raise ValueError("cannot condition the output site")
    if not 0 <= site < tt.n_sites:
        raise TTShapeError("site out of range")
    if tt.n_sites < 2:
        raise TTShapeError("need at least two sites to condition")
    mat = np.einsum("ldr,d->lr", tt.cores[site], _site_vector(tt.cores[site], value))
    cores = list(tt.cores)
    if site > 0:
        cores[site - 1] = np.einsum("ldk,kr->ldr", cores[site - 1], mat)
    else:
        cores[site + 1] = np.einsum("lk,kdr->ldr", mat, cores[site + 1])
    del cores[site]
    out = tt.output_site - 1 if tt.output_site > site else tt.output_site
    return replace(tt, cores=tuple(cores), output_site=out)


def tt_condition_many(tt: TensorTrain, assignments: dict) -> TensorTrain:
    """Condition several input sites at once ({site: value}, original indices)."""
    for site in sorted(assignments, reverse=True):
        tt = tt_condition(tt, site, assignments[site])
    return tt


# ---------- gauge transformation ----------


def tt_gauge_randomize(tt: TensorTrain, seed) -> TensorTrain:
    """Insert random M, M^-1 pairs on every internal bond.

    Each M is drawn with i.i.d. standard-normal entries and redrawn until its
    condition number is below 100, bounding numerical error while scrambling
    the individual cores.  Evaluations are preserved to ~1e-8.
    """
    rng = np.random.default_rng(seed)
    cores = [np.array(c) for c in tt.cores]
    for n in range(len(cores) - 1):
        r = cores[n].shape[2]
        while True:
            m = rng.standard_normal((r, r))
            if np.linalg.cond(m) < GAUGE_COND_LIMIT:
                break
        inv = np.linalg.inv(m)
        cores[n] = np.einsum("ldk,kr->ldr", cores[n], m)
        cores[n + 1] = np.einsum("lk,kdr->ldr", inv, cores[n + 1])
    return replace(tt, cores=tuple(cores))


# ---------- standardization rescaling ----------


def tt_rescale(tt: TensorTrain, s: Standardizer) -> TensorTrain:
    """Fold a standardizer into the cores so the TT consumes raw inputs.

    Per input site with feature j: G(1) <- G(1) - (mu_j/sigma_j) G(2) and
    G(2) <- G(2)/sigma_j, an exact reparameterization of f((x-mu)/sigma).
    """
    if tt.input_scale != STANDARDIZED:
        raise ValueError("tt_rescale expects a standardized-input TT")
    if tt.embedding != POLY1:
        raise ValueError(f"unsupported embedding {tt.embedding!r}")
    if len(s) != tt.n_features:
        raise TTShapeError(
            f"standardizer length {len(s)} != feature count {tt.n_features}"
        )
    cores = list(tt.cores)
    for j, site in enumerate(tt.input_sites()):
        core = cores[site]
        if core.shape[1] != 2:
            raise TTShapeError("poly1 embedding requires d=2 input sites")
        new = np.empty_like(core)
        new[:, 0, :] = core[:, 0, :] - (s.mu[j] / s.sigma[j]) * core[:, 1, :]
        new[:, 1, :] = core[:, 1, :] / s.sigma[j]
        cores[site] = new
    return replace(tt, cores=tuple(cores), input_scale=RAW)


# ---------- flattening and serialization ----------


def tt_flatten(tt: TensorTrain) -> np.ndarray:
    """All cores raveled row-major and concatenated (the WB parameter vector)."""
    return np.concatenate([c.ravel(order="C") for c in tt.cores])


def tt_to_json(tt: TensorTrain) -> str:
    doc = {
        "ranks": list(tt.ranks),
        "dims": list(tt.dims),
        "output_site": tt.output_site,
        "cores": [c.ravel(order="C").tolist() for c in tt.cores],
        "input_scale": tt.input_scale,
        "embedding": tt.embedding,
    }
    return json.dumps(doc)


def tt_from_json(text: str) -> TensorTrain:
    doc = json.loads(text)
    ranks = doc["ranks"]
    dims = doc["dims"]
    cores = []
    for n, flat in enumerate(doc["cores"]):
        shape = (ranks[n], dims[n], ranks[n + 1])
        cores.append(np.array(flat, dtype=np.float64).reshape(shape))
    return TensorTrain(
        cores=tuple(cores),
        output_site=int(doc["output_site"]),
        input_scale=doc["input_scale"],
        embedding=doc.get("embedding", POLY1),
    )


# ---------- construction helpers ----------


def random_tt(
    n_sites: int,
    rank: int,
    seed,
    d: int = 2,
    output_site: int | None = None,
    input_scale: str = RAW,
    scale: float = 1.0,
) -> TensorTrain:
    """Random TT with uniform internal rank, used by tests and demos."""
    rng = np.random.default_rng(seed)
    if output_site is None:
        output_site = n_sites - 1
    ranks = [1] + [rank] * (n_sites - 1) + [1]
    cores = [
        rng.standard_normal((ranks[n], d, ranks[n + 1])) * scale
        for n in range(n_sites)
    ]
    return TensorTrain(
        cores=tuple(cores),
        output_site=output_site,
        input_scale=input_scale,
    )
