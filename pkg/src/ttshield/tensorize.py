"""Turn a trained scorer into a tensor train from restricted-access queries.

Access levels: b-WBB returns scores snapped to a b-point uniform grid, SBB
returns raw scores. The build standardizes inputs, sweeps left to right
solving one ridge-regularized sketch per site (oracle evaluations at hybrid
points: one pivot's prefix, an interpolation node at the site, another pivot's
suffix), orthogonalizes each core by SVD, folds the standardizer back in, and
gauge-randomizes the result. Bonds keep the uniform requested rank; genuinely
deficient directions are zero-padded so parameter layouts are architecture-
stable (rank 2 over 22 sites flattens to 168 values, rank 5 to 1020).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .predictors import predict_scores
from .seeds import child_rng, child_seed
from .tt import (
    STANDARDIZED,
    Standardizer,
    TensorTrain,
    tt_classify_batch,
    tt_gauge_randomize,
    tt_rescale,
)

__all__ = [
    "RIDGE",
    "QUERY_BUDGET_CONSTANT",
    "TensorizeConfig",
    "discretize",
    "select_pivots",
    "ScoreOracle",
    "FunctionOracle",
    "tt_sketch_build",
    "tensorize_model",
    "score_agreement",
]

logger = logging.getLogger(__name__)

RIDGE = 1e-8
QUERY_BUDGET_CONSTANT = 2
_RANK_TOL = 1e-10


@dataclass(frozen=True)
class TensorizeConfig:
    pivot_count: int = 50
    ranks: int = 2
    bins: int | None = 2
    seed: int = 0

    def __post_init__(self):
        if self.ranks < 1:
            raise ValueError("ranks must be >= 1")
        if self.pivot_count < self.ranks:
            raise ValueError("pivot_count must be >= ranks")
        if self.bins is not None and self.bins < 2:
            raise ValueError("bins must be >= 2 (or None for raw scores)")


def discretize(score: float, b: int):
    """Snap to the uniform grid {0, 1/(b-1), ..., 1}; midpoints go down."""
    if b < 2:
        raise ValueError("bins must be >= 2")
    s = np.asarray(score, dtype=np.float64)
    out_of_range = (s < 0) | (s > 1)
    if np.any(out_of_range):
        logger.warning("discretize: %d score(s) outside [0, 1], clamped", int(out_of_range.sum()))
        s = np.clip(s, 0.0, 1.0)
    idx = np.ceil(s * (b - 1) - 0.5)
    idx = np.clip(idx, 0, b - 1)
    result = idx / (b - 1)
    return float(result) if np.isscalar(score) else result


def select_pivots(X, count: int, seed: int) -> np.ndarray:
    """Uniform sample of rows without replacement, deterministic in seed."""
    X = np.asarray(X, dtype=np.float64)
    if count > X.shape[0]:
        raise ValueError(f"cannot draw {count} pivots from {X.shape[0]} samples")
    idx = child_rng(seed, "pivots").choice(X.shape[0], size=count, replace=False)
    return X[idx].copy()


class ScoreOracle:
    """b-WBB (bins set) or SBB (bins None) view of a positive-class scorer.

    Consumes points in the build's standardized coordinates and maps them back
    to raw features before scoring. Query counts and the set of distinct
    (post-discretization) scores are recorded for budget auditing.
    """

    def __init__(self, target, standardizer: Standardizer, bins: int | None = None):
        self.target = target
        self.standardizer = standardizer
        self.bins = bins
        self.n_queries = 0
        self.seen_scores = set()

    @property
    def access(self) -> str:
        return "sbb" if self.bins is None else f"wbb{self.bins}"

    def _scores(self, X_std) -> np.ndarray:
        X_raw = self.standardizer.inverse(np.atleast_2d(X_std))
        p = np.clip(predict_scores(self.target, X_raw), 0.0, 1.0)
        if self.bins is not None:
            p = discretize(p, self.bins)
        self.seen_scores.update(float(v) for v in p)
        return p

    def query(self, x_std, y: int) -> float:
        self.n_queries += 1
        p = float(self._scores(np.asarray(x_std)[None, :])[0])
        return p if y == 1 else 1.0 - p

    def amplitudes(self, X_std) -> np.ndarray:
        """Per-class amplitudes (sqrt scores) for a batch; counts both classes."""
        p = self._scores(X_std)
        self.n_queries += 2 * p.size
        return np.column_stack([np.sqrt(1.0 - p), np.sqrt(p)])


class FunctionOracle:
    """Direct amplitude access f(x, y) for analytic targets; no discretization."""

    def __init__(self, amp_fn):
        self.amp_fn = amp_fn
        self.n_queries = 0
        self.seen_scores = set()
        self.access = "sbb"

    def query(self, x, y: int) -> float:
        self.n_queries += 1
        return float(self.amp_fn(np.asarray(x)[None, :])[0, y]) ** 2

    def amplitudes(self, X) -> np.ndarray:
        a = np.asarray(self.amp_fn(np.atleast_2d(X)), dtype=np.float64)
        self.n_queries += a.size
        return a


def _ridge_solve(L: np.ndarray, B: np.ndarray) -> np.ndarray:
    gram = L.T @ L + RIDGE * np.eye(L.shape[1])
    return np.linalg.solve(gram, L.T @ B)


def tt_sketch_build(oracle, pivots, config: TensorizeConfig) -> TensorTrain:
    """Left-to-right sketched construction over the pivots' coordinates.

    Site n's core is solved from oracle amplitudes at hybrid points
    (prefix of pivot a, interpolation node at n, suffix of pivot c, class y)
    against the running prefix contraction L. Total oracle queries stay within
    QUERY_BUDGET_CONSTANT * |pivots|^2 * n_sites * d.
    """
    pivots = np.asarray(pivots, dtype=np.float64)
    P, n_feat = pivots.shape
    if P < config.ranks:
        raise ValueError("need at least as many pivots as the requested rank")
    n_sites = n_feat + 1
    d = 2
    start_queries = oracle.n_queries
    r_req = config.ranks
    cores = []
    L = np.ones((P, 1))
    prev_r = 1
    for n in range(n_feat):
        col = pivots[:, n]
        lo, hi = float(col.min()), float(col.max())
        if hi - lo < 1e-9:
            hi = lo + 1.0
        nodes = np.array([lo, hi])
        # hybrid evaluation points: (a, node, c) -> features
        Xh = np.empty((P, 2, P, n_feat))
        Xh[..., :n] = pivots[:, None, None, :n]
        Xh[..., n] = nodes[None, :, None]
        Xh[..., n + 1 :] = pivots[None, None, :, n + 1 :]
        amps = oracle.amplitudes(Xh.reshape(-1, n_feat))
        B = amps.reshape(P, 2, P * 2)
        # node values -> embedding coefficients: g = V^-1 [f(lo); f(hi)]
        V = np.array([[1.0, lo], [1.0, hi]])
        B_emb = np.einsum("kj,pjm->pkm", np.linalg.inv(V), B)
        theta = _ridge_solve(L, B_emb.reshape(P, 2 * 2 * P))
        mat = theta.reshape(prev_r * d, 2 * P)
        U, s, _ = np.linalg.svd(mat, full_matrices=False)
        eff = int(np.sum(s > _RANK_TOL * max(s[0], 1e-300)))
        expected = min(r_req, prev_r * d, 2 * P)
        if eff < min(r_req, prev_r * d):
            msg = "bond %d: effective rank %d below requested %d"
            if eff < expected:
                logger.warning(msg, n + 1, eff, r_req)
            else:
                logger.debug(msg, n + 1, eff, r_req)
        core = np.zeros((prev_r, d, r_req))
        take = min(r_req, U.shape[1])
        core[:, :, :take] = U[:, :take].reshape(prev_r, d, take)
        cores.append(core)
        phi = np.column_stack([np.ones(P), col])
        L = np.einsum("pr,rdq,pd->pq", L, core, phi)
        prev_r = r_req
    B_out = oracle.amplitudes(pivots)
    G_out = _ridge_solve(L, B_out)
    cores.append(G_out.reshape(prev_r, 2, 1))
    used = oracle.n_queries - start_queries
    budget = QUERY_BUDGET_CONSTANT * P * P * n_sites * d
    if used > budget:
        raise AssertionError(f"oracle query budget exceeded: {used} > {budget}")
    return TensorTrain(
        cores=tuple(cores),
        output_site=n_sites - 1,
        input_scale=STANDARDIZED,
    )


def tensorize_model(model, X_union, config: TensorizeConfig) -> TensorTrain:
    """Full pipeline: restricted oracle -> pivots -> sketch -> raw scale -> gauge."""
    X_union = np.asarray(X_union, dtype=np.float64)
    std = Standardizer.fit(X_union)
    pivots_raw = select_pivots(X_union, config.pivot_count, config.seed)
    oracle = ScoreOracle(model, std, bins=config.bins)
    tt_std = tt_sketch_build(oracle, std.transform(pivots_raw), config)
    tt_raw = tt_rescale(tt_std, std)
    return tt_gauge_randomize(tt_raw, child_seed(config.seed, "gauge"))


def score_agreement(model, tt: TensorTrain, X) -> dict:
    """Mean absolute difference between model scores and TT Born scores."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    ps_model = predict_scores(model, X)
    ps_tt = tt_classify_batch(tt, X)
    return {
        "mae": float(np.mean(np.abs(ps_model - ps_tt))),
        "max_abs": float(np.max(np.abs(ps_model - ps_tt))),
    }
