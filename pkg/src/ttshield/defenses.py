"""Differential-privacy baselines for the target models.

LR: L2-regularized training on row-clipped standardized inputs, then output
perturbation with L2-sensitivity 2/(n*lambda): noise direction uniform, norm
Gamma(dim, 2/(n*lambda*eps)). MLP: DP-SGD with per-sample clipping to norm 1
and Gaussian noise sigma*clip on batch-summed gradients; epsilon is reported
through the fixed sigma<->epsilon correspondence rather than an accountant.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LogisticRegression

from .nn import train_mlp
from .predictors import LogisticModel, LrHyper, MlpHyper, MlpModel
from .seeds import child_rng
from .tt import Standardizer

__all__ = [
    "DpConfig",
    "LR_EPSILON_GRID",
    "SGD_SIGMA_GRID",
    "sigma_to_epsilon",
    "dp_noise_coordinate_std",
    "dp_lr_train",
    "dp_sgd_train",
]

LR_EPSILON_GRID = (0.1, 1.0, 10.0, 100.0)
SGD_SIGMA_GRID = (20.0, 5.0, 1.0, 0.0)
_SIGMA_TO_EPS = {20.0: 0.2, 5.0: 1.0, 1.0: 10.0, 0.0: math.inf}


@dataclass(frozen=True)
class DpConfig:
    """Noise settings: epsilon drives LR output perturbation, sigma drives DP-SGD."""

    epsilon: float | None = None
    sigma: float | None = None
    clip: float = 1.0
    delta: float = 1e-4
    epochs: int = 50
    batch_size: int = 32

    def __post_init__(self):
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.sigma is not None and self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.clip <= 0:
            raise ValueError("clip norm must be positive")


def sigma_to_epsilon(sigma: float) -> float | None:
    """Published noise-multiplier to privacy-budget correspondence."""
    return _SIGMA_TO_EPS.get(float(sigma))


def dp_noise_coordinate_std(n: int, lam: float, epsilon: float, dim: int) -> float:
    """Per-coordinate std of the output-perturbation noise.

    Norm ~ Gamma(dim, theta) with uniform direction gives E[eta_i^2] =
    theta^2 * dim * (dim + 1) / dim.
    """
    theta = 2.0 / (n * lam * epsilon)
    return theta * math.sqrt(dim + 1)


def dp_lr_train(X, y, epsilon: float, hyper: LrHyper = LrHyper(l1_ratio=0.0), seed: int = 0) -> LogisticModel:
    """Output-perturbed L2 logistic regression (vanilla mechanism only)."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if np.sum(y == 0) < 2 or np.sum(y == 1) < 2:
        raise ValueError("need at least 2 samples of each class")
    std = Standardizer.fit(X)
    Xs = std.transform(X)
    norms = np.linalg.norm(Xs, axis=1)
    Xs = Xs / np.maximum(norms, 1.0)[:, None]
    n = X.shape[0]
    lam = 1.0 / hyper.C
    clf = LogisticRegression(
        penalty="l2",
        solver="lbfgs",
        C=1.0 / (n * lam),
        class_weight=hyper.class_weight,
        max_iter=hyper.max_iter,
        random_state=int(seed) % (2**32),
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        clf.fit(Xs, y)
    theta = np.concatenate([clf.coef_.ravel(), clf.intercept_])
    dim = theta.size
    if np.isfinite(epsilon):
        rng = child_rng(seed, "dp-noise")
        direction = rng.normal(size=dim)
        direction /= np.linalg.norm(direction)
        norm = rng.gamma(shape=dim, scale=2.0 / (n * lam * epsilon))
        theta = theta + norm * direction
    w_std, b_std = theta[:-1], float(theta[-1])
    # row clipping only bounds training sensitivity; inference is unclipped
    w = w_std / std.sigma
    b = b_std - float(np.sum(w_std * std.mu / std.sigma))
    return LogisticModel(
        w=w,
        b=b,
        standardizer=std,
        hyper=dict(hyper.to_dict(), penalty="l2"),
        dp={"epsilon": None if math.isinf(epsilon) else float(epsilon),
            "delta": 0.0, "sigma": None, "clip": 1.0},
    )


def dp_sgd_train(X, y, config: DpConfig, hyper: MlpHyper = MlpHyper(), seed: int = 0) -> MlpModel:
    """DP-SGD MLP: clip per-sample grads to config.clip, add Gaussian noise."""
    if config.sigma is None:
        raise ValueError("DpConfig.sigma is required for DP-SGD")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if np.sum(y == 0) < 2 or np.sum(y == 1) < 2:
        raise ValueError("need at least 2 samples of each class")
    std = Standardizer.fit(X)
    params = train_mlp(
        std.transform(X),
        y.reshape(-1, 1),
        hidden=list(hyper.hidden),
        epochs=config.epochs,
        batch_size=config.batch_size,
        lr=hyper.lr,
        weight_decay=hyper.weight_decay,
        seed=seed,
        dp_clip=config.clip,
        dp_sigma=config.sigma,
    )
    n = X.shape[0]
    steps = config.epochs * math.ceil(n / config.batch_size)
    eps = sigma_to_epsilon(config.sigma)
    return MlpModel(
        params=params,
        standardizer=std,
        hyper=hyper.to_dict(),
        dp={
            "epsilon": None if eps is None or math.isinf(eps) else eps,
            "delta": config.delta,
            "sigma": config.sigma,
            "clip": config.clip,
            "steps": steps,
            "sampling_rate": min(1.0, config.batch_size / n),
        },
    )
