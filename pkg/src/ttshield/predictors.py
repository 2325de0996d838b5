"""Target models: elastic-net logistic regression and shallow MLPs.

Both trainers standardize internally and return models that consume raw
features. LR parameters are folded back to raw scale (w = w~/sigma,
b = b~ - sum w~ mu/sigma); the MLP keeps its standardizer and applies it on
predict, with an explicit raw-scale flatten for parameter-level consumers.
Mechanisms: "vanilla" trains once on a seeded stratified 80% split,
"averaged" means J repetitions of K-fold training with the raw-scale
parameter vectors arithmetically averaged.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import roc_auc_score, roc_curve
from sklearn.model_selection import StratifiedKFold, train_test_split

from .nn import MlpParams, flatten_params, predict_probs, train_mlp, unflatten_params
from .seeds import child_seed
from .tt import Standardizer, TensorTrain, tt_classify_batch

__all__ = [
    "LrHyper",
    "MlpHyper",
    "LogisticModel",
    "MlpModel",
    "TrainingMechanism",
    "lr_train",
    "lr_logit",
    "lr_predict",
    "lr_objective",
    "mlp_train",
    "mlp_predict",
    "mlp_raw_flatten",
    "model_param_vector",
    "train_mechanism",
    "predict_scores",
    "eval_metrics",
    "youden_threshold",
    "model_to_json",
    "model_from_json",
    "save_model",
    "load_model",
]


@dataclass(frozen=True)
class LrHyper:
    l1_ratio: float = 0.5
    C: float = 1.0
    class_weight: str | None = "balanced"
    max_iter: int = 100

    def to_dict(self) -> dict:
        return {
            "l1_ratio": self.l1_ratio,
            "C": self.C,
            "class_weight": self.class_weight,
            "max_iter": self.max_iter,
        }


@dataclass(frozen=True)
class MlpHyper:
    hidden: tuple = (19, 19)
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 1e-5

    def to_dict(self) -> dict:
        return {
            "hidden": list(self.hidden),
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "weight_decay": self.weight_decay,
        }


@dataclass(frozen=True)
class LogisticModel:
    """Raw-scale coefficients; the standardizer is the training snapshot only."""

    w: np.ndarray
    b: float
    standardizer: Standardizer
    hyper: dict = field(default_factory=dict)
    dp: dict | None = None

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        object.__setattr__(self, "w", w)
        if not (np.all(np.isfinite(w)) and np.isfinite(self.b)):
            raise ValueError("logistic parameters must be finite")
        if len(self.standardizer) != w.size:
            raise ValueError("standardizer length does not match weights")

    @property
    def n_features(self) -> int:
        return self.w.size


@dataclass(frozen=True)
class MlpModel:
    """ReLU net on standardized inputs; predict() applies the standardizer."""

    params: MlpParams
    standardizer: Standardizer
    hyper: dict = field(default_factory=dict)
    dp: dict | None = None

    @property
    def n_features(self) -> int:
        return self.params.sizes[0]


@dataclass(frozen=True)
class TrainingMechanism:
    kind: str = "vanilla"
    J: int = 1
    K: int = 3

    def __post_init__(self):
        if self.kind not in ("vanilla", "averaged"):
            raise ValueError(f"unknown mechanism kind {self.kind!r}")
        if self.kind == "averaged" and (self.J < 1 or self.K < 2):
            raise ValueError("averaged mechanism needs J >= 1 and K >= 2")


def _check_training_data(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError(f"bad training data shapes {X.shape} vs {y.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary 0/1")
    if np.sum(y == 0) < 2 or np.sum(y == 1) < 2:
        raise ValueError("need at least 2 samples of each class")
    return X, y


def _sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def lr_train(X, y, hyper: LrHyper = LrHyper(), seed: int = 0) -> LogisticModel:
    X, y = _check_training_data(X, y)
    std = Standardizer.fit(X)
    clf = LogisticRegression(
        solver="saga",
        penalty="elasticnet",
        l1_ratio=hyper.l1_ratio,
        C=hyper.C,
        class_weight=hyper.class_weight,
        max_iter=hyper.max_iter,
        random_state=int(seed) % (2**32),
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        clf.fit(std.transform(X), y)
    w_std = clf.coef_.ravel()
    b_std = float(clf.intercept_[0])
    w = w_std / std.sigma
    b = b_std - float(np.sum(w_std * std.mu / std.sigma))
    return LogisticModel(w=w, b=b, standardizer=std, hyper=hyper.to_dict())


def lr_logit(model: LogisticModel, x) -> np.ndarray | float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return float(x @ model.w + model.b)
    return x @ model.w + model.b


def lr_predict(model: LogisticModel, x):
    z = lr_logit(model, x)
    if np.ndim(z) == 0:
        return float(_sigmoid(np.array(z)))
    return _sigmoid(z)


def lr_objective(w, b, X, y, hyper: LrHyper, sample_weight=None) -> float:
    """Penalized loss in the same parametrization the trainer minimizes:

    C * sum_i s_i * bce_i + l1_ratio*|w|_1 + (1-l1_ratio)/2*|w|_2^2
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    w = np.asarray(w, dtype=np.float64)
    z = X @ w + b
    bce = np.logaddexp(0.0, z) - y * z
    if sample_weight is None:
        if hyper.class_weight == "balanced":
            counts = np.array([np.sum(y == 0), np.sum(y == 1)], dtype=np.float64)
            per_class = y.size / (2.0 * counts)
            sample_weight = per_class[y.astype(int)]
        else:
            sample_weight = np.ones_like(y)
    loss = float(np.sum(np.asarray(sample_weight) * bce))
    pen = hyper.l1_ratio * np.abs(w).sum() + 0.5 * (1 - hyper.l1_ratio) * (w**2).sum()
    return hyper.C * loss + float(pen)


def mlp_train(X, y, hyper: MlpHyper = MlpHyper(), seed: int = 0) -> MlpModel:
    X, y = _check_training_data(X, y)
    std = Standardizer.fit(X)
    params = train_mlp(
        std.transform(X),
        y.reshape(-1, 1),
        hidden=list(hyper.hidden),
        epochs=hyper.epochs,
        batch_size=hyper.batch_size,
        lr=hyper.lr,
        weight_decay=hyper.weight_decay,
        seed=seed,
    )
    return MlpModel(params=params, standardizer=std, hyper=hyper.to_dict())


def mlp_predict(model: MlpModel, x) -> np.ndarray | float:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    probs = predict_probs(model.params, model.standardizer.transform(np.atleast_2d(x)))
    probs = probs.ravel()
    return float(probs[0]) if single else probs


def mlp_raw_flatten(model: MlpModel) -> np.ndarray:
    """Flattened parameters with the standardizer absorbed into layer 1.

    z1 = ((x-mu)/sigma) W1 + b1 = x (W1/sigma[:,None]) + (b1 - (mu/sigma) W1),
    so the returned vector operates on raw inputs.
    """
    w1 = model.params.weights[0]
    mu, sigma = model.standardizer.mu, model.standardizer.sigma
    w1_raw = w1 / sigma[:, None]
    b1_raw = model.params.biases[0] - (mu / sigma) @ w1
    raw = MlpParams(
        (w1_raw,) + model.params.weights[1:],
        (b1_raw,) + model.params.biases[1:],
    )
    return flatten_params(raw)


def model_param_vector(model) -> np.ndarray:
    """Raw-scale parameter vector (LR: [w, b]; MLP: absorbed flatten)."""
    if isinstance(model, LogisticModel):
        return np.concatenate([model.w, [model.b]])
    if isinstance(model, MlpModel):
        return mlp_raw_flatten(model)
    raise TypeError(f"no parameter vector for {type(model).__name__}")


def _train_one(arch: str, hyper, X, y, seed: int):
    if arch == "lr":
        return lr_train(X, y, hyper, seed)
    if arch == "mlp":
        return mlp_train(X, y, hyper, seed)
    raise ValueError(f"unknown architecture {arch!r}")


def _stratified_folds(y, K, seed, max_retries=5):
    """Fold index arrays whose training complements contain both classes."""
    for attempt in range(max_retries):
        skf = StratifiedKFold(n_splits=K, shuffle=True, random_state=(seed + attempt) % (2**32))
        folds = [test for _, test in skf.split(np.zeros_like(y), y)]
        ok = True
        for test in folds:
            train_mask = np.ones(y.size, dtype=bool)
            train_mask[test] = False
            yt = y[train_mask]
            if np.sum(yt == 0) < 2 or np.sum(yt == 1) < 2:
                ok = False
                break
        if ok:
            return folds
    raise ValueError("could not stratify folds with both classes in every split")


def train_mechanism(arch: str, hyper, X, y, mech: TrainingMechanism, seed: int = 0):
    X, y = _check_training_data(X, y)
    if mech.kind == "vanilla":
        X_tr, _, y_tr, _ = train_test_split(
            X, y, train_size=0.8, stratify=y, random_state=seed % (2**32)
        )
        return _train_one(arch, hyper, X_tr, y_tr, child_seed(seed, "vanilla"))
    vectors = []
    template = None
    for j in range(mech.J):
        folds = _stratified_folds(y, mech.K, child_seed(seed, "rep", j) % (2**31))
        for k, test in enumerate(folds):
            train_mask = np.ones(y.size, dtype=bool)
            train_mask[test] = False
            model = _train_one(
                arch, hyper, X[train_mask], y[train_mask], child_seed(seed, "rep", j, "fold", k)
            )
            vectors.append(model_param_vector(model))
            template = model
    mean = np.mean(vectors, axis=0)
    n = X.shape[1]
    if arch == "lr":
        return LogisticModel(
            w=mean[:n],
            b=float(mean[n]),
            standardizer=Standardizer.identity(n),
            hyper=dict(template.hyper),
        )
    sizes = template.params.sizes
    return MlpModel(
        params=unflatten_params(mean, sizes),
        standardizer=Standardizer.identity(n),
        hyper=dict(template.hyper),
    )


def predict_scores(model, X) -> np.ndarray:
    """Probability-of-positive scores on raw inputs for any supported scorer."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if isinstance(model, LogisticModel):
        return np.asarray(lr_predict(model, X))
    if isinstance(model, MlpModel):
        return np.asarray(mlp_predict(model, X))
    if isinstance(model, TensorTrain):
        return tt_classify_batch(model, X)
    if callable(model):
        return np.asarray(model(X), dtype=np.float64).ravel()
    raise TypeError(f"cannot score with {type(model).__name__}")


def youden_threshold(y_true, scores) -> float:
    fpr, tpr, thresholds = roc_curve(y_true, scores)
    return float(thresholds[np.argmax(tpr - fpr)])


def eval_metrics(model, X, y) -> dict:
    y = np.asarray(y, dtype=np.float64).ravel()
    if np.unique(y).size < 2:
        raise ValueError("metrics need both classes present")
    scores = predict_scores(model, X)
    auc = float(roc_auc_score(y, scores))
    thr = youden_threshold(y, scores)
    pred = (scores >= thr).astype(float)
    sens = float(np.mean(pred[y == 1] == 1))
    spec = float(np.mean(pred[y == 0] == 0))
    return {"balanced_accuracy": 0.5 * (sens + spec), "auc": auc}


def model_to_json(model) -> dict:
    if isinstance(model, LogisticModel):
        out = {
            "type": "lr",
            "params": [*map(float, model.w), float(model.b)],
            "standardizer": {
                "mu": [*map(float, model.standardizer.mu)],
                "sigma": [*map(float, model.standardizer.sigma)],
            },
            "hyper": dict(model.hyper),
        }
    elif isinstance(model, MlpModel):
        out = {
            "type": "mlp",
            "params": [*map(float, flatten_params(model.params))],
            "standardizer": {
                "mu": [*map(float, model.standardizer.mu)],
                "sigma": [*map(float, model.standardizer.sigma)],
            },
            "hyper": dict(model.hyper),
        }
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    if model.dp is not None:
        out["dp"] = dict(model.dp)
    return out


def model_from_json(doc: dict):
    std = Standardizer(
        mu=np.array(doc["standardizer"]["mu"], dtype=np.float64),
        sigma=np.array(doc["standardizer"]["sigma"], dtype=np.float64),
    )
    dp = doc.get("dp")
    if doc["type"] == "lr":
        params = np.array(doc["params"], dtype=np.float64)
        return LogisticModel(
            w=params[:-1], b=float(params[-1]), standardizer=std,
            hyper=dict(doc["hyper"]), dp=dp,
        )
    if doc["type"] == "mlp":
        sizes = [len(std), *doc["hyper"]["hidden"], 1]
        return MlpModel(
            params=unflatten_params(np.array(doc["params"], dtype=np.float64), sizes),
            standardizer=std,
            hyper=dict(doc["hyper"]),
            dp=dp,
        )
    raise ValueError(f"unknown model type {doc['type']!r}")


def save_model(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_json(model), fh)


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return model_from_json(json.load(fh))
