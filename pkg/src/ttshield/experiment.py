"""Desk-scale experiment engine: config, attack score tables, artifacts.

A single master seed fixes every cell of every table: cohort draws, shadow
farm jobs, probe choice, adversary folds and bootstrap draws are all keyed
off it with labelled child seeds.  Each shadow farm is trained once per
table row and re-read at every access level, so white-box and black-box
columns describe the same models.

Artifacts are content-addressed (name carries a digest of the bytes) and
never overwritten, so reruns of an identical config map onto identical
files and differing runs never clobber each other.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cohorts import default_specs, generate_cohorts, union
from .defenses import LR_EPSILON_GRID, dp_lr_train
from .predictors import (
    LrHyper,
    MlpHyper,
    TrainingMechanism,
    eval_metrics,
    lr_train,
    predict_scores,
)
from .privacy import (
    ACCESS_LEVELS,
    AttackCorpus,
    AttackRecord,
    TargetSpec,
    canonical_lr_vector,
    extract_corpus,
    invert_monotone_map,
    recover_lr_via_endpoint,
    run_attack,
    select_probes,
    shuffle_labels,
    train_shadow_models,
)
from .seeds import child_rng, child_seed
from .tensorize import TensorizeConfig, tensorize_model

ACCESS_LABELS = {
    "wbb2": "2-WBB",
    "wbb6": "6-WBB",
    "wbb10": "10-WBB",
    "sbb": "SBB",
    "wb": "WB",
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Desk-scale defaults: three cohorts, a two-point hyper grid, R=20."""

    sizes: tuple = (320, 280, 240)
    rate: float = 0.3
    # drift 0.2 keeps the black-box cells off the ceiling so the access
    # ordering is visible; at 0.3 every LR cell rounds to 1.0
    drift: float = 0.2
    lr_grid: tuple = (LrHyper(), LrHyper(l1_ratio=0.0, C=0.1))
    mlp_hyper: MlpHyper = MlpHyper()
    averaged_J: int = 20
    averaged_K: int = 3
    # C=32 puts the whole epsilon grid inside the regime where noise visibly
    # trades attack success against held-out accuracy; at C=1 the two largest
    # budgets are indistinguishable from the unnoised model
    dp_hyper: LrHyper = LrHyper(l1_ratio=0.0, C=32.0)
    bins: tuple = (2, 6, 10)
    eps_grid: tuple = LR_EPSILON_GRID
    access_levels: tuple = ACCESS_LEVELS
    R: int = 20
    n_probes: int = 100
    repeats: int = 5
    folds: int = 5
    max_union_size: int | None = 2
    tt_rank: int = 2
    tt_pivots: int = 50
    seed: int = 0

    def __post_init__(self):
        if any(s < 2 for s in self.sizes):
            raise ValueError("cohort sizes must be at least 2")
        for level in self.access_levels:
            if level not in ACCESS_LEVELS:
                raise ValueError(f"unknown access level: {level}")

    def to_dict(self) -> dict:
        return {
            "sizes": list(self.sizes),
            "rate": self.rate,
            "drift": self.drift,
            "lr_grid": [h.to_dict() for h in self.lr_grid],
            "mlp_hyper": self.mlp_hyper.to_dict(),
            "averaged_J": self.averaged_J,
            "averaged_K": self.averaged_K,
            "dp_hyper": self.dp_hyper.to_dict(),
            "bins": list(self.bins),
            "eps_grid": list(self.eps_grid),
            "access_levels": list(self.access_levels),
            "R": self.R,
            "n_probes": self.n_probes,
            "repeats": self.repeats,
            "folds": self.folds,
            "max_union_size": self.max_union_size,
            "tt_rank": self.tt_rank,
            "tt_pivots": self.tt_pivots,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(overrides: dict) -> "ExperimentConfig":
        base = ExperimentConfig().to_dict()
        unknown = set(overrides) - set(base)
        if unknown:
            raise ValueError(f"unknown config key: {sorted(unknown)[0]}")
        base.update(overrides)
        base["sizes"] = tuple(base["sizes"])
        base["lr_grid"] = tuple(
            h if isinstance(h, LrHyper) else _lr_hyper_from_dict(h) for h in base["lr_grid"]
        )
        if not isinstance(base["mlp_hyper"], MlpHyper):
            base["mlp_hyper"] = _mlp_hyper_from_dict(base["mlp_hyper"])
        if not isinstance(base["dp_hyper"], LrHyper):
            base["dp_hyper"] = _lr_hyper_from_dict(base["dp_hyper"])
        base["bins"] = tuple(int(b) for b in base["bins"])
        base["eps_grid"] = tuple(float(e) for e in base["eps_grid"])
        base["access_levels"] = tuple(base["access_levels"])
        return ExperimentConfig(**base)


def _lr_hyper_from_dict(d: dict) -> LrHyper:
    return LrHyper(**d)


def _mlp_hyper_from_dict(d: dict) -> MlpHyper:
    d = dict(d)
    d["hidden"] = tuple(d["hidden"])
    return MlpHyper(**d)


def config_hash(config: ExperimentConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def make_cohorts(config: ExperimentConfig) -> list:
    specs = default_specs(
        sizes=config.sizes,
        rate=config.rate,
        drift=config.drift,
        seed=child_seed(config.seed, "specs"),
    )
    return generate_cohorts(specs, seed=child_seed(config.seed, "data"))


def default_rows(config: ExperimentConfig) -> dict:
    """Ordered table rows: row id -> target specs trained for that row."""
    averaged = TrainingMechanism("averaged", J=config.averaged_J, K=config.averaged_K)
    rows = {
        "lr/vanilla": tuple(TargetSpec("lr", h) for h in config.lr_grid),
        "lr/averaged": tuple(TargetSpec("lr", h, mechanism=averaged) for h in config.lr_grid),
        "mlp/vanilla": (TargetSpec("mlp", config.mlp_hyper),),
    }
    for b in config.bins:
        tc = TensorizeConfig(config.tt_pivots, config.tt_rank, int(b), 0)
        rows[f"tt-lr/b={b}"] = tuple(TargetSpec("lr", h, tensorize=tc) for h in config.lr_grid)
    return rows


@dataclass(frozen=True)
class ScoreTable:
    row_names: tuple
    columns: tuple
    means: tuple
    stds: tuple

    def __post_init__(self):
        if len(self.means) != len(self.row_names) or len(self.stds) != len(self.row_names):
            raise ValueError("one mean/std row per table row")
        for m, s in zip(self.means, self.stds):
            if len(m) != len(self.columns) or len(s) != len(self.columns):
                raise ValueError("one mean/std per column")

    def cell(self, row: str, column: str) -> tuple:
        i = self.row_names.index(row)
        j = self.columns.index(column)
        return self.means[i][j], self.stds[i][j]

    def to_csv_bytes(self) -> bytes:
        lines = ["model,access,mean,std"]
        for i, row in enumerate(self.row_names):
            for j, col in enumerate(self.columns):
                lines.append(f"{row},{col},{self.means[i][j]!r},{self.stds[i][j]!r}")
        return ("\n".join(lines) + "\n").encode()

    @staticmethod
    def from_csv_bytes(data: bytes) -> "ScoreTable":
        lines = data.decode().strip().split("\n")
        if lines[0] != "model,access,mean,std":
            raise ValueError("unexpected score table header")
        rows, columns, cells = [], [], {}
        for line in lines[1:]:
            row, col, m, s = line.split(",")
            if row not in rows:
                rows.append(row)
            if col not in columns:
                columns.append(col)
            cells[(row, col)] = (float(m), float(s))
        means = tuple(tuple(cells[(r, c)][0] for c in columns) for r in rows)
        stds = tuple(tuple(cells[(r, c)][1] for c in columns) for r in rows)
        return ScoreTable(tuple(rows), tuple(columns), means, stds)

    def render(self) -> str:
        labels = [ACCESS_LABELS.get(c, c) for c in self.columns]
        cells = [
            [f"{self.means[i][j]:.3f} ± {self.stds[i][j]:.3f}" for j in range(len(labels))]
            for i in range(len(self.row_names))
        ]
        name_w = max(len("model"), *(len(r) for r in self.row_names))
        widths = [
            max(len(labels[j]), *(len(row[j]) for row in cells)) for j in range(len(labels))
        ]
        out = io.StringIO()
        header = ["model".ljust(name_w)] + [labels[j].rjust(widths[j]) for j in range(len(labels))]
        out.write("  ".join(header) + "\n")
        out.write("-" * (name_w + sum(widths) + 2 * len(labels)) + "\n")
        for i, row in enumerate(self.row_names):
            line = [row.ljust(name_w)] + [cells[i][j].rjust(widths[j]) for j in range(len(labels))]
            out.write("  ".join(line) + "\n")
        return out.getvalue()


@dataclass(frozen=True)
class SuiteResult:
    table: ScoreTable
    results: dict
    failures: tuple
    manifest: dict


def run_attack_suite(
    config: ExperimentConfig,
    rows: dict | None = None,
    workers: int = 1,
) -> SuiteResult:
    """Train one farm per row, score it at every configured access level."""
    cohorts = make_cohorts(config)
    if rows is None:
        rows = default_rows(config)
    probe_ids, probes = select_probes(cohorts, config.n_probes, config.seed)
    results, failures = {}, []
    for row, specs in rows.items():
        models, fails = train_shadow_models(
            cohorts,
            specs,
            R=config.R,
            seed=child_seed(config.seed, "farm", row),
            max_union_size=config.max_union_size,
            workers=workers,
        )
        failures.extend({"row": row, **f} for f in fails)
        results[row] = {}
        for level in config.access_levels:
            corpus = extract_corpus(
                models,
                level,
                probes=None if level == "wb" else probes,
                manifest={"row": row, "access": level},
            )
            results[row][level] = run_attack(
                corpus,
                repeats=config.repeats,
                folds=config.folds,
                seed=child_seed(config.seed, "attack", row, level),
            )
    table = ScoreTable(
        row_names=tuple(rows),
        columns=tuple(config.access_levels),
        means=tuple(
            tuple(results[r][c].mean for c in config.access_levels) for r in rows
        ),
        stds=tuple(
            tuple(results[r][c].std for c in config.access_levels) for r in rows
        ),
    )
    manifest = {
        "config": config.to_dict(),
        "config_hash": config_hash(config),
        "master_seed": config.seed,
        "rows": list(rows),
        "access_levels": list(config.access_levels),
        "probe_ids": probe_ids,
        "n_failures": len(failures),
        "failures": failures,
    }
    return SuiteResult(table, results, tuple(failures), manifest)


def dp_attack_sweep(config: ExperimentConfig, cohorts, workers: int = 1) -> dict:
    """White-box attack score per privacy budget on output-perturbed LR farms."""
    out = {}
    for eps in config.eps_grid:
        spec = TargetSpec("lr", config.dp_hyper, dp_epsilon=float(eps))
        models, fails = train_shadow_models(
            cohorts,
            (spec,),
            R=config.R,
            seed=child_seed(config.seed, "dp-farm", repr(float(eps))),
            max_union_size=config.max_union_size,
            workers=workers,
        )
        if fails:
            raise RuntimeError(f"dp farm failed at eps={eps}: {fails[0]['error']}")
        corpus = extract_corpus(models, "wb", manifest={"eps": float(eps)})
        out[float(eps)] = run_attack(
            corpus,
            repeats=config.repeats,
            folds=config.folds,
            seed=child_seed(config.seed, "dp-attack", repr(float(eps))),
        )
    return out


def _holdout_split(n, frac, rng):
    order = rng.permutation(n)
    cut = int(round(n * frac))
    return order[:cut], order[cut:]


def dp_accuracy_sweep(config: ExperimentConfig, cohorts, n_seeds: int = 20) -> dict:
    """Mean held-out balanced accuracy per epsilon, plus the unnoised baseline."""
    d = union(cohorts, list(range(len(cohorts))))
    out = {"baseline": 0.0}
    accs = {float(eps): [] for eps in config.eps_grid}
    base = []
    for s in range(n_seeds):
        rng = child_rng(config.seed, "dp-ba", s)
        tr, te = _holdout_split(d.X.shape[0], 0.8, rng)
        if np.unique(d.y[te]).size < 2 or np.unique(d.y[tr]).size < 2:
            continue
        plain = lr_train(d.X[tr], d.y[tr], config.dp_hyper, seed=child_seed(config.seed, "dp-ba", s))
        base.append(eval_metrics(plain, d.X[te], d.y[te])["balanced_accuracy"])
        # one noise seed per repetition, shared across the grid: epsilons then
        # differ only by the noise scale, not by the draw, so the sweep
        # isolates the budget effect instead of comparing unrelated draws
        noise_seed = child_seed(config.seed, "dp-ba", s, "noise")
        for eps in config.eps_grid:
            noised = dp_lr_train(d.X[tr], d.y[tr], float(eps), config.dp_hyper, seed=noise_seed)
            accs[float(eps)].append(eval_metrics(noised, d.X[te], d.y[te])["balanced_accuracy"])
    out["baseline"] = float(np.mean(base))
    for eps, vals in accs.items():
        out[eps] = float(np.mean(vals))
    return out


def tt_accuracy_tradeoff(config: ExperimentConfig, cohorts, b: int = 2) -> dict:
    """Held-out balanced accuracy of a trained LR and its discretized TT copy."""
    d = union(cohorts, list(range(len(cohorts))))
    rng = child_rng(config.seed, "tt-ba")
    tr, te = _holdout_split(d.X.shape[0], 0.8, rng)
    model = lr_train(d.X[tr], d.y[tr], config.lr_grid[0], seed=child_seed(config.seed, "tt-ba"))
    tc = TensorizeConfig(
        config.tt_pivots, config.tt_rank, int(b), child_seed(config.seed, "tt-ba", "sketch")
    )
    tt = tensorize_model(model, d.X[tr], tc)
    return {
        "ba_model": eval_metrics(model, d.X[te], d.y[te])["balanced_accuracy"],
        "ba_tt": eval_metrics(tt, d.X[te], d.y[te])["balanced_accuracy"],
    }


def canonical_wb_corpus(models) -> AttackCorpus:
    """White-box corpus over the identifiable coefficient parametrization.

    Recovery through a query interface can only pin coefficients up to the
    one-hot gauge, so adversaries matched against recovered vectors must
    train on canonicalized shadow features as well.
    """
    records = []
    for m in models:
        feats = canonical_lr_vector(m.artifact.w, m.artifact.b)
        records.append(
            AttackRecord(feats, m.label, {**m.provenance, "access": "wb-canonical"})
        )
    return AttackCorpus(tuple(records), "wb", {"canonical": True})


def shuffled_baseline(corpus, repeats: int, folds: int, seed: int):
    """Attack score on the same corpus with labels permuted: the chance floor."""
    return run_attack(
        shuffle_labels(corpus, seed=child_seed(seed, "shuffle")),
        repeats=repeats,
        folds=folds,
        seed=child_seed(seed, "shuffled-attack"),
    )


@dataclass(frozen=True)
class DisplayedModel:
    """Scorer whose outputs pass through a monotone display map before release."""

    model: object
    display: object

    def __call__(self, X) -> np.ndarray:
        raw = predict_scores(self.model, X)
        return np.asarray(self.display(raw), dtype=np.float64).ravel()


def power_display(gamma: float = 1.6):
    """Monotone score remap used when an endpoint reports a shaped risk index."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")

    def _map(s):
        return np.power(np.clip(np.asarray(s, dtype=np.float64), 0.0, 1.0), gamma)

    return _map


def display_calibration(display, n: int = 101) -> tuple:
    """(score, displayed) pairs on a uniform grid, for inverting the map."""
    if n < 2:
        raise ValueError("need at least two calibration points")
    grid = np.linspace(0.0, 1.0, n)
    shown = np.asarray(display(grid), dtype=np.float64).ravel()
    return tuple((float(s), float(v)) for s, v in zip(grid, shown))


def interface_extraction(
    scorer, display, decimals: int, calibration=None, clamp: float = 1e-3
) -> np.ndarray:
    """Canonical coefficients as seen through a rounded, display-mapped wire.

    This is the attacker's full pipeline against an in-process stand-in for
    the endpoint: query, invert the public calibration, difference logits.
    Running it on shadow models yields training features drawn from the same
    observation channel the deployed target is read through.
    """
    from .serve import wire_feature_row

    if calibration is None:
        calibration = display_calibration(display, n=201)
    shown_model = DisplayedModel(scorer, display)

    def wire(params):
        shown = round(float(shown_model(wire_feature_row(params)[None, :])[0]), decimals)
        return invert_monotone_map(calibration, shown)[0]

    return recover_lr_via_endpoint(wire, clamp=clamp)


def recovered_wb_corpus(
    models, display, decimals: int, clamp: float = 1e-3
) -> AttackCorpus:
    """White-box corpus of interface-recovered coefficient vectors."""
    calibration = display_calibration(display, n=201)
    records = []
    for m in models:
        feats = interface_extraction(m.artifact, display, decimals, calibration, clamp)
        records.append(
            AttackRecord(feats, m.label, {**m.provenance, "access": "wb-recovered"})
        )
    return AttackCorpus(tuple(records), "wb", {"recovered": True, "decimals": decimals})


def resolve_out_dir(flag: str | None) -> Path:
    env = os.environ.get("TTSHIELD_OUT")
    if env:
        return Path(env)
    return Path(flag) if flag else Path("out")


def write_artifact(out_dir: Path, prefix: str, data: bytes, ext: str) -> Path:
    """Content-addressed write: identical bytes land on the identical path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    digest = hashlib.sha256(data).hexdigest()[:12]
    path = out_dir / f"{prefix}-{digest}.{ext}"
    if not path.exists():
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(data)
        tmp.rename(path)
    return path


def manifest_bytes(manifest: dict) -> bytes:
    return (json.dumps(manifest, sort_keys=True, indent=2) + "\n").encode()
