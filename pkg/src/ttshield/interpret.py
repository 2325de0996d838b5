"""Interpretability tools for tensorized classifiers.

Feature sensitivities come from the TT's own index algebra: every other input
site is contracted with the index weighting [1, base_k] induced by the base
point (cohort means by default), leaving a single-feature amplitude profile.
The reported score is the amplitude share a1/(a0+a1) change under a unit
increment of the feature (or the 0->1 flip for binary features). For a TT
whose amplitudes are an affine form and its complement, the share is exactly
linear and the raw sensitivities reproduce the form's coefficients. The
uniform weighting [1, 1] is a special case (base 1.0), but on rescaled
sketches it sits far outside the pivot range and degrades to extrapolation
noise, so the base point anchors the marginal instead.

Monotonicity curves bin samples by predicted score and bootstrap a 95%
interval for the per-bin response rate.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .cohorts import FEATURES, N_FEATURES, N_TYPES
from .predictors import predict_scores
from .seeds import child_rng
from .tt import TensorTrain, tt_amplitudes, tt_condition_many

__all__ = [
    "SensitivityReport",
    "MonotonicityCurve",
    "max_normalize",
    "feature_sensitivity",
    "sensitivity_by_type",
    "monotonicity_curve",
    "sensitivity_to_csv",
    "curve_to_csv",
    "curve_to_svg",
]

_DEGENERATE_TOL = 1e-12


def max_normalize(values) -> tuple:
    """(values / max|values|, max|values|); all-zero input stays zero."""
    v = np.asarray(values, dtype=np.float64)
    c = float(np.max(np.abs(v))) if v.size else 0.0
    return (v / c if c > 0 else v.copy()), c


@dataclass(frozen=True)
class SensitivityReport:
    names: tuple
    raw: tuple
    normalized: tuple
    norm_const: float
    context: str = ""
    flags: tuple = ()
    tag: str = "tt"

    def __post_init__(self):
        if len(self.names) != len(self.raw) or len(self.raw) != len(self.normalized):
            raise ValueError("names, raw and normalized must align")
        if any(abs(v) > 1 + 1e-12 for v in self.normalized):
            raise ValueError("normalized scores must lie in [-1, 1]")


@dataclass(frozen=True)
class MonotonicityCurve:
    bin_edges: tuple
    means: tuple
    ci_low: tuple
    ci_high: tuple
    counts: tuple
    t10: float | None
    t50: float | None
    slope: float
    intercept: float
    dropped_bins: tuple = ()
    n_boot: int = 0
    seed: int = 0

    def __post_init__(self):
        for m, lo, hi in zip(self.means, self.ci_low, self.ci_high):
            if not lo <= m <= hi:
                raise ValueError("interval must contain its mean")
        lows = [e[0] for e in self.bin_edges]
        if lows != sorted(lows):
            raise ValueError("bins must be ordered by score")


def _default_names(n: int) -> tuple:
    if n == N_FEATURES:
        return tuple(FEATURES)
    return tuple(f"x{j}" for j in range(n))


def _share(tt2: TensorTrain, value: float):
    """Amplitude share a1/(a0+a1) of a single-feature TT; None if degenerate."""
    a = tt_amplitudes(tt2, [value])
    denom = float(a[0] + a[1])
    if abs(denom) <= _DEGENERATE_TOL * max(1.0, float(np.sum(np.abs(a)))):
        return None
    return float(a[1]) / denom


def feature_sensitivity(
    tt: TensorTrain,
    base_values=None,
    binary=(),
    names=None,
    fixed: dict | None = None,
    context: str = "",
    tag: str = "tt",
) -> SensitivityReport:
    """Per-feature score change under a unit increment (continuous, from the
    base value) or a 0->1 flip (binary), with all other inputs contracted at
    their base values. ``fixed`` pins feature indices to explicit values
    instead; pinned features get no report entry."""
    if tt.n_classes != 2:
        raise ValueError("sensitivities are defined for two-class TTs")
    n_feat = tt.n_features
    fixed = {int(k): float(v) for k, v in (fixed or {}).items()}
    for k in fixed:
        if not 0 <= k < n_feat:
            raise ValueError(f"fixed feature {k} out of range")
    free = [j for j in range(n_feat) if j not in fixed]
    if not free:
        raise ValueError("no free features left to profile")
    base = np.zeros(n_feat) if base_values is None else np.asarray(base_values, dtype=np.float64)
    if base.size != n_feat:
        raise ValueError(f"expected {n_feat} base values, got {base.size}")
    binary = {int(j) for j in binary}
    sites = tt.input_sites()

    all_names = _default_names(n_feat) if names is None else tuple(names)
    if len(all_names) != n_feat:
        raise ValueError(f"expected {n_feat} names, got {len(all_names)}")
    raw, flags = [], []
    for j in free:
        assignments = {sites[k]: fixed[k] for k in fixed}
        assignments.update({sites[k]: float(base[k]) for k in free if k != j})
        reduced = tt_condition_many(tt, assignments)
        lo, hi = (0.0, 1.0) if j in binary else (float(base[j]), float(base[j]) + 1.0)
        s_lo, s_hi = _share(reduced, lo), _share(reduced, hi)
        if s_lo is None or s_hi is None:
            raw.append(0.0)
            flags.append(all_names[j])
        else:
            raw.append(s_hi - s_lo)
    normalized, c = max_normalize(raw)
    return SensitivityReport(
        names=tuple(all_names[j] for j in free),
        raw=tuple(float(v) for v in raw),
        normalized=tuple(float(v) for v in normalized),
        norm_const=c,
        context=context,
        flags=tuple(flags),
        tag=tag,
    )


def sensitivity_by_type(
    tt: TensorTrain, cancer_type: int, base_values=None, names=None, tag: str = "tt"
) -> SensitivityReport:
    """Clinical-feature sensitivities with the one-hot block pinned to one
    type: the selected site to 1, the other fifteen to 0 (the TT does not
    know one-hot exclusivity, so all sixteen are fixed)."""
    if tt.n_features != N_FEATURES:
        raise ValueError(f"expected a {N_FEATURES}-feature TT, got {tt.n_features}")
    if not 1 <= int(cancer_type) <= N_TYPES:
        raise ValueError(f"cancer type must be in 1..{N_TYPES}, got {cancer_type}")
    t = int(cancer_type)
    fixed = {5 + k: (1.0 if k == t - 1 else 0.0) for k in range(N_TYPES)}
    full_names = _default_names(N_FEATURES) if names is None else tuple(names)
    base = None if base_values is None else np.asarray(base_values, dtype=np.float64)
    return feature_sensitivity(
        tt,
        base_values=base,
        binary=(1,),
        names=full_names,
        fixed=fixed,
        context=f"type={t}",
        tag=tag,
    )


def monotonicity_curve(
    model, X, y, bins: int = 10, n_boot: int = 200, seed: int = 0
) -> MonotonicityCurve:
    """Bin samples by predicted score; per occupied bin report the response
    rate with a percentile-bootstrap 95% interval. Thresholds t10/t50 are the
    scores where the monotone-rectified bin-mean curve crosses 10% and 50%;
    slope/intercept is the least-squares line over all (score, label) pairs."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.shape[0] != y.size:
        raise ValueError("X and y must align")
    if set(np.unique(y)) != {0.0, 1.0}:
        raise ValueError("need both response classes present")
    if n_boot < 100:
        raise ValueError("n_boot must be >= 100")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    scores = np.clip(predict_scores(model, X), 0.0, 1.0)
    edges = np.linspace(0.0, 1.0, bins + 1)
    which = np.clip(np.searchsorted(edges, scores, side="right") - 1, 0, bins - 1)

    occupied, dropped = [], []
    means, ci_lo, ci_hi, counts = [], [], [], []
    for k in range(bins):
        members = y[which == k]
        if members.size == 0:
            dropped.append((float(edges[k]), float(edges[k + 1])))
            continue
        m = float(members.mean())
        draws = members[
            child_rng(seed, "boot", k).integers(0, members.size, size=(n_boot, members.size))
        ].mean(axis=1)
        lo, hi = np.percentile(draws, [2.5, 97.5])
        occupied.append((float(edges[k]), float(edges[k + 1])))
        means.append(m)
        ci_lo.append(min(float(lo), m))
        ci_hi.append(max(float(hi), m))
        counts.append(int(members.size))

    centers = np.array([(lo + hi) / 2 for lo, hi in occupied])
    rect = np.maximum.accumulate(means)
    if np.ptp(scores) > 1e-12:
        slope, intercept = np.polyfit(scores, y, 1)
    else:
        slope, intercept = 0.0, float(y.mean())
    return MonotonicityCurve(
        bin_edges=tuple(occupied),
        means=tuple(means),
        ci_low=tuple(ci_lo),
        ci_high=tuple(ci_hi),
        counts=tuple(counts),
        t10=_crossing(centers, rect, 0.10),
        t50=_crossing(centers, rect, 0.50),
        slope=float(slope),
        intercept=float(intercept),
        dropped_bins=tuple(dropped),
        n_boot=n_boot,
        seed=seed,
    )


def _crossing(x: np.ndarray, m: np.ndarray, level: float):
    """First score where the non-decreasing curve reaches the level."""
    if m.size == 0 or m[-1] < level:
        return None
    if m[0] >= level:
        return float(x[0])
    i = int(np.searchsorted(m, level, side="left"))
    x0, x1, m0, m1 = x[i - 1], x[i], m[i - 1], m[i]
    if m1 == m0:
        return float(x1)
    return float(x0 + (level - m0) * (x1 - x0) / (m1 - m0))


def sensitivity_to_csv(report: SensitivityReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "raw_score", "normalized_score", "context"])
        for name, r, nrm in zip(report.names, report.raw, report.normalized):
            writer.writerow([name, repr(r), repr(nrm), report.context])


def curve_to_csv(curve: MonotonicityCurve, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_low", "bin_high", "mean", "ci_low", "ci_high"])
        for (lo, hi), m, cl, ch in zip(curve.bin_edges, curve.means, curve.ci_low, curve.ci_high):
            writer.writerow([repr(lo), repr(hi), repr(m), repr(cl), repr(ch)])


def curve_to_svg(curve: MonotonicityCurve, path, title: str = "") -> None:
    """Self-contained SVG: CI band, bin-mean polyline, 10%/50% guides."""
    W, H, ml, mr, mt, mb = 480, 320, 50, 15, 25, 35

    def px(s):  # score in [0,1] -> x pixel
        return ml + s * (W - ml - mr)

    def py(r):  # response in [0,1] -> y pixel
        return H - mb - r * (H - mt - mb)

    centers = [(lo + hi) / 2 for lo, hi in curve.bin_edges]
    band = " ".join(f"{px(c):.1f},{py(l):.1f}" for c, l in zip(centers, curve.ci_low))
    band += " " + " ".join(
        f"{px(c):.1f},{py(h):.1f}" for c, h in zip(reversed(centers), reversed(curve.ci_high))
    )
    line = " ".join(f"{px(c):.1f},{py(m):.1f}" for c, m in zip(centers, curve.means))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W/2:.0f}" y="15" text-anchor="middle" font-size="12">{title}</text>',
        f'<line x1="{ml}" y1="{py(0):.1f}" x2="{W-mr}" y2="{py(0):.1f}" stroke="black"/>',
        f'<line x1="{ml}" y1="{py(0):.1f}" x2="{ml}" y2="{mt}" stroke="black"/>',
    ]
    for level, color in ((0.10, "#999999"), (0.50, "#444444")):
        parts.append(
            f'<line x1="{ml}" y1="{py(level):.1f}" x2="{W-mr}" y2="{py(level):.1f}" '
            f'stroke="{color}" stroke-dasharray="4 3"/>'
        )
    if centers:
        parts.append(f'<polygon points="{band}" fill="#a0c4e8" fill-opacity="0.5"/>')
        parts.append(f'<polyline points="{line}" fill="none" stroke="#1f4e8c" stroke-width="2"/>')
    for s in (0.0, 0.5, 1.0):
        parts.append(
            f'<text x="{px(s):.1f}" y="{H-mb+15}" text-anchor="middle" font-size="10">{s:.1f}</text>'
        )
        parts.append(
            f'<text x="{ml-8}" y="{py(s)+3:.1f}" text-anchor="end" font-size="10">{s:.1f}</text>'
        )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts))
