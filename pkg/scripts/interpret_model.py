"""Sensitivity tables and calibration curves for a compressed scorer.

Trains the reference LR on the pooled cohorts, compresses it into a raw
tensor copy for sensitivity readout and a discretized copy for the curve,
and writes CSV/SVG artifacts.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from ttshield.cohorts import FEATURES, union
from ttshield.experiment import ExperimentConfig, make_cohorts, resolve_out_dir
from ttshield.interpret import (
    curve_to_csv,
    curve_to_svg,
    feature_sensitivity,
    monotonicity_curve,
    sensitivity_by_type,
    sensitivity_to_csv,
)
from ttshield.predictors import lr_train
from ttshield.seeds import child_seed
from ttshield.tensorize import TensorizeConfig, tensorize_model


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/interpret")
    ap.add_argument("--types", type=int, nargs="*", default=[1, 7], help="condition on these types")
    ap.add_argument("--b", type=int, default=6, help="bin count for the curve's tensor copy")
    args = ap.parse_args()

    config = ExperimentConfig.from_dict({"seed": args.seed})
    out_dir = resolve_out_dir(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cohorts = make_cohorts(config)
    d = union(cohorts, list(range(len(cohorts))))
    model = lr_train(d.X, d.y, config.lr_grid[0], seed=child_seed(args.seed, "lr"))

    # raw copy for sensitivity: rank 3 keeps the type block faithful
    raw_tt = tensorize_model(
        model, d.X, TensorizeConfig(config.tt_pivots, 3, None, child_seed(args.seed, "raw"))
    )
    base = d.X.mean(axis=0)
    binary = (1,) + tuple(range(5, 21))

    report = feature_sensitivity(raw_tt, base_values=base, binary=binary, names=FEATURES)
    sensitivity_to_csv(report, out_dir / "sensitivity-global.csv")
    top = sorted(zip(report.normalized, report.names), key=lambda t: -abs(t[0]))[:8]
    print("strongest global sensitivities:")
    for v, name in top:
        print(f"  {name:>14}  {v:+.3f}")

    for t in args.types:
        typed = sensitivity_by_type(raw_tt, t, base_values=base)
        sensitivity_to_csv(typed, out_dir / f"sensitivity-type{t}.csv")
    print(f"typed tables for {args.types} written")

    tt = tensorize_model(
        model,
        d.X,
        TensorizeConfig(config.tt_pivots, config.tt_rank, args.b, child_seed(args.seed, "binned")),
    )
    for tag, scorer in (("lr", model), (f"tt-b{args.b}", tt)):
        curve = monotonicity_curve(scorer, d.X, d.y, seed=child_seed(args.seed, "curve", tag))
        curve_to_csv(curve, out_dir / f"curve-{tag}.csv")
        curve_to_svg(curve, out_dir / f"curve-{tag}.svg", title=tag)
        print(f"{tag}: t10={curve.t10} t50={curve.t50} slope={curve.slope:.3f}")
    print(f"artifacts in {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
