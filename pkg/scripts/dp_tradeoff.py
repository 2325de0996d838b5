"""Privacy/utility sweep: output-perturbed LR across budgets vs discretized TT.

For each epsilon, trains a white-box shadow farm of noised models, runs the
membership adversary, and averages held-out balanced accuracy over seeds.
The tensorized row shows what 2-bin discretization costs instead of noise.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from ttshield.experiment import (
    ExperimentConfig,
    dp_accuracy_sweep,
    dp_attack_sweep,
    make_cohorts,
    resolve_out_dir,
    tt_accuracy_tradeoff,
    write_artifact,
)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/defend")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--ba-seeds", type=int, default=20)
    args = ap.parse_args()

    config = ExperimentConfig.from_dict({"seed": args.seed})
    cohorts = make_cohorts(config)

    attack = dp_attack_sweep(config, cohorts, workers=args.workers)
    acc = dp_accuracy_sweep(config, cohorts, n_seeds=args.ba_seeds)
    tt = tt_accuracy_tradeoff(config, cohorts, b=config.bins[0])

    print(f"{'defense':>14}  {'attack (WB)':>14}  {'bal. acc':>8}")
    for eps in config.eps_grid:
        r = attack[float(eps)]
        print(f"{'dp eps=' + str(eps):>14}  {r.mean:.3f} ± {r.std:.3f}  {acc[float(eps)]:8.3f}")
    print(f"{'none':>14}  {'':>14}  {acc['baseline']:8.3f}")
    print(f"{'tt b=' + str(config.bins[0]):>14}  {'':>14}  {tt['ba_tt']:8.3f}")

    lines = ["defense,epsilon,attack_mean,attack_std,balanced_accuracy"]
    for eps in config.eps_grid:
        r = attack[float(eps)]
        lines.append(f"dp-lr,{float(eps)!r},{r.mean!r},{r.std!r},{acc[float(eps)]!r}")
    lines.append(f"none,,,,{acc['baseline']!r}")
    lines.append(f"tt-lr(b={config.bins[0]}),,,,{tt['ba_tt']!r}")
    path = write_artifact(resolve_out_dir(args.out), "defend-table", ("\n".join(lines) + "\n").encode(), "csv")
    print(f"table: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
