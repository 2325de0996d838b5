"""Desk-scale membership attack table.

Trains one shadow farm per model row (plain LR, replicate-averaged LR, the
small MLP, and discretized tensor copies at each bin count), then scores the
same farm at every access level from 2-bin black box up to white box.

    python3 scripts/run_desk_scale.py --seed 0 --out out/desk --workers 4
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from ttshield.experiment import (
    ExperimentConfig,
    config_hash,
    manifest_bytes,
    resolve_out_dir,
    run_attack_suite,
    write_artifact,
)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/desk")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--R", type=int, default=20, help="replicates per union")
    args = ap.parse_args()

    config = ExperimentConfig.from_dict({"seed": args.seed, "R": args.R})
    out_dir = resolve_out_dir(args.out)
    print(f"config {config_hash(config)[:12]} seed={config.seed} R={config.R}")

    t0 = time.time()
    suite = run_attack_suite(config, workers=args.workers)
    print(f"suite finished in {time.time() - t0:.0f} s, {len(suite.failures)} failed jobs")
    print()
    print(suite.table.render())

    table_path = write_artifact(out_dir, "attack-table", suite.table.to_csv_bytes(), "csv")
    manifest_path = write_artifact(
        out_dir, "attack-manifest", manifest_bytes(suite.manifest), "json"
    )
    print(f"table:    {table_path}")
    print(f"manifest: {manifest_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
