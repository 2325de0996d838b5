"""Command line front end.

Subcommands cover the pipeline end to end: gen, train, tensorize, attack,
defend, sensitivity, monotonicity, serve, report.  Every run writes
content-addressed artifacts plus a manifest recording the config hash and
master seed.  Failures exit nonzero with a single-line error on stderr.

Config files are TOML or JSON with the same keys as ExperimentConfig;
command line flags override file values, and the TTSHIELD_OUT environment
variable overrides --out.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import tempfile
from pathlib import Path

import numpy as np

from .cohorts import FEATURES, generate_cohorts, load_csv, save_csv, union
from .experiment import (
    ExperimentConfig,
    ScoreTable,
    config_hash,
    default_rows,
    dp_accuracy_sweep,
    dp_attack_sweep,
    make_cohorts,
    manifest_bytes,
    resolve_out_dir,
    run_attack_suite,
    tt_accuracy_tradeoff,
    write_artifact,
)
from .interpret import (
    curve_to_csv,
    curve_to_svg,
    feature_sensitivity,
    monotonicity_curve,
    sensitivity_by_type,
    sensitivity_to_csv,
)
from .predictors import lr_train, mlp_train, model_from_json, model_to_json
from .seeds import child_seed
from .serve import serve_blocking
from .tensorize import TensorizeConfig, tensorize_model
from .tt import tt_from_json, tt_to_json


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise SystemExit(self.exit_with_error(message))

    def exit_with_error(self, message) -> int:
        print(f"error: {' '.join(str(message).split())}", file=sys.stderr)
        return 2


def _parse_members(text: str) -> list:
    try:
        members = [int(tok) - 1 for tok in text.split("+")]
    except ValueError:
        raise ValueError(f"bad members spec: {text}") from None
    if not members or any(m < 0 for m in members):
        raise ValueError(f"bad members spec: {text}")
    return members


def _load_config_file(path: str) -> dict:
    raw = Path(path).read_bytes()
    if path.endswith(".json"):
        return json.loads(raw.decode())
    try:
        import tomllib
    except ImportError:
        import tomli as tomllib
    return tomllib.loads(raw.decode())


def build_config(args) -> ExperimentConfig:
    overrides = {}
    if getattr(args, "config", None):
        overrides = _load_config_file(args.config)
    if overrides.get("max_union_size") == 0:
        overrides["max_union_size"] = None
    config = ExperimentConfig.from_dict(overrides)
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "bins", None):
        updates["bins"] = tuple(int(b) for b in args.bins.split(","))
    if getattr(args, "eps", None):
        updates["eps_grid"] = tuple(float(e) for e in args.eps.split(","))
    if getattr(args, "access", None):
        updates["access_levels"] = tuple(args.access.split(","))
    return dataclasses.replace(config, **updates) if updates else config


def _manifest(config, subcommand: str, artifacts: dict, extra: dict | None = None) -> dict:
    doc = {
        "subcommand": subcommand,
        "config": config.to_dict(),
        "config_hash": config_hash(config),
        "master_seed": config.seed,
        "artifacts": artifacts,
    }
    if extra:
        doc.update(extra)
    return doc


def _finish(config, subcommand, out_dir, artifacts, extra=None) -> Path:
    # manifests carry artifact basenames: the names are content-hashed, and
    # leaving the directory out keeps reruns byte-identical wherever they land
    doc = _manifest(config, subcommand, {k: Path(v).name for k, v in artifacts.items()}, extra)
    path = write_artifact(out_dir, f"{subcommand}-manifest", manifest_bytes(doc), "json")
    print(f"manifest: {path}")
    return path


def _file_as_artifact(out_dir, prefix, render, ext) -> Path:
    """Run a path-writing helper into a temp file, then store content-addressed."""
    with tempfile.NamedTemporaryFile(suffix=f".{ext}", delete=False) as fh:
        tmp = Path(fh.name)
    try:
        render(tmp)
        data = tmp.read_bytes()
    finally:
        tmp.unlink(missing_ok=True)
    return write_artifact(out_dir, prefix, data, ext)


def cmd_gen(args) -> int:
    config = build_config(args)
    out_dir = resolve_out_dir(args.out)
    cohorts = make_cohorts(config)
    artifacts = {}
    for cohort in cohorts:
        path = _file_as_artifact(out_dir, f"cohort-{cohort.name}", lambda p, c=cohort: save_csv(c, p), "csv")
        artifacts[cohort.name] = path
        print(f"wrote {path}")
    _finish(config, "gen", out_dir, artifacts, {"sizes": list(config.sizes)})
    return 0


def _load_cohorts(args, config):
    if getattr(args, "cohorts", None):
        return [load_csv(p) for p in args.cohorts]
    return make_cohorts(config)


def cmd_train(args) -> int:
    config = build_config(args)
    out_dir = resolve_out_dir(args.out)
    cohorts = _load_cohorts(args, config)
    members = _parse_members(args.members) if args.members else list(range(len(cohorts)))
    d = union(cohorts, members)
    artifacts = {}
    for i, hyper in enumerate(config.lr_grid):
        model = lr_train(d.X, d.y, hyper, seed=child_seed(config.seed, "train", "lr", i))
        data = (json.dumps(model_to_json(model), sort_keys=True) + "\n").encode()
        path = write_artifact(out_dir, f"model-lr{i}", data, "json")
        artifacts[f"lr{i}"] = path
        print(f"wrote {path}")
    mlp = mlp_train(d.X, d.y, config.mlp_hyper, seed=child_seed(config.seed, "train", "mlp"))
    data = (json.dumps(model_to_json(mlp), sort_keys=True) + "\n").encode()
    path = write_artifact(out_dir, "model-mlp", data, "json")
    artifacts["mlp"] = path
    print(f"wrote {path}")
    _finish(config, "train", out_dir, artifacts, {"members": args.members or "all"})
    return 0


def _load_scorer(path: str):
    text = Path(path).read_text(encoding="utf-8")
    doc = json.loads(text)
    if "cores" in doc:
        return tt_from_json(text)
    return model_from_json(doc)


def cmd_tensorize(args) -> int:
    config = build_config(args)
    out_dir = resolve_out_dir(args.out)
    model = _load_scorer(args.model)
    cohorts = _load_cohorts(args, config)
    members = _parse_members(args.members) if args.members else list(range(len(cohorts)))
    d = union(cohorts, members)
    artifacts = {}
    for b in config.bins:
        tc = TensorizeConfig(
            config.tt_pivots, config.tt_rank, int(b), child_seed(config.seed, "tensorize", int(b))
        )
        tt = tensorize_model(model, d.X, tc)
        path = write_artifact(out_dir, f"tt-b{b}", (tt_to_json(tt) + "\n").encode(), "json")
        artifacts[f"b={b}"] = path
        print(f"wrote {path}")
    _finish(config, "tensorize", out_dir, artifacts, {"model": args.model})
    return 0


def cmd_attack(args) -> int:
    config = build_config(args)
    out_dir = resolve_out_dir(args.out)
    suite = run_attack_suite(config, workers=args.workers)
    table_path = write_artifact(out_dir, "attack-table", suite.table.to_csv_bytes(), "csv")
    print(suite.table.render())
    print(f"wrote {table_path}")
    _finish(config, "attack", out_dir, {"table": table_path}, {"suite": suite.manifest})
    return 0


def cmd_defend(args) -> int:
    config = build_config(args)
    out_dir = resolve_out_dir(args.out)
    cohorts = make_cohorts(config)
    attack = dp_attack_sweep(config, cohorts, workers=args.workers)
    acc = dp_accuracy_sweep(config, cohorts, n_seeds=args.ba_seeds)
    tt = tt_accuracy_tradeoff(config, cohorts, b=config.bins[0])
    lines = ["defense,epsilon,attack_mean,attack_std,balanced_accuracy"]
    for eps in config.eps_grid:
        r = attack[float(eps)]
        lines.append(f"dp-lr,{float(eps)!r},{r.mean!r},{r.std!r},{acc[float(eps)]!r}")
    lines.append(f"none,,,,{acc['baseline']!r}")
    lines.append(f"tt-lr(b={config.bins[0]}),,,,{tt['ba_tt']!r}")
    data = ("\n".join(lines) + "\n").encode()
    path = write_artifact(out_dir, "defend-table", data, "csv")
    print("\n".join(lines))
    print(f"wrote {path}")
    _finish(config, "defend", out_dir, {"table": path})
    return 0


def cmd_sensitivity(args) -> int:
    config = build_config(args)
    out_dir = resolve_out_dir(args.out)
    cohorts = _load_cohorts(args, config)
    d = union(cohorts, list(range(len(cohorts))))
    if args.model:
        tt = _load_scorer(args.model)
    else:
        model = lr_train(d.X, d.y, config.lr_grid[0], seed=child_seed(config.seed, "sens", "lr"))
        tc = TensorizeConfig(config.tt_pivots, 3, None, child_seed(config.seed, "sens", "sketch"))
        tt = tensorize_model(model, d.X, tc)
    base = d.X.mean(axis=0)
    binary = (1,) + tuple(range(5, 21))
    artifacts = {}
    report = feature_sensitivity(tt, base_values=base, binary=binary, names=FEATURES)
    path = _file_as_artifact(out_dir, "sensitivity-global", lambda p: sensitivity_to_csv(report, p), "csv")
    artifacts["global"] = path
    print(f"wrote {path}")
    if args.type is not None:
        typed = sensitivity_by_type(tt, args.type, base_values=base)
        path = _file_as_artifact(
            out_dir, f"sensitivity-type{args.type}", lambda p: sensitivity_to_csv(typed, p), "csv"
        )
        artifacts[f"type={args.type}"] = path
        print(f"wrote {path}")
    _finish(config, "sensitivity", out_dir, artifacts)
    return 0


def cmd_monotonicity(args) -> int:
    config = build_config(args)
    out_dir = resolve_out_dir(args.out)
    cohorts = _load_cohorts(args, config)
    d = union(cohorts, list(range(len(cohorts))))
    model = lr_train(d.X, d.y, config.lr_grid[0], seed=child_seed(config.seed, "mono", "lr"))
    b = config.bins[0]
    tc = TensorizeConfig(config.tt_pivots, config.tt_rank, int(b), child_seed(config.seed, "mono", "sketch"))
    tt = tensorize_model(model, d.X, tc)
    artifacts = {}
    for tag, scorer in (("lr", model), (f"tt-b{b}", tt)):
        curve = monotonicity_curve(
            scorer, d.X, d.y, bins=args.curve_bins, seed=child_seed(config.seed, "mono", tag)
        )
        cpath = _file_as_artifact(out_dir, f"curve-{tag}", lambda p, c=curve: curve_to_csv(c, p), "csv")
        spath = _file_as_artifact(
            out_dir, f"curve-{tag}", lambda p, c=curve, t=tag: curve_to_svg(c, p, title=t), "svg"
        )
        artifacts[f"{tag}.csv"] = cpath
        artifacts[f"{tag}.svg"] = spath
        print(f"wrote {cpath}")
        print(f"wrote {spath}")
        print(f"{tag}: t10={curve.t10} t50={curve.t50} slope={curve.slope:.4f}")
    _finish(config, "monotonicity", out_dir, artifacts)
    return 0


def cmd_serve(args) -> int:
    model = _load_scorer(args.model)
    serve_blocking(model, decimals=args.decimals, host=args.host, port=args.port)
    return 0


def cmd_report(args) -> int:
    out_dir = resolve_out_dir(args.out)
    if args.table:
        path = Path(args.table)
    else:
        matches = sorted(Path(out_dir).glob("attack-table-*.csv"))
        if len(matches) != 1:
            raise ValueError(
                f"expected exactly one attack-table artifact in {out_dir}, found {len(matches)}; pass --table"
            )
        path = matches[0]
    table = ScoreTable.from_csv_bytes(path.read_bytes())
    print(table.render(), end="")
    return 0


def _add_common(parser) -> None:
    parser.add_argument("--config", help="TOML or JSON config file")
    parser.add_argument("--seed", type=int, help="master seed override")
    parser.add_argument("--out", help="artifact directory (TTSHIELD_OUT overrides)")
    parser.add_argument("--workers", type=int, default=1, help="parallel training jobs")
    parser.add_argument("--bins", help="comma-separated discretization levels, e.g. 2,6,10")
    parser.add_argument("--eps", help="comma-separated privacy budgets, e.g. 0.1,1,10,100")
    parser.add_argument(
        "--access", help="comma-separated access levels from wbb2,wbb6,wbb10,sbb,wb"
    )


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ttshield", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate synthetic cohorts")
    _add_common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the model grid on a cohort union")
    _add_common(p)
    p.add_argument("--members", help="1-based union spec, e.g. 1+2")
    p.add_argument("--cohorts", nargs="*", help="cohort CSV paths (default: regenerate)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("tensorize", help="compress a trained model into a tensor network")
    _add_common(p)
    p.add_argument("--model", required=True, help="model JSON artifact")
    p.add_argument("--members", help="1-based union spec for sketch inputs")
    p.add_argument("--cohorts", nargs="*", help="cohort CSV paths (default: regenerate)")
    p.set_defaults(func=cmd_tensorize)

    p = sub.add_parser("attack", help="run the cohort-membership attack table")
    _add_common(p)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("defend", help="privacy/accuracy sweeps for noise and compression")
    _add_common(p)
    p.add_argument("--ba-seeds", type=int, default=20, help="seeds per accuracy average")
    p.set_defaults(func=cmd_defend)

    p = sub.add_parser("sensitivity", help="per-feature sensitivity tables")
    _add_common(p)
    p.add_argument("--model", help="tensor network JSON (default: train and compress)")
    p.add_argument("--type", type=int, help="also emit the table conditioned on this type")
    p.add_argument("--cohorts", nargs="*", help="cohort CSV paths (default: regenerate)")
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("monotonicity", help="calibration curves with bootstrap bands")
    _add_common(p)
    p.add_argument("--curve-bins", type=int, default=10, help="score bins for the curve")
    p.add_argument("--cohorts", nargs="*", help="cohort CSV paths (default: regenerate)")
    p.set_defaults(func=cmd_monotonicity)

    p = sub.add_parser("serve", help="serve a scorer over HTTP")
    p.add_argument("--model", required=True, help="model or tensor network JSON")
    p.add_argument("--decimals", type=int, default=4, help="reported decimals (>= 1)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("report", help="render a stored score table")
    p.add_argument("--table", help="score table CSV artifact")
    p.add_argument("--out", help="artifact directory to search")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        if exc.code is None:
            return 0
        if isinstance(exc.code, int):
            return exc.code
        print(f"error: {' '.join(str(exc.code).split())}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("error: interrupted", file=sys.stderr)
        return 130
    except Exception as exc:
        print(f"error: {' '.join(str(exc).split())}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
