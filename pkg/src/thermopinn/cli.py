"""Command-line runner: ``run``, ``sweep``, ``evaluate`` and ``export-points``.

Exit codes: 0 success, 2 configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import logging
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import yaml

from . import __version__
from .config import ExperimentConfig, apply_override, dump_config, load_config, parse_value, read_config_data
from .errors import ConfigurationError, NumericError

log = logging.getLogger("thermopinn")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _versions() -> dict:
    import numba
    import numpy
    import scipy

    return {"thermopinn": __version__, "python": platform.python_version(), "numpy": numpy.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def _config_from_args(args, extra: list[str] | None = None) -> ExperimentConfig:
    source = args.config or args.config_pos
    if source is None:
        raise ConfigurationError("no config given (positional path, --config, or a preset name)")
    overrides = list(args.set or []) + list(extra or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    return load_config(source, overrides)


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    return Path(cfg.output_dir or Path("runs") / cfg.name)


def _write_metadata(path: Path, cfg: ExperimentConfig, **extra) -> None:
    meta = {"config": dump_config(cfg), "config_digest": cfg.digest(), "seed": cfg.seed,
            "versions": _versions(), **extra}
    path.write_text(yaml.safe_dump(meta, sort_keys=False, allow_unicode=True), encoding="utf-8")


def execute(cfg: ExperimentConfig, out: Path) -> dict:
    """Train, evaluate and write every artifact of one run into ``out``."""
    from .training import evaluate, train

    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()

    def progress(k, total):
        if k % 100 == 0:
            log.info("%s: iteration %d loss %.6e", cfg.name, k, total)

    try:
        result = train(cfg, out, progress)
    except NumericError as exc:
        record = getattr(exc, "record", None)
        if record is not None:
            record.write_log(out / "train_log.csv")
            record.write_weights(out / "weights.csv")
        _write_metadata(out / "metadata.yaml", cfg, status="numeric-failure", error=str(exc),
                        failed_iteration=getattr(exc, "iteration", None),
                        wall_time=time.perf_counter() - start)
        raise
    report = evaluate(result.model, cfg, result.colloc, result.problem)
    result.record.write_log(out / "train_log.csv")
    result.record.write_weights(out / "weights.csv")
    report.write_csv(out / "errors.csv")
    if cfg.evaluation.pointwise:
        for t in cfg.evaluation.times:
            report.write_pointwise(out / f"pointwise_t{t:g}.csv", t)
    final = result.record.terms[-1] if result.record.terms else None
    _write_metadata(out / "metadata.yaml", cfg, status="ok", iterations=cfg.iterations,
                    wall_time=time.perf_counter() - start,
                    final_total_loss=result.record.totals[-1] if result.record.totals else None,
                    final_losses=None if final is None else [float(x) for x in final])
    return {"report": report, "result": result}


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    if args.dry_run:
        print(yaml.safe_dump({"valid": True, "config": dump_config(cfg)}, sort_keys=False, allow_unicode=True))
        return EXIT_OK
    out = _out_dir(args, cfg)
    report = execute(cfg, out)["report"]
    _print_table(report.rows)
    print(f"artifacts written to {out}")
    return EXIT_OK


def _print_table(rows):
    print("quantity,time,global_error")
    for q, t, e in rows:
        print(f"{q},{t:g},{e:.6e}")


def _parse_axes(specs: list[str]) -> list[tuple[str, list]]:
    axes = []
    for spec in specs:
        if "=" not in spec:
            raise ConfigurationError(f"axis {spec!r} must look like name=v1,v2,...")
        name, values = spec.split("=", 1)
        vals = [parse_value(v.strip()) for v in values.split(",") if v.strip()]
        if not vals:
            raise ConfigurationError(f"axis {name!r} has no values")
        axes.append((name.strip(), vals))
    return axes


def _sweep_row(payload):
    data, combo, out = payload
    try:
        cfg = load_config(data)
        report = execute(cfg, Path(out))["report"]
        return combo, "ok", report.rows, ""
    except (ConfigurationError, NumericError) as exc:
        return combo, "failed", [], str(exc)


def cmd_sweep(args) -> int:
    source = args.config or args.config_pos
    if source is None:
        raise ConfigurationError("no config given")
    base = read_config_data(source)
    for item in args.set or []:
        key, _, value = item.partition("=")
        apply_override(base, key.strip(), value.strip())
    if args.seed is not None:
        base["seed"] = args.seed
    axes = _parse_axes(args.axis or [])
    if not axes:
        raise ConfigurationError("sweep needs at least one --axis name=v1,v2")
    base_cfg = load_config(base)
    out = _out_dir(args, base_cfg)
    payloads = []
    for combo in itertools.product(*(vals for _, vals in axes)):
        data = dict(base)
        data = load_config(data).model_dump(mode="json")
        for (name, _), value in zip(axes, combo):
            apply_override(data, name, value)
        tag = "_".join(f"{name.split('.')[-1]}={value}" for (name, _), value in zip(axes, combo))
        data["name"] = f"{base_cfg.name}_{tag}"
        load_config(data)  # validate every row before any compute
        payloads.append((data, combo, str(out / tag)))
    if args.dry_run:
        print(f"{len(payloads)} rows validated")
        return EXIT_OK
    if args.parallel and args.parallel > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            results = list(pool.map(_sweep_row, payloads))
    else:
        results = [_sweep_row(p) for p in payloads]
    quantities = base_cfg.evaluation.quantities
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([name for name, _ in axes] + ["time", "status"] + list(quantities) + ["error"])
        for combo, status, rows, err in results:
            if status != "ok":
                w.writerow(list(combo) + ["", status] + [""] * len(quantities) + [err])
                continue
            by_time: dict = {}
            for q, t, e in rows:
                by_time.setdefault(t, {})[q] = e
            for t, errs in by_time.items():
                w.writerow(list(combo) + [repr(t), status] + [repr(errs[q]) for q in quantities] + [""])
    failed = sum(r[1] != "ok" for r in results)
    print(f"sweep: {len(results) - failed} ok, {failed} failed; table at {out / 'sweep.csv'}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .network import load_checkpoint
    from .training import evaluate

    path = Path(args.checkpoint)
    if not path.exists():
        raise ConfigurationError(f"checkpoint {path} does not exist")
    ckpt = load_checkpoint(path)
    data = ckpt.metadata.get("config")
    if data is None:
        if not (args.config or args.config_pos):
            raise ConfigurationError("checkpoint carries no config; pass --config")
        data = read_config_data(args.config or args.config_pos)
    cfg = load_config(data, args.set or [])
    report = evaluate(ckpt.model, cfg, iteration=ckpt.iteration)
    out = Path(args.out) if args.out else path.parent
    report.write_csv(out / "errors.csv")
    if cfg.evaluation.pointwise:
        for t in cfg.evaluation.times:
            report.write_pointwise(out / f"pointwise_t{t:g}.csv", t)
    _print_table(report.rows)
    return EXIT_OK


def cmd_export_points(args) -> int:
    from .geometry import write_point_cloud
    from .training import build_collocation

    cfg = _config_from_args(args)
    if not args.out:
        raise ConfigurationError("export-points needs --out FILE.csv")
    colloc = build_collocation(cfg)
    path = write_point_cloud(args.out, colloc)
    n_int, n_bnd = colloc.spatial_counts
    print(f"wrote {n_int} interior and {n_bnd} boundary points to {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="thermopinn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-q", "--quiet", action="store_true", help="only print results")
    sub = parser.add_subparsers(dest="command", required=True)

    def quiet(p):
        # also accepted after the verb; SUPPRESS keeps a global -q from being reset
        p.add_argument("-q", "--quiet", action="store_true", default=argparse.SUPPRESS, help="only print results")

    def common(p, out_help="output directory"):
        p.add_argument("config_pos", nargs="?", metavar="CONFIG", help="config file or preset name")
        p.add_argument("--config", help="config file or preset name")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a field (dotted path or unique leaf name); repeatable")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help=out_help)
        quiet(p)

    p = sub.add_parser("run", help="train and evaluate one configuration")
    common(p)
    p.add_argument("--dry-run", action="store_true", help="validate the config only")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a grid of configurations and tabulate errors")
    common(p)
    p.add_argument("--axis", action="append", metavar="NAME=V1,V2",
                   help="swept field and its values; repeat for a grid")
    p.add_argument("--parallel", type=int, default=1, metavar="N", help="rows run concurrently")
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("evaluate", help="recompute error tables from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("config_pos", nargs="?", metavar="CONFIG")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out")
    quiet(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-points", help="write a built-in shape as a point-cloud CSV")
    common(p, out_help="CSV file to write")
    p.set_defaults(func=cmd_export_points)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
