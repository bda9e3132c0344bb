"""Command-line entry point.

Subcommands: capacity, coverage, fit, effectiveness, eval, synth.  Exit codes
are 0 on success, 1 on runtime errors and 2 on usage errors.  Every command
that writes ``--out`` also writes ``<out>.manifest.json`` holding the fully
resolved configuration; ``facecap --manifest FILE`` replays it.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import sys
from pathlib import Path

from . import __version__
from . import capacity_solver as cap_mod
from . import coverage_solver as cov_mod
from .effectiveness import PRESETS, effectiveness_grid
from .embeddings import ingest, synthesize, write_csv, write_emb1
from .evaluation import (
    DEFAULT_FMRS,
    attack_coverage,
    attack_score_distribution,
    attack_scores,
    compare_to_imposters,
    coverage_table_csv,
    imposter_mean_jackknife,
    histogram,
    histograms_csv,
    score_sets,
    thresholds,
)
from .model_fit import (
    PUBLISHED_PARAMS,
    FitParams,
    fit_capacity,
    fit_coverage,
    read_sweep,
)

log = logging.getLogger("facecap")


class UsageError(Exception):
    pass


# -- argument parsing helpers -------------------------------------------------

def parse_int_list(text: str) -> list[int]:
    """``"3..10"``, ``"128,512"`` or a mix like ``"3..5,8"``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..", 1)
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise argparse.ArgumentTypeError(f"empty range {part!r}")
            out.extend(range(lo, hi + 1))
        else:
            out.append(int(part))
    return out


def parse_float_list(text: str) -> list[float]:
    return [float(p) for p in text.split(",") if p.strip()]


def _common(parser):
    g = parser.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    g.add_argument("--threads", type=int, default=1, help="worker cap; never changes outputs")
    g.add_argument("--out", type=Path, default=None, help="output file (default: stdout)")
    g.add_argument("--format", choices=("json", "csv"), default="json")
    g.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="facecap",
        description="Face-space capacity, MasterFace coverage and attack evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--manifest", type=Path, help="replay the run recorded in a manifest file")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    parser.subcommands = sub.choices

    for name, help_ in (("capacity", "face capacity N(r, d)"), ("coverage", "maximum MasterFace coverage")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--dim", type=int)
        p.add_argument("--radius", type=float)
        p.add_argument("--sweep-dims", type=parse_int_list)
        p.add_argument("--sweep-radii", type=parse_float_list)
        p.add_argument("--n-max", type=int, default=512 if name == "capacity" else 64)
        p.add_argument("--restarts", type=int, default=8 if name == "capacity" else 32)
        p.add_argument("--max-iters", type=int, default=10000 if name == "capacity" else 5000)
        p.add_argument("--feasibility-tol", type=float, default=1e-6)
        if name == "capacity":
            p.add_argument("--convention", choices=cap_mod.CONVENTIONS, default="exclusive",
                           help="exclusive: last passing n (default); inclusive: first failing n")
        else:
            p.add_argument("--match-slack", type=float, default=1e-6)
        _common(p)

    p = sub.add_parser("fit", help="two-stage fit of sweep tables")
    p.add_argument("sweeps", nargs="+", type=Path, help="sweep CSV/JSON files")
    p.add_argument("--model", choices=("capacity", "coverage"), required=True)
    p.add_argument("--merge", type=Path, help="params JSON whose other model is carried over")
    _common(p)

    p = sub.add_parser("effectiveness", help="eta(r, d) from fitted parameters")
    p.add_argument("--params", default="published",
                   help="params JSON file, or 'published' for the published parameter values")
    p.add_argument("--dims", type=parse_int_list, required=True)
    p.add_argument("--radii", type=parse_float_list)
    p.add_argument("--preset", choices=sorted(PRESETS))
    _common(p)

    p = sub.add_parser("eval", help="coverage of attack embeddings against a database")
    p.add_argument("--db", type=Path, required=True)
    p.add_argument("--attacks", action="append", required=True, metavar="[NAME=]FILE",
                   help="attack embedding file; repeat for several attack sets")
    p.add_argument("--fmr", type=parse_float_list, default=list(DEFAULT_FMRS))
    p.add_argument("--pair-cap", type=int, default=None)
    p.add_argument("--bins", type=int, default=100)
    _common(p)

    p = sub.add_parser("synth", help="synthetic labeled embeddings (EMB1 or CSV by suffix)")
    p.add_argument("--identities", type=int, required=True)
    p.add_argument("--images", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--label-prefix", default="id")
    _common(p)
    return parser


# -- output helpers -------------------------------------------------------------

def _emit(args, text: str, out: Path | None = None):
    out = out if out is not None else args.out
    if out is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")


def _sibling(out: Path, suffix: str) -> Path:
    return out.with_name(f"{out.stem}{suffix}")


def _jsonable(value):
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def write_manifest(args, argv: list[str]) -> Path | None:
    if args.out is None:
        return None
    config = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k not in ("manifest",)}
    manifest = {
        "tool": "facecap",
        "version": __version__,
        "command": args.command,
        "seed": args.seed,
        "argv": argv,
        "config": config,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    path = args.out.with_name(args.out.name + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


# -- commands -------------------------------------------------------------------

def _grid(args):
    dims = args.sweep_dims if args.sweep_dims else ([args.dim] if args.dim is not None else None)
    radii = args.sweep_radii if args.sweep_radii else ([args.radius] if args.radius is not None else None)
    if not dims:
        raise UsageError("--dim (or --sweep-dims) is required")
    if not radii:
        raise UsageError("--radius (or --sweep-radii) is required")
    if args.dim is not None and args.sweep_dims:
        raise UsageError("--dim and --sweep-dims are mutually exclusive")
    if args.radius is not None and args.sweep_radii:
        raise UsageError("--radius and --sweep-radii are mutually exclusive")
    return dims, radii


def cmd_capacity(args) -> int:
    dims, radii = _grid(args)
    rows = cap_mod.capacity_sweep(
        dims, radii, workers=args.threads, n_max=args.n_max, restarts=args.restarts,
        max_iters=args.max_iters, seed=args.seed, feasibility_tol=args.feasibility_tol,
        convention=args.convention,
    )
    for r in rows:
        if r.error:
            log.error("d=%s r=%s: %s", r.dim, r.radius, r.error)
        else:
            log.info("d=%d r=%g N=%d r'=%.6f%s", r.dim, r.radius, r.capacity,
                     r.realized_min_distance, " (ceiling reached)" if r.ceiling_reached else "")
    _emit(args, cap_mod.sweep_to_csv(rows) if args.format == "csv" else cap_mod.sweep_to_json(rows))
    return 1 if any(r.error for r in rows) else 0


def cmd_coverage(args) -> int:
    dims, radii = _grid(args)
    rows = cov_mod.coverage_sweep(
        dims, radii, n_max=args.n_max, restarts=args.restarts, max_iters=args.max_iters,
        seed=args.seed, feasibility_tol=args.feasibility_tol, match_slack=args.match_slack,
    )
    for r in rows:
        if r.error:
            log.error("d=%s r=%s: %s", r.dim, r.radius, r.error)
        else:
            log.info("d=%d r=%g N_bar=%d", r.dim, r.radius, r.coverage)
    _emit(args, cov_mod.sweep_to_csv(rows) if args.format == "csv" else cov_mod.sweep_to_json(rows))
    return 1 if any(r.error for r in rows) else 0


def _load_params(spec: str) -> FitParams:
    if spec == "published":
        return PUBLISHED_PARAMS
    data = json.loads(Path(spec).read_text(encoding="utf-8"))
    if "params" in data:
        data = data["params"]
    return FitParams.from_dict(data)


def cmd_fit(args) -> int:
    rows = []
    for path in args.sweeps:
        rows.extend(read_sweep(path))
    report = fit_capacity(rows) if args.model == "capacity" else fit_coverage(rows)
    params = report.params
    if args.merge is not None:
        other = _load_params(str(args.merge))
        if args.model == "capacity":
            params = FitParams(capacity=params.capacity, coverage=other.coverage)
        else:
            params = FitParams(capacity=other.capacity, coverage=params.coverage)
    for ex in report.excluded:
        log.warning("excluded cell d=%s r=%s: %s", ex["d"], ex["r"], ", ".join(ex["reasons"]))
    out = report.to_dict()
    out["params"] = params.to_dict()
    out = {"kind": "fit", **out}
    if args.format == "csv":
        _emit(args, _stage1_csv(report))
    else:
        _emit(args, json.dumps(out, indent=2))
        if args.out is not None:
            _emit(args, _stage1_csv(report), _sibling(args.out, "_stage1.csv"))
    return 0


def _stage1_csv(report) -> str:
    lines = ["d,A,B,residual,n_points"]
    for p in report.per_dim:
        lines.append(f"{p.dim},{p.A!r},{p.B!r},{p.residual!r},{p.n_points}")
    return "\n".join(lines) + "\n"


def cmd_effectiveness(args) -> int:
    if not args.dims:
        raise UsageError("--dims must list at least one dimension")
    radii = list(args.radii or [])
    if args.preset:
        radii = list(PRESETS[args.preset]) + [r for r in radii if r not in PRESETS[args.preset]]
    if not radii:
        raise UsageError("give --radii or --preset")
    grid = effectiveness_grid(_load_params(args.params), args.dims, radii)
    for c in grid.cells:
        for flag in c.flags:
            log.warning("d=%d r=%g: %s", c.dim, c.radius, flag)
    _emit(args, grid.to_csv() if args.format == "csv" else grid.to_json())
    return 0


def _attack_sets(specs):
    sets = {}
    for spec in specs:
        name, sep, path = spec.partition("=")
        if not sep:
            name, path = Path(spec).stem, spec
        if name in sets:
            raise UsageError(f"duplicate attack set name {name!r}")
        sets[name] = Path(path)
    return sets


def cmd_eval(args) -> int:
    fmrs = sorted(set(args.fmr), reverse=True)
    if not fmrs:
        raise UsageError("--fmr must list at least one value")
    attack_paths = _attack_sets(args.attacks)
    db = ingest(args.db)
    scores = score_sets(db, pair_cap=args.pair_cap, seed=args.seed)
    table = thresholds(scores, fmrs)
    reports, series, zero_effort = {}, {}, {}
    imposter_se = imposter_mean_jackknife(db)[1] if len(db.identities) >= 3 else None
    series["genuine"] = histogram(scores.genuine, args.bins)
    series["imposter"] = histogram(scores.imposter, args.bins)
    for name, path in attack_paths.items():
        attacks = ingest(path)
        reports[name] = attack_coverage(db, attacks, table)
        _, series[name] = attack_score_distribution(db, attacks, args.bins)
        zero_effort[name] = compare_to_imposters(attack_scores(db, attacks), scores.imposter, imposter_se)
    result = {
        "kind": "eval",
        "database": {"images": len(db), "identities": len(db.identities), "dim": db.dim},
        "scores": {
            "genuine_total": scores.genuine_total, "imposter_total": scores.imposter_total,
            "genuine_used": int(scores.genuine.size), "imposter_used": int(scores.imposter.size),
            "pair_cap": scores.pair_cap, "seed": scores.seed, "warnings": scores.warnings,
        },
        "thresholds": table.to_dict(),
        "coverage": {name: rep.to_dict() for name, rep in reports.items()},
        "zero_effort_comparison": zero_effort,
        "histograms": {name: h.to_dict() for name, h in series.items()},
    }
    for row in table.rows:
        if row.insufficient_imposters:
            log.warning("FMR %g: insufficient imposters (%d)", row.target_fmr, table.imposter_count)
    table_csv = coverage_table_csv(reports)
    if args.format == "csv":
        _emit(args, table_csv)
    else:
        _emit(args, json.dumps(result, indent=2))
    if args.out is not None:
        if args.format != "csv":
            _emit(args, table_csv, _sibling(args.out, "_table.csv"))
        _emit(args, histograms_csv(series), _sibling(args.out, "_hist.csv"))
    return 0


def cmd_synth(args) -> int:
    if args.out is None:
        raise UsageError("synth requires --out")
    ds = synthesize(args.identities, args.images, args.dim, args.noise, args.seed, args.label_prefix)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    if args.out.suffix.lower() == ".csv":
        write_csv(args.out, ds)
    else:
        write_emb1(args.out, ds)
    log.info("wrote %d records (%d identities, d=%d) to %s", len(ds), args.identities, args.dim, args.out)
    return 0


COMMANDS = {
    "capacity": cmd_capacity,
    "coverage": cmd_coverage,
    "fit": cmd_fit,
    "effectiveness": cmd_effectiveness,
    "eval": cmd_eval,
    "synth": cmd_synth,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.manifest is not None:
        if args.command is not None:
            parser.error("--manifest cannot be combined with a subcommand")
        try:
            recorded = json.loads(args.manifest.read_text(encoding="utf-8"))
            argv = list(recorded["argv"])
        except (OSError, ValueError, KeyError) as exc:
            print(f"facecap: error: unreadable manifest: {exc}", file=sys.stderr)
            return 1
        args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("facecap: error: a subcommand is required", file=sys.stderr)
        return 2

    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        code = COMMANDS[args.command](args)
    except UsageError as exc:
        parser.subcommands[args.command].print_usage(sys.stderr)
        print(f"facecap {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - surfaced as exit code 1
        log.debug("failure", exc_info=True)
        print(f"facecap {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    write_manifest(args, argv)
    return code


if __name__ == "__main__":
    sys.exit(main())
