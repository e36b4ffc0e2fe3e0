"""Command-line front end.

Subcommands: ``analyze``, ``scale``, ``search``, ``compare`` and
``roofline``.  Each one builds a :class:`ReportBundle`; with ``--out`` the
bundle is written to that directory (plus ``manifest.json``), otherwise the
main table is printed.  Exit codes: 0 success, 2 bad input, 3 the request
could not be computed.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

from .arch_ir import BUILTIN_MODELS, build_efficientnet_x_b0, load_model, model_to_dict
from .cost_model import (COST_CSV_COLUMNS, DEFAULT_BATCH, builtin_profile_names, model_cost,
                         sig6)
from .errors import AccelScaleError, ComputationError, InputError, ParseError
from .lacs import (FAMILY_COLUMNS, RewardConfig, SyntheticAccuracy,
                   builtin_schedule_names, check_same_levels, family_rows, grid_search_coeffs,
                   scale_family)
from .nas_lite import SearchConfig, SearchSpace, evolutionary_search, load_search_config
from .reports import (SUMMARY_COLUMNS, ReportBundle, marker_for, roofline_svg, rows_to_csv,
                      rows_to_json, stage_rows, summary_row)
from .validation import check_coeffs, check_grid, check_model, check_profile, check_schedule

log = logging.getLogger("accelscale")

COMPARE_COLUMNS = ("level", "latency_a_s", "latency_b_s", "speedup")


def _table(name: str, rows, columns, fmt: str) -> tuple[str, str]:
    if fmt == "json":
        return f"{name}.json", rows_to_json([{c: r[c] for c in columns} for r in rows])
    return f"{name}.csv", rows_to_csv(rows, columns)


# -- commands -------------------------------------------------------------------------

def cmd_analyze(model, profile, batch: int = DEFAULT_BATCH, fmt: str = "csv") -> ReportBundle:
    spec = check_model(model)
    prof = check_profile(profile)
    cost = model_cost(spec, prof, batch)
    bundle = ReportBundle()
    name, text = _table("stages", stage_rows(cost), COST_CSV_COLUMNS, fmt)
    bundle.tables[name] = text
    name, text = _table("summary", [summary_row(cost)], SUMMARY_COLUMNS, fmt)
    bundle.tables[name] = text
    bundle.plots["roofline.svg"] = roofline_svg([prof], [marker_for(cost)],
                                                title=f"{spec.name} on {prof.name}")
    return bundle


def cmd_scale(model, profile, coeffs=None, schedule="lacs_tpu", search: bool = False,
              grid=None, target_latency: float | None = None, target_ratio: float = 2.0,
              batch: int = DEFAULT_BATCH, fmt: str = "csv") -> ReportBundle:
    base = check_model(model)
    prof = check_profile(profile)
    sched = check_schedule(schedule)
    bundle = ReportBundle()
    if search:
        target = target_latency or target_ratio * model_cost(base, prof, batch).total_latency
        result = grid_search_coeffs(base, prof, SyntheticAccuracy(base), RewardConfig(target),
                                    check_grid(grid), batch=batch)
        bundle.tables["search.json" if fmt == "json" else "search.csv"] = (
            result.to_json() if fmt == "json" else result.to_csv())
        c = result.best
        log.info("search picked %s after %d evaluations", c, len(result.evaluated))
    elif coeffs is not None:
        c = check_coeffs(coeffs)
    else:
        raise InputError("give --coeffs or --search")
    members = scale_family(base, c, sched, prof, batch=batch)
    name, text = _table("family", family_rows(members, base), FAMILY_COLUMNS, fmt)
    bundle.tables[name] = text
    index = {"base": base.name, "profile": prof.name, "batch": batch,
             "coeffs": list(c.as_tuple()), "levels": []}
    for m in members:
        path = f"models/{m.level}.json"
        bundle.documents[path] = json.dumps(model_to_dict(m.spec), indent=2) + "\n"
        index["levels"].append({"name": m.level, "phi": m.phi, "model": path})
    bundle.documents["family_index.json"] = json.dumps(index, indent=2) + "\n"
    bundle.documents["schedule.json"] = json.dumps(sched.to_dict(), indent=2) + "\n"
    return bundle


def cmd_search(config=None, profile="tpu_v3_like", budget: int | None = None,
               seed: int | None = None, fmt: str = "csv") -> ReportBundle:
    if isinstance(config, SearchConfig):
        cfg = config
    else:
        cfg = load_search_config(config) if config else SearchConfig(SearchSpace())
    prof = check_profile(profile)
    budget = cfg.budget if budget is None else budget
    seed = cfg.seed if seed is None else seed
    if budget < cfg.population:
        raise InputError(f"budget ({budget}) must be >= population ({cfg.population})")
    surrogate = SyntheticAccuracy(build_efficientnet_x_b0())
    result = evolutionary_search(cfg.space, surrogate, prof, None, budget, seed,
                                 cfg.population, cfg.samples)
    bundle = ReportBundle()
    bundle.documents["run_log.jsonl"] = result.log_jsonl()
    name, text = _table("pareto", result.archive.to_rows(),
                        ("accuracy", "latency_s", "candidate"), fmt)
    bundle.tables[name] = text
    best = cfg.space.build(result.best.candidate)
    bundle.documents["best_model.json"] = json.dumps(model_to_dict(best), indent=2) + "\n"
    bundle.documents["best_candidate.json"] = json.dumps(
        result.best.to_dict(), indent=2, sort_keys=True) + "\n"
    return bundle


def _load_family(folder) -> tuple[list[str], dict[str, dict]]:
    folder = Path(folder)
    index_path = folder / "family_index.json"
    try:
        index = json.loads(index_path.read_text())
    except OSError as exc:
        raise ParseError(f"not a family directory: {exc.strerror}", path=str(index_path)) from None
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path=str(index_path), line=exc.lineno) from None
    names = [lv["name"] for lv in index["levels"]]
    models = {lv["name"]: load_model(folder / lv["model"]) for lv in index["levels"]}
    return names, models


def cmd_compare(family_a, family_b, profile, batch: int = DEFAULT_BATCH,
                fmt: str = "csv") -> tuple[ReportBundle, float]:
    """Per-level latency of family A vs family B; speedup = latency_b / latency_a."""
    prof = check_profile(profile)
    names_a, a = _load_family(family_a)
    names_b, b = _load_family(family_b)
    check_same_levels(names_a, names_b)
    rows = []
    logs = []
    for n in names_a:
        la = model_cost(a[n], prof, batch).total_latency
        lb = model_cost(b[n], prof, batch).total_latency
        ratio = lb / la
        logs.append(math.log(ratio))
        rows.append({"level": n, "latency_a_s": sig6(la), "latency_b_s": sig6(lb),
                     "speedup": sig6(ratio)})
    geomean = math.exp(sum(logs) / len(logs))
    bundle = ReportBundle()
    name, text = _table("comparison", rows, COMPARE_COLUMNS, fmt)
    bundle.tables[name] = text
    bundle.documents["geomean.txt"] = f"geomean speedup: {sig6(geomean)}\n"
    return bundle, geomean


def cmd_roofline(profiles: Sequence, models: Sequence = (), batch: int = DEFAULT_BATCH,
                 fmt: str = "csv") -> ReportBundle:
    profs = [check_profile(p) for p in profiles]
    if not profs:
        raise InputError("roofline needs at least one --profile")
    specs = [check_model(m) for m in models]
    markers, rows = [], []
    # Markers are placed with the first profile's cost model.
    for s in specs:
        c = model_cost(s, profs[0], batch)
        markers.append(marker_for(c))
        rows.append({"model": s.name, "profile": profs[0].name,
                     "I": sig6(c.aggregate_intensity), "achieved_ops_s": sig6(c.achieved_rate)})
    bundle = ReportBundle()
    bundle.plots["roofline.svg"] = roofline_svg(profs, markers)
    name, text = _table("markers", rows, ("model", "profile", "I", "achieved_ops_s"), fmt)
    bundle.tables[name] = text
    return bundle


# -- argparse --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="accelscale",
        description="Roofline cost analysis, latency-aware compound scaling and "
                    "architecture search for CNN families.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model=True):
        if model:
            sp.add_argument("--model", required=True,
                            help=f"model JSON file or builtin ({', '.join(BUILTIN_MODELS)})")
        sp.add_argument("--profile", default="tpu_v3_like",
                        help=f"profile JSON file or name ({', '.join(builtin_profile_names())}); "
                             "names are also looked up in $ACCELSCALE_PROFILE_DIR")
        sp.add_argument("--batch", type=int, default=DEFAULT_BATCH)
        sp.add_argument("--format", choices=("csv", "json"), default="csv")
        sp.add_argument("--out", help="output directory (default: print main table)")

    sp = sub.add_parser("analyze", help="per-stage roofline cost of one model")
    common(sp)

    sp = sub.add_parser("scale", help="scale a base model into a family")
    common(sp)
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--coeffs", help="alpha,beta,gamma")
    g.add_argument("--search", action="store_true", help="grid-search the coefficients")
    sp.add_argument("--schedule", default="lacs_tpu",
                    help=f"schedule JSON file or name ({', '.join(builtin_schedule_names())})")
    sp.add_argument("--grid", nargs=3, metavar="MIN:MAX:STEP",
                    help="alpha, beta and gamma axes for --search")
    sp.add_argument("--target-latency", type=float, help="search latency target in seconds")
    sp.add_argument("--target-ratio", type=float, default=2.0,
                    help="search target as a multiple of the base latency (default 2)")

    sp = sub.add_parser("search", help="regularized-evolution architecture search")
    common(sp, model=False)
    sp.add_argument("--config", help="search config JSON")
    sp.add_argument("--budget", type=int)
    sp.add_argument("--seed", type=int)

    sp = sub.add_parser("compare", help="per-level latency of two scaled families")
    common(sp, model=False)
    sp.add_argument("family_a")
    sp.add_argument("family_b")

    sp = sub.add_parser("roofline", help="roofline chart of profiles and models")
    sp.add_argument("--profile", action="append", required=True)
    sp.add_argument("--model", action="append", default=[])
    sp.add_argument("--batch", type=int, default=DEFAULT_BATCH)
    sp.add_argument("--format", choices=("csv", "json"), default="csv")
    sp.add_argument("--out", help="output directory (default: print the SVG)")
    return p


def _emit(bundle: ReportBundle, out: str | None, main: str) -> None:
    if out:
        manifest = bundle.write(out)
        print(f"wrote {len(bundle.files())} file(s) and {manifest}")
    else:
        sys.stdout.write(bundle.files()[main])


def _main_table(bundle: ReportBundle, stem: str) -> str:
    return next(n for n in bundle.files() if n.startswith(stem))


def run(args: argparse.Namespace) -> int:
    if args.command == "analyze":
        b = cmd_analyze(args.model, args.profile, args.batch, args.format)
        _emit(b, args.out, _main_table(b, "summary"))
    elif args.command == "scale":
        b = cmd_scale(args.model, args.profile, args.coeffs, args.schedule, args.search,
                      args.grid, args.target_latency, args.target_ratio, args.batch, args.format)
        _emit(b, args.out, _main_table(b, "family"))
    elif args.command == "search":
        b = cmd_search(args.config, args.profile, args.budget, args.seed, args.format)
        _emit(b, args.out, _main_table(b, "pareto"))
    elif args.command == "compare":
        b, geomean = cmd_compare(args.family_a, args.family_b, args.profile, args.batch,
                                 args.format)
        _emit(b, args.out, _main_table(b, "comparison"))
        print(f"geomean speedup: {sig6(geomean)}")
    elif args.command == "roofline":
        b = cmd_roofline(args.profile, args.model, args.batch, args.format)
        _emit(b, args.out, "roofline.svg")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return run(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ComputationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except AccelScaleError as exc:  # pragma: no cover - every subclass is covered above
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
