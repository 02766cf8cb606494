"""Command-line entry point.

    chartgan <subcommand> --config <path> [--seed N] [--emit csv|json] [--out <dir>] [--threads N]

Exit codes: 0 when the configured thresholds are met, 1 when they are not,
2 on a configuration error.
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import jsonschema

from . import _output as out
from ._seeding import derive_seed, rng_for
from .chart_model import build_atlas
from .coupling import brute_force_coupling, verify_localization
from .generalization import LK_FORMS, eps_local_global, gap_report, thm3_sides
from .generator import ideal_generator
from .metrics import exact_1d, lk_monte_carlo, lk_paper_form, scalar_gaussian
from .permutation import Permutation
from .trainer import TrainConfig, TrainingDivergedError, attractor_probe, train, two_chart_config

EXIT_OK, EXIT_THRESHOLD, EXIT_CONFIG = 0, 1, 2

GEN_COLUMNS = ["gap_adv", "eps_classical", "eta", "eps_local", "eps_global", "lhs_22", "rhs_22",
               "lhs_28", "rhs_28", "satisfied", "lk_form", "seed"]

_int = {"type": "integer"}
_pos_int = {"type": "integer", "minimum": 1}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_rate = {"type": "number", "minimum": 0, "maximum": 1}


def _list(item):
    return {"type": "array", "items": item, "minItems": 1}


def _schema(props: dict, required=()):
    base = {"schema_version": {"const": 1}, "seeds": _list(_int)}
    return {
        "type": "object",
        "additionalProperties": False,
        "required": ["schema_version", "seeds", *required],
        "properties": base | props,
    }


SCHEMAS = {
    "verify-localization": _schema({
        "k": _pos_int, "dimension": _pos_int, "separation": _pos, "trace": _pos,
        "n_per_pair": {"type": "integer", "minimum": 2}, "n_probe": _pos_int,
        "match_threshold": _rate, "brute_force_candidates": {"type": "integer", "minimum": 0},
    }, ("k", "dimension", "separation", "trace", "n_per_pair")),
    "prop1": _schema({
        "k_values": _list(_pos_int), "m_values": _list(_pos_int), "dimension": _pos_int,
        "separation": _pos, "trace": _pos, "n_mc": {"type": "integer", "minimum": 2},
        "lk_forms": _list({"enum": list(LK_FORMS)}),
        "thresholds": {"type": "object", "additionalProperties": False,
                       "properties": {f: _rate for f in LK_FORMS}},
    }, ("k_values", "m_values", "dimension", "separation", "trace")),
    "thm-scan": _schema({
        "k": _pos_int, "dimension": _pos_int, "separation": _pos,
        "m_values": _list(_pos_int), "n_values": _list(_pos_int),
        "tr_sigma_M_values": _list(_pos), "tr_sigma_N_values": _list(_pos),
        "M_G_values": _list(_pos), "epsilon_values": _list(_nonneg),
        "lk_form": {"enum": list(LK_FORMS)}, "n_mc": {"type": "integer", "minimum": 2},
        "n_population": {"type": "integer", "minimum": 4},
    }, ("k", "dimension", "separation", "m_values", "n_values", "tr_sigma_M_values",
        "tr_sigma_N_values", "M_G_values", "epsilon_values")),
    "train-demo": _schema({
        "lambdas": _list(_nonneg), "steps": {"type": "integer", "minimum": 0},
        "step_size": _nonneg, "batch": {"type": "integer", "minimum": 2}, "init_scale": _nonneg,
        "h": _pos, "n_probe": _pos_int, "trace": _pos, "source_gap": _pos, "target_gap": _pos,
        "write_traces": {"type": "boolean"},
        "thresholds": {"type": "object", "additionalProperties": False, "properties": {
            "identity_rate_nondecreasing": {"type": "boolean"},
            "min_identity_rate_at_max_lambda": _rate}},
    }, ("lambdas", "steps")),
    "lk-bench": _schema({
        "gaps": _list({"type": "number"}), "variances": _list(_pos),
        "n_mc": {"type": "integer", "minimum": 2}, "n_sigma": _pos, "atol": _nonneg,
    }, ("gaps", "variances")),
}


class ConfigError(Exception):
    pass


def load_config(path, subcommand: str, seed: int | None = None) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc}") from exc
    try:
        jsonschema.validate(doc, SCHEMAS[subcommand])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"schema error at {where}: {exc.message}") from exc
    if seed is not None:
        doc["seeds"] = [seed]
    doc["seeds"] = sorted(set(doc["seeds"]))
    return doc


def _pmap(fn, items, threads: int):
    items = list(items)
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _emit_table(files, stem, columns, rows, emit):
    if emit == "csv":
        files[f"{stem}.csv"] = out.csv_text(columns, rows)
    else:
        files[f"{stem}.json"] = out.json_text([{c: r.get(c) for c in columns} for r in rows])


def _emit_summary(files, summary, emit):
    _emit_table(files, "summary", list(summary), [summary], emit)


# verify-localization

def run_verify_localization(cfg: dict, emit: str = "csv", threads: int = 1):
    k, d = cfg["k"], cfg["dimension"]
    n_bf = cfg.get("brute_force_candidates", 0)

    def one(seed):
        source = build_atlas(k, d, cfg["separation"], cfg["trace"], derive_seed(seed, 0))
        target = build_atlas(k, d, cfg["separation"], cfg["trace"], derive_seed(seed, 1))
        p = Permutation.random(k, rng_for(seed, 2))
        g = ideal_generator(source, target, p)
        rep = verify_localization(g, source, target, cfg["n_per_pair"], derive_seed(seed, 3),
                                  n_probe=cfg.get("n_probe", 1000))
        advantage = None
        if n_bf:
            bf = brute_force_coupling(rep.cost, n_bf, derive_seed(seed, 4))
            advantage = rep.objective_eq14 - bf.best
        return seed, rep, advantage

    results = _pmap(one, cfg["seeds"], threads)
    rows, files = [], {}
    for seed, rep, adv in results:
        rec = rep.recovered_permutation
        rows.append({
            "seed": seed, "declared": rep.declared_permutation.cycle_string(),
            "recovered": "" if rec is None else rec.cycle_string(), "match": rep.match,
            "objective_eq14": rep.objective_eq14, "objective_eq16": rep.objective_eq16,
            "discrepancy": rep.discrepancy, "stderr_eq16": rep.stderr_eq16,
            "inconclusive": rep.inconclusive,
            "inconclusive_columns": " ".join(map(str, rep.inconclusive_columns)),
            "member": rep.member, "violation_rate": rep.violation_rate,
            "brute_force_advantage": adv,
        })
        if emit == "csv":
            files[f"cost_seed{seed}.csv"] = out.matrix_csv(rep.cost.entries)
            files[f"coupling_seed{seed}.csv"] = out.matrix_csv(rep.coupling.entries)
        else:
            files[f"report_seed{seed}.json"] = out.json_text(rep.to_dict() | {"seed": seed})
    n = len(rows)
    match_rate = sum(r["match"] for r in rows) / n
    threshold = cfg.get("match_threshold", 1.0)
    advs = [r["brute_force_advantage"] for r in rows if r["brute_force_advantage"] is not None]
    summary = {
        "n_seeds": n, "match_rate": match_rate,
        "inconclusive_rate": sum(r["inconclusive"] for r in rows) / n,
        "member_rate": sum(r["member"] for r in rows) / n,
        "max_brute_force_advantage": max(advs) if advs else None,
        "match_threshold": threshold, "passed": match_rate >= threshold,
    }
    _emit_table(files, "localization", list(rows[0]), rows, emit)
    _emit_summary(files, summary, emit)
    return files, summary, summary["passed"]


# prop1

def run_prop1(cfg: dict, emit: str = "csv", threads: int = 1):
    forms = cfg.get("lk_forms", list(LK_FORMS))
    thresholds = {"paper_closed": 1.0, "monte_carlo": 0.95} | cfg.get("thresholds", {})
    grid = list(itertools.product(sorted(set(cfg["k_values"])), sorted(set(cfg["m_values"])), cfg["seeds"]))

    def one(cell):
        k, m, seed = cell
        spec = build_atlas(k, cfg["dimension"], cfg["separation"], cfg["trace"], derive_seed(seed, k, 0))
        return [eps_local_global(spec, m, f, derive_seed(seed, k, m), n_mc=cfg.get("n_mc", 1000))
                for f in forms]

    rows = []
    for (k, m, seed), reps in zip(grid, _pmap(one, grid, threads)):
        for rep in reps:
            rows.append({"K": k, "m": m, "seed": seed, "lk_form": rep.lk_form,
                         "eps_local": rep.eps_local, "eps_global": rep.eps_global,
                         "satisfied": rep.satisfied if k >= 2 else None})
    rows.sort(key=lambda r: (LK_FORMS.index(r["lk_form"]), r["K"], r["m"], r["seed"]))
    summary, passed = {"n_configs": len(grid)}, True
    for f in forms:
        counted = [r for r in rows if r["lk_form"] == f and r["K"] >= 2]
        rate = sum(r["satisfied"] for r in counted) / len(counted) if counted else None
        summary[f"rate_{f}"] = rate
        summary[f"threshold_{f}"] = thresholds[f]
        summary[f"excluded_k1_{f}"] = sum(1 for r in rows if r["lk_form"] == f and r["K"] < 2)
        if rate is not None and rate < thresholds[f]:
            passed = False
    summary["passed"] = passed
    files = {}
    _emit_table(files, "prop1", ["K", "m"] + GEN_COLUMNS, rows, emit)
    _emit_summary(files, summary, emit)
    return files, summary, passed


# thm-scan

def _violations(rows, key, along):
    """Count adjacent grid pairs (all other keys fixed) where ``key`` fails to decrease along ``along``."""
    groups = {}
    for r in rows:
        fixed = tuple((c, r[c]) for c in ("seed", "n", "m", "tr_sigma_M", "tr_sigma_N", "M_G", "epsilon") if c != along)
        groups.setdefault(fixed, []).append(r)
    bad = 0
    for members in groups.values():
        members.sort(key=lambda r: r[along])
        bad += sum(1 for a, b in zip(members, members[1:]) if not b[key] < a[key])
    return bad


def run_thm_scan(cfg: dict, emit: str = "csv", threads: int = 1):
    k, d = cfg["k"], cfg["dimension"]
    form = cfg.get("lk_form", "paper_closed")
    axes = [sorted(set(cfg[a])) for a in ("m_values", "n_values", "tr_sigma_M_values",
                                           "tr_sigma_N_values", "M_G_values", "epsilon_values")]
    grid = list(itertools.product(cfg["seeds"], *axes))

    def one(cell):
        seed, m, n, tr_m, tr_n, mg, eps = cell
        source = build_atlas(k, d, cfg["separation"], tr_m, derive_seed(seed, 0))
        target = build_atlas(k, d, cfg["separation"], tr_n, derive_seed(seed, 1))
        g = ideal_generator(source, target, Permutation.identity(k))
        t3 = thm3_sides(g, source, target, n, m, eps, derive_seed(seed, 2), M_G=mg)
        gr = gap_report(g, source, target, m, n, eps, form, derive_seed(seed, 3), M_G=mg,
                        n_mc=cfg.get("n_mc", 1000), n_population=cfg.get("n_population", 20_000))
        return {"seed": seed, "m": m, "n": n, "tr_sigma_M": tr_m, "tr_sigma_N": tr_n, "M_G": mg,
                "epsilon": eps, "K": k, "gap_adv": gr.gap_adv, "eps_classical": gr.eps_classical,
                "eta": gr.eta, "lhs_22": gr.lhs_22, "rhs_22": gr.rhs_22, "satisfied_22": gr.satisfied_22,
                "implication_holds": gr.implication_holds, "lhs_28": t3.lhs, "rhs_28": t3.rhs,
                "satisfied": t3.satisfied, "near_boundary": t3.near_boundary,
                "sample_convention": t3.sample_convention, "lk_form": form}

    rows = _pmap(one, grid, threads)
    summary = {
        "n_cells": len(rows),
        "satisfied_28_rate": sum(r["satisfied"] for r in rows) / len(rows),
        "satisfied_22_rate": sum(r["satisfied_22"] for r in rows) / len(rows),
        "implication_failures": sum(not r["implication_holds"] for r in rows),
        "rhs_28_violations_tr_sigma_M": _violations(rows, "rhs_28", "tr_sigma_M"),
        "rhs_28_violations_M_G": _violations(rows, "rhs_28", "M_G"),
    }
    summary["passed"] = summary["rhs_28_violations_tr_sigma_M"] == 0 and summary["rhs_28_violations_M_G"] == 0
    columns = ["m", "n", "tr_sigma_M", "tr_sigma_N", "M_G", "epsilon", "K"] + GEN_COLUMNS + [
        "satisfied_22", "implication_holds", "near_boundary", "sample_convention"]
    files = {}
    _emit_table(files, "thm_scan", columns, rows, emit)
    _emit_summary(files, summary, emit)
    return files, summary, summary["passed"]


# train-demo

TRACE_COLUMNS = ["step", "loss_adv", "loss_l1", "combined", "permutation", "member"]


def _trace_rows(records):
    return [{"step": r.step, "loss_adv": r.loss_adv, "loss_l1": r.loss_l1, "combined": r.combined,
             "permutation": "" if r.recovered_permutation is None else r.recovered_permutation.cycle_string(),
             "member": "" if r.pti_member is None else r.pti_member.cycle_string()} for r in records]


def run_train_demo(cfg: dict, emit: str = "csv", threads: int = 1):
    source, target = two_chart_config(cfg.get("trace", 0.02), cfg.get("source_gap", 2.0), cfg.get("target_gap", 10.0))
    lambdas = sorted(set(float(x) for x in cfg["lambdas"]))
    identity = Permutation.identity(source.k)
    write_traces = cfg.get("write_traces", True)
    grid = list(itertools.product(lambdas, cfg["seeds"]))

    def one(cell):
        lam, seed = cell
        tc = TrainConfig(lam=lam, steps=cfg["steps"], step_size=cfg.get("step_size", 0.2),
                         batch=cfg.get("batch", 32), seed=seed, init_scale=cfg.get("init_scale", 0.1),
                         h=cfg.get("h", 1e-5), n_probe=cfg.get("n_probe", 200))
        try:
            res = train(tc, source, target)
            return lam, seed, res.trace, res.generator, ""
        except TrainingDivergedError as exc:
            return lam, seed, exc.trace, exc.generator, str(exc)

    files, runs = {}, []
    for lam, seed, trace, g, err in _pmap(one, grid, threads):
        t0, persisted = attractor_probe(trace)
        final = trace.final
        runs.append({"lambda": lam, "seed": seed, "diverged": bool(err), "message": err,
                     "final_permutation": "" if final.recovered_permutation is None
                     else final.recovered_permutation.cycle_string(),
                     "identity": (not err) and final.recovered_permutation == identity,
                     "first_member_step": t0, "persisted": persisted if t0 is not None else None,
                     "final_loss_adv": final.loss_adv, "final_loss_l1": final.loss_l1,
                     "initial_combined": trace.initial.combined, "final_combined": final.combined})
        if write_traces:
            stem = f"trace_lambda{lam:g}_seed{seed}"
            _emit_table(files, stem, TRACE_COLUMNS, _trace_rows(trace.all_records()), emit)
            if g is not None:
                files[f"generator_lambda{lam:g}_seed{seed}.json"] = g.to_json() + "\n"
    per_lambda = []
    for lam in lambdas:
        mine = [r for r in runs if r["lambda"] == lam]
        entered = [r for r in mine if r["first_member_step"] is not None]
        per_lambda.append({
            "lambda": lam, "n_runs": len(mine),
            "identity_rate": sum(r["identity"] for r in mine) / len(mine),
            "non_identity_rate": sum(not r["identity"] for r in mine) / len(mine),
            "n_member": len(entered),
            "persistence_rate": sum(r["persisted"] for r in entered) / len(entered) if entered else None,
            "n_diverged": sum(r["diverged"] for r in mine),
        })
    th = {"identity_rate_nondecreasing": True, "min_identity_rate_at_max_lambda": 0.0} | cfg.get("thresholds", {})
    rates = [s["identity_rate"] for s in per_lambda]
    monotone = all(b >= a for a, b in zip(rates, rates[1:]))
    passed = (monotone or not th["identity_rate_nondecreasing"]) and rates[-1] >= th["min_identity_rate_at_max_lambda"]
    summary = {"n_runs": len(runs), "identity_rate_nondecreasing": monotone, "passed": passed}
    _emit_table(files, "runs", list(runs[0]), runs, emit)
    _emit_table(files, "summary_by_lambda", list(per_lambda[0]), per_lambda, emit)
    _emit_summary(files, summary, emit)
    return files, summary | {"by_lambda": per_lambda}, passed


# lk-bench

def run_lk_bench(cfg: dict, emit: str = "csv", threads: int = 1):
    n_mc, n_sigma, atol = cfg.get("n_mc", 100_000), cfg.get("n_sigma", 3.0), cfg.get("atol", 1e-5)
    grid = list(itertools.product(cfg["seeds"], sorted(set(cfg["gaps"])), sorted(set(cfg["variances"]))))

    def one(item):
        idx, (seed, gap, var) = item
        a, b = scalar_gaussian(0.0, var, 0), scalar_gaussian(gap, var, 1)
        paper = lk_paper_form(a, b).value
        exact = exact_1d(a, b).value
        mc = lk_monte_carlo(a, b, n_mc, derive_seed(seed, idx))
        tol = n_sigma * mc.stderr + atol
        return {"seed": seed, "gap": gap, "var_a": var, "var_b": var, "paper": paper, "exact": exact,
                "mc": mc.value, "mc_stderr": mc.stderr, "discrepancy": paper - exact,
                "relative_discrepancy": (paper - exact) / exact if exact > 0 else None,
                "flag": abs(paper - exact) > tol, "mc_agrees": abs(mc.value - exact) <= tol}

    rows = _pmap(one, enumerate(grid), threads)
    summary = {"n_cases": len(rows), "n_flagged": sum(r["flag"] for r in rows),
               "n_mc_disagree": sum(not r["mc_agrees"] for r in rows)}
    summary["passed"] = summary["n_mc_disagree"] == 0
    files = {}
    _emit_table(files, "lk_bench", list(rows[0]), rows, emit)
    _emit_summary(files, summary, emit)
    return files, summary, summary["passed"]


RUNNERS = {
    "verify-localization": run_verify_localization,
    "prop1": run_prop1,
    "thm-scan": run_thm_scan,
    "train-demo": run_train_demo,
    "lk-bench": run_lk_bench,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chartgan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in RUNNERS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="replace the config's seed list")
        p.add_argument("--emit", choices=("csv", "json"), default="csv")
        p.add_argument("--out", default="results", help="output directory")
        p.add_argument("--threads", type=int, default=1)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.command, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    files, summary, passed = RUNNERS[args.command](cfg, args.emit, max(1, args.threads))
    root = Path(args.out)
    for name in sorted(files):
        out.write(root / name, files[name])
    print(out.json_text(summary), end="")
    return EXIT_OK if passed else EXIT_THRESHOLD


if __name__ == "__main__":
    sys.exit(main())
