"""Command-line surface: solve, exclude, scan, zoom, verify, export-plot.

The only module that touches files.  All numeric output goes through
ResultRecord so every value carries provenance and an accuracy estimate.
Exit code 0 covers successful runs including empty results; nonzero is
reserved for operational failures (bad config, corrupt checkpoints).
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from typing import Optional

import numpy as np

from .afe import TestFunction, admissible_t_range, equation_sites
from .exclusion import (
    DEFAULT_RECIPE_FAMILY,
    ExclusionRecipe,
    exclusion_scan,
    solve_and_bound,
    write_region_csv,
)
from .model import EulerStructure, FunctionalEquation, make_fe
from .records import ResultRecord, RunConfig, config_hash, to_jsonable, truncate_decimals
from .search import (
    FAMILIES,
    CandidateRecord,
    GridSpec,
    SearchConfig,
    a32_consistency,
    run_scan,
    zoom,
)
from .solve import Solution, UnknownLayout, growth_filter, solve_coefficients


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config -> domain objects
# ---------------------------------------------------------------------------

def _cx(v) -> complex:
    if isinstance(v, (list, tuple)) and len(v) == 2:
        return complex(float(v[0]), float(v[1]))
    return complex(float(v), 0.0)


def _fe_from(opts: dict) -> FunctionalEquation:
    fe = opts.get("functional_equation")
    if fe is None:
        raise ConfigError("config needs a functional_equation block")
    return make_fe(
        int(fe.get("level", 1)),
        [_cx(m) for m in fe.get("mu", [])],
        [_cx(n) for n in fe.get("nu", [])],
        _cx(fe.get("sign", 1.0)),
    )


def _structure_from(opts: dict) -> EulerStructure:
    eu = opts.get("euler")
    if eu is None:
        raise ConfigError("config needs an euler block")
    return EulerStructure(
        degree=int(eu["degree"]),
        level=int(eu.get("level", 1)),
        bad_primes={int(p): int(d) for p, d in eu.get("bad_primes", {}).items()},
        character=eu.get("character", "trivial"),
        self_dual=bool(eu.get("self_dual", False)),
    )


def _g_from(opts: dict, key: str, default: tuple[float, float]) -> TestFunction:
    pair = opts.get(key, list(default))
    return TestFunction(float(pair[0]), float(pair[1]))


def _pins_from(opts: dict, structure: EulerStructure) -> dict:
    pins = {}
    for n_str, val in opts.get("pins", {}).items():
        n = int(n_str)
        from .model import factorize

        fac = factorize(n)
        if len(fac) != 1:
            raise ConfigError(f"pinned index {n} must be a prime power")
        p, m = fac[0]
        v = _cx(val)
        pins[("prime", p, m, "re")] = v.real
        if not structure.self_dual:
            pins[("prime", p, m, "im")] = v.imag
    return pins


def _sites_from(opts, fe, structure, g1, g2, size, j_max, delta) -> np.ndarray:
    spec = opts.get("sites", "auto")
    if isinstance(spec, list):
        return np.asarray([float(t) for t in spec])
    if spec == "auto":
        t_range = admissible_t_range(fe, g1, j_max, delta * 0.5, g2=g2, structure=structure)
        if t_range[1] <= t_range[0]:
            raise ConfigError("empty admissible t-range; increase j_max")
        return equation_sites(t_range, size)
    count = int(spec["count"])
    return np.linspace(float(spec["t_min"]), float(spec["t_max"]), count)


def _search_config_from(opts: dict, seed_override: Optional[int]) -> SearchConfig:
    s = dict(opts.get("search", {}))
    if "g1" in s:
        s["g1"] = TestFunction(float(s["g1"][0]), float(s["g1"][1]))
    if "g2" in s:
        s["g2"] = TestFunction(float(s["g2"][0]), float(s["g2"][1]))
    if "held_out" in s:
        s["held_out"] = tuple(int(n) for n in s["held_out"])
    if seed_override is not None:
        s["rng_seed"] = seed_override
    return SearchConfig(**s)


def _family_from(opts: dict):
    name = opts.get("family")
    if name not in FAMILIES:
        raise ConfigError(f"unknown family {name!r}; known: {sorted(FAMILIES)}")
    return FAMILIES[name]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _solution_payload(sol: Solution, layout: UnknownLayout, report_n: int) -> dict:
    a = sol.coefficients.entries[: report_n]
    held = a32_consistency(sol.x, layout) if layout.held_out else {}
    return {
        "a": [[float(v.real), float(v.imag)] for v in a],
        "x": [float(v) for v in sol.x],
        "residual_norm": float(sol.residual_norm),
        "multiplicity": int(sol.multiplicity),
        "held_out_discrepancy": {str(n): float(v) for n, v in held.items()},
    }


def cmd_solve(config: RunConfig, seed: Optional[int] = None) -> ResultRecord:
    o = config.options
    fe = _fe_from(o)
    structure = _structure_from(o)
    g1 = _g_from(o, "g1", (0.0, 0.25))
    g2 = _g_from(o, "g2", (0.0, 0.5))
    j_max = int(o["j_max"])
    delta = float(o.get("delta", 0.5e-4))
    held_out = tuple(int(n) for n in o.get("held_out", ()))
    pins = _pins_from(o, structure)
    layout = UnknownLayout.build(structure, j_max, held_out=held_out, pinned=pins)
    sites = _sites_from(o, fe, structure, g1, g2, layout.size, j_max, delta)
    outcome = solve_coefficients(
        fe,
        structure,
        j_max,
        sites,
        g1,
        g2,
        delta=delta,
        restarts=int(o.get("restarts", 50)),
        rng_seed=int(o["rng_seed"]) if seed is None and "rng_seed" in o else (seed or 0),
        held_out=held_out,
        pinned=pins,
        match_count=int(o.get("match_count", 4)),
        match_tol=float(o.get("match_tol", 0.1)),
        max_iter=int(o.get("max_iter", 150)),
    )
    report_n = int(o.get("report_n", 10))
    trunc_rel = max(eq.truncation_bound / eq.scale for eq in outcome.equations)
    payload = {
        "solutions": [
            _solution_payload(s, outcome.layout, report_n) for s in outcome.solutions
        ],
        "converged_runs": sum(1 for r in outcome.reports if r.converged),
        "total_runs": len(outcome.reports),
        "sites": [float(t) for t in outcome.sites],
    }
    precision = {
        "relative_truncation_bound": float(trunc_rel),
        "coefficient_accuracy_estimate": float(10 * trunc_rel),
        "delta": delta,
    }
    return ResultRecord.build("coefficients", payload, precision, config)


def cmd_exclude(config: RunConfig, seed=None, workers: int = 1) -> ResultRecord:
    o = config.options
    family = _family_from(o) if "family" in o else FAMILIES["sl3_maass"]
    structure = family.structure
    if "recipes" in o:
        recipes = []
        for r in o["recipes"]:
            betas = r.get("betas", [0.25, 0.5, -0.25])
            alpha = float(r.get("alpha", 0.0))
            recipes.append(
                ExclusionRecipe(
                    s0=0.5 + 1j * float(r.get("t0", 1.0)),
                    g_triple=tuple(TestFunction(alpha, float(b)) for b in betas),
                    j_max=int(r.get("j_max", 30)),
                )
            )
    else:
        recipes = list(DEFAULT_RECIPE_FAMILY)
    if o.get("mode", "point") == "point":
        point = (float(o["lambda1"]), float(o["lambda2"]))
        fe = family.fe(point)
        verdicts = []
        excluded = False
        for rec in recipes:
            v = solve_and_bound(fe, rec, structure, point=point)
            verdicts.append(v)
            excluded = excluded or v.excluded
            if excluded:
                break
        payload = {
            "mode": "point",
            "point": list(point),
            "excluded": excluded,
            "verdicts": [
                {
                    "b1_interval": list(v.b1_interval),
                    "b2_interval": list(v.b2_interval),
                    "excluded": v.excluded,
                    "recipe": to_jsonable(v.recipe),
                }
                for v in verdicts
            ],
        }
        precision = {"interval_radii": [[v.b1_radius, v.b2_radius] for v in verdicts]}
        return ResultRecord.build("exclusion", payload, precision, config)

    box = o["box"]
    step = float(o["step"])
    region = exclusion_scan(
        ((float(box[0][0]), float(box[0][1])), (float(box[1][0]), float(box[1][1]))),
        step,
        recipes,
        fe_template=lambda l1, l2: family.fe((l1, l2)),
        structure=structure,
    )
    if o.get("csv"):
        write_region_csv(o["csv"], region)
    rows = [
        {
            "point": list(region[k].point),
            "excluded": region[k].excluded,
            "b1_interval": [_finite(x) for x in region[k].b1_interval],
            "b2_interval": [_finite(x) for x in region[k].b2_interval],
        }
        for k in sorted(region)
    ]
    payload = {"mode": "grid", "step": step, "points": rows,
               "excluded_count": sum(r["excluded"] for r in rows)}
    precision = {"interval_model": "ramanujan + truncation + 10x quadrature refinement"}
    return ResultRecord.build("exclusion", payload, precision, config)


def _finite(x: float):
    return float(x) if np.isfinite(x) else None


def _candidate_payload(c: CandidateRecord) -> dict:
    return {
        "params": [float(p) for p in c.params],
        "status": c.status,
        "spread": float(c.spread),
        "support_fraction": float(c.support_fraction),
        "coeff_head": [[float(v.real), float(v.imag)] for v in c.coeff_head],
        "j_max": int(c.j_max),
    }


def cmd_scan(
    config: RunConfig,
    seed: Optional[int] = None,
    workers: int = 1,
    checkpoint_dir: Optional[str] = None,
) -> ResultRecord:
    o = config.options
    family = _family_from(o)
    g = o["grid"]
    grid = GridSpec(
        dimension=int(g["dimension"]),
        corner=tuple(float(c) for c in g["corner"]),
        side=float(g["side"]),
        step=float(g["step"]),
    )
    cfg = _search_config_from(o, seed)
    ckpt = checkpoint_dir or o.get("checkpoint_dir")
    if ckpt:
        _guard_checkpoint_dir(ckpt, config)
    result = run_scan(
        family, grid, cfg,
        checkpoint_dir=ckpt,
        workers=workers,
        zoom_candidates=bool(o.get("zoom", True)),
    )
    payload = {
        "family": family.name,
        "point_solution_counts": {
            "_".join(map(str, k)): len(v) for k, v in sorted(result.solutions.items())
        },
        "skipped_points": [list(k) for k in result.skipped],
        "candidates": [_candidate_payload(c) for c in result.candidates],
    }
    precision = {
        "delta": cfg.delta,
        "zoom_target": cfg.zoom_target,
        "candidate_accuracy": "spread field per candidate",
    }
    record = ResultRecord.build("candidate", payload, precision, config)
    ledger = o.get("ledger")
    if ledger:
        _append_ledger(ledger, [c for c in result.candidates if c.status == "confirmed"])
    return record


def _guard_checkpoint_dir(path: str, config: RunConfig) -> None:
    os.makedirs(path, exist_ok=True)
    manifest = os.path.join(path, "manifest.json")
    h = config.hash()
    if os.path.exists(manifest):
        with open(manifest) as fh:
            try:
                existing = json.load(fh)["config_hash"]
            except (json.JSONDecodeError, KeyError) as exc:
                raise RuntimeError(f"corrupt checkpoint manifest {manifest}") from exc
        if existing != h:
            raise RuntimeError(
                f"checkpoint dir {path} belongs to config {existing}, not {h}; refusing"
            )
    else:
        with open(manifest, "w") as fh:
            json.dump({"config_hash": h}, fh)


def _append_ledger(path: str, candidates) -> None:
    seen = set()
    if os.path.exists(path):
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    seen.add(config_hash(json.loads(line)))
    with open(path, "a") as fh:
        for c in candidates:
            entry = _candidate_payload(c)
            if config_hash(entry) not in seen:
                fh.write(json.dumps(to_jsonable(entry), sort_keys=True) + "\n")


def cmd_zoom(config: RunConfig, seed: Optional[int] = None) -> ResultRecord:
    o = config.options
    family = _family_from(o)
    cfg = _search_config_from(o, seed)
    params = np.array([float(p) for p in o["params"]])
    from .search import scan_point

    outcome = scan_point(params, family, cfg)
    if not outcome.solutions:
        payload = {"params": [float(p) for p in params], "status": "abandoned",
                   "reason": "no solutions at the seed point"}
        return ResultRecord.build(
            "candidate", payload, {"zoom_target": cfg.zoom_target}, config
        )
    best = min(outcome.solutions, key=lambda s: s.residual_norm)
    cand = CandidateRecord(
        params=params,
        coeff_seed=best.x,
        coeff_head=best.coeff_head(4).copy(),
        spread=np.inf,
        support_fraction=1.0,
        status="initial",
        j_max=cfg.j_max,
    )
    refined = zoom(
        cand, family, cfg,
        initial_step=float(o.get("initial_step", 0.05)),
        j_start=int(o["j_start"]) if "j_start" in o else None,
    )
    payload = _candidate_payload(refined)
    precision = {"zoom_target": cfg.zoom_target, "spread": float(refined.spread)}
    record = ResultRecord.build("candidate", payload, precision, config)
    ledger = o.get("ledger")
    if ledger and refined.status == "confirmed":
        _append_ledger(ledger, [refined])
    return record


def cmd_verify(config: RunConfig, seed: Optional[int] = None) -> ResultRecord:
    """Re-solve with held-out a_32/a_64 and optionally with pinned values."""
    o = dict(config.options)
    o.setdefault("held_out", [32, 64])
    base_cfg = RunConfig(command="solve", options=o)
    base = cmd_solve(base_cfg, seed)
    checks = []
    for sol in base.payload["solutions"]:
        checks.append(
            {
                "held_out_discrepancy": sol["held_out_discrepancy"],
                "max_discrepancy": max(
                    [float(v) for v in sol["held_out_discrepancy"].values()] or [0.0]
                ),
            }
        )
    payload = {"base": base.payload, "consistency": checks}
    if "pins" in o and o["pins"]:
        pinned_cfg = RunConfig(command="solve", options=o)
        pinned = cmd_solve(pinned_cfg, seed)
        payload["pinned_resolve"] = pinned.payload
    return ResultRecord.build("verification", payload, base.precision, config)


def cmd_export_plot(config: RunConfig) -> str:
    """CSV of (lambda1, lambda2[, lambda3], status), lexicographic, truncated."""
    o = config.options
    rows = []
    for path in o.get("inputs", []):
        with open(path) as fh:
            rec = ResultRecord.parse(fh.read())
        if rec.kind == "candidate":
            cands = rec.payload.get("candidates") or [rec.payload]
            for c in cands:
                if "params" not in c:
                    continue
                rows.append((tuple(float(p) for p in c["params"]), c.get("status", "?")))
        elif rec.kind == "exclusion":
            pts = rec.payload.get("points") or [rec.payload]
            for p in pts:
                if "point" not in p:
                    continue
                status = "excluded" if p.get("excluded") else "not-excluded"
                rows.append((tuple(float(v) for v in p["point"]), status))
    rows.sort(key=lambda r: r[0])
    width = max((len(r[0]) for r in rows), default=2)
    out_path = o["csv"]
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = [f"lambda{i+1}" for i in range(width)] + ["status"]
        w.writerow(header)
        for params, status in rows:
            cells = [truncate_decimals(p) for p in params]
            cells += [""] * (width - len(params))
            w.writerow(cells + [status])
    return out_path


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _write_record(record: ResultRecord, out: Optional[str]) -> None:
    text = record.serialize()
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="lfinder",
        description="Find L-functions from a functional equation and Euler-product shape.",
    )
    sub = parser.add_subparsers(dest="cmd", required=True)
    for name in ("solve", "exclude", "scan", "zoom", "verify", "export-plot"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON config path")
        sp.add_argument("--out", default=None, help="result record output path")
        sp.add_argument("--seed", type=int, default=None, help="override rng seed")
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--checkpoint-dir", default=None)
    args = parser.parse_args(argv)
    try:
        config = RunConfig.load(args.config)
        if args.cmd != config.command:
            raise ConfigError(
                f"config is for command {config.command!r}, invoked as {args.cmd!r}"
            )
        if args.cmd == "solve":
            _write_record(cmd_solve(config, args.seed), args.out)
        elif args.cmd == "exclude":
            _write_record(cmd_exclude(config, args.seed, args.workers), args.out)
        elif args.cmd == "scan":
            _write_record(
                cmd_scan(config, args.seed, args.workers, args.checkpoint_dir), args.out
            )
        elif args.cmd == "zoom":
            _write_record(cmd_zoom(config, args.seed), args.out)
        elif args.cmd == "verify":
            _write_record(cmd_verify(config, args.seed), args.out)
        elif args.cmd == "export-plot":
            path = cmd_export_plot(config)
            print(path)
    except (ConfigError, RuntimeError, OSError, KeyError, ValueError) as exc:
        print(f"lfinder: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
