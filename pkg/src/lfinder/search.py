"""Grid scan for unknown gamma-shell parameters, indicator interpolation, and
iterative zooming of candidates."""
from __future__ import annotations

import itertools
import json
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .afe import (
    AdmissibilityError,
    TestFunction,
    TruncationError,
    admissible_t_range,
    build_difference_equations,
    equation_sites,
)
from .gammaquad import ContourDecayError
from .model import EulerStructure, FunctionalEquation, make_fe
from .solve import (
    Solution,
    SolveOutcome,
    UnknownLayout,
    solve_coefficients,
)

__all__ = [
    "GridSpec",
    "SearchConfig",
    "SearchFamily",
    "CandidateRecord",
    "EmptyRangeError",
    "FAMILIES",
    "scan_point",
    "match_across_points",
    "indicators",
    "interpolate_candidate",
    "zoom",
    "a32_consistency",
    "run_scan",
]


class EmptyRangeError(RuntimeError):
    """No admissible critical-line range at this J / delta; point skipped."""


# ---------------------------------------------------------------------------
# families: spectral parameters -> functional equation + Euler structure
# ---------------------------------------------------------------------------

def _fe_sl3(params) -> FunctionalEquation:
    l1, l2 = params
    return make_fe(1, (1j * l1, 1j * l2, -1j * (l1 + l2)), (), 1.0)


def _fe_sp4(params) -> FunctionalEquation:
    l1, l2 = params
    return make_fe(1, (1j * l1, 1j * l2, -1j * l1, -1j * l2), (), 1.0)


def _fe_sl4(params) -> FunctionalEquation:
    l1, l2, l3 = params
    return make_fe(1, (1j * l1, 1j * l2, 1j * l3, -1j * (l1 + l2 + l3)), (), 1.0)


def _fe_weight(params) -> FunctionalEquation:
    (k,) = params
    return make_fe(1, (), ((k - 1) / 2,), np.exp(0.5j * np.pi * k))


def _fe_siegel_spin(params) -> FunctionalEquation:
    (k,) = params
    return make_fe(1, (), (0.5, k - 1.5), 1.0)


@dataclass(frozen=True)
class SearchFamily:
    """A parametrized functional-equation shape with its Euler structure."""

    name: str
    dimension: int
    fe_of: Callable
    structure: EulerStructure

    def fe(self, params) -> FunctionalEquation:
        return self.fe_of(tuple(float(p) for p in np.atleast_1d(params)))


FAMILIES: dict[str, SearchFamily] = {
    "sl3_maass": SearchFamily("sl3_maass", 2, _fe_sl3, EulerStructure(degree=3)),
    "sp4_maass": SearchFamily(
        "sp4_maass", 2, _fe_sp4, EulerStructure(degree=4, self_dual=True)
    ),
    "sl4_maass": SearchFamily("sl4_maass", 3, _fe_sl4, EulerStructure(degree=4)),
    "holomorphic_weight": SearchFamily(
        "holomorphic_weight", 1, _fe_weight, EulerStructure(degree=2)
    ),
    "siegel_spin_weight": SearchFamily(
        "siegel_spin_weight", 1, _fe_siegel_spin, EulerStructure(degree=4, self_dual=True)
    ),
}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Scan lattice: corner + step*(i_1..i_D), (side/step + 1) points per axis."""

    dimension: int
    corner: tuple[float, ...]
    side: float
    step: float

    def __post_init__(self):
        if self.dimension != len(self.corner):
            raise ValueError("corner must have `dimension` components")
        ratio = self.side / self.step
        if self.step <= 0 or abs(ratio - round(ratio)) > 1e-9 or ratio < 1:
            raise ValueError("side/step must be a positive integer")

    @property
    def points_per_axis(self) -> int:
        return int(round(self.side / self.step)) + 1

    def indices(self):
        return itertools.product(range(self.points_per_axis), repeat=self.dimension)

    def point(self, index) -> np.ndarray:
        return np.array(self.corner) + self.step * np.array(index, dtype=float)


@dataclass(frozen=True)
class SearchConfig:
    j_max: int = 24
    delta: float = 0.5e-4
    k_extra: int = 8
    restarts: int = 50
    rng_seed: int = 0
    g1: TestFunction = TestFunction(0.0, 0.25)
    g2: TestFunction = TestFunction(0.0, 0.5)
    match_count: int = 4
    match_tol: float = 0.1
    proximity_factor: float = 1.5
    zoom_target: float = 1e-8
    held_out: tuple[int, ...] = ()
    site_resolution: float = 2.0
    range_safety: float = 0.25
    max_iter: int = 120
    zoom_j_cap: int = 150
    zoom_j_growth: float = 1.3
    zoom_restarts: int = 2
    zoom_max_rounds: int = 14

    def __post_init__(self):
        if self.k_extra < 1:
            raise ValueError("k_extra must be >= 1")


@dataclass
class CandidateRecord:
    params: np.ndarray
    coeff_seed: np.ndarray  # free-unknown vector at the scan layout
    coeff_head: np.ndarray  # a_2..a_5 for display/matching
    spread: float
    support_fraction: float
    status: str = "initial"  # initial | zooming | confirmed | abandoned
    j_max: int = 0
    history: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# per-point scan
# ---------------------------------------------------------------------------

def point_sites(family: SearchFamily, params, config: SearchConfig, count: int) -> np.ndarray:
    fe = family.fe(params)
    t_range = admissible_t_range(
        fe,
        config.g1,
        config.j_max,
        config.delta * config.range_safety,
        g2=config.g2,
        structure=family.structure,
        resolution=config.site_resolution,
    )
    if t_range[1] - t_range[0] <= 0:
        raise EmptyRangeError(
            f"no admissible t-range at {params} with J={config.j_max}; increase J"
        )
    return equation_sites(t_range, count)


def scan_point(
    params,
    family: SearchFamily,
    config: SearchConfig,
    sites: Optional[np.ndarray] = None,
    extra_starts: Sequence[np.ndarray] = (),
    rng_seed: Optional[int] = None,
) -> SolveOutcome:
    """Build m+k difference equations, solve the square system multi-start,
    and return deduped growth-filtered solutions plus the indicator equations."""
    fe = family.fe(params)
    layout = UnknownLayout.build(family.structure, config.j_max, held_out=config.held_out)
    count = layout.size + config.k_extra
    if sites is None:
        sites = point_sites(family, params, config, count)
    try:
        return solve_coefficients(
            fe,
            family.structure,
            config.j_max,
            sites,
            config.g1,
            config.g2,
            delta=config.delta,
            restarts=config.restarts,
            rng_seed=config.rng_seed if rng_seed is None else rng_seed,
            held_out=config.held_out,
            extra_starts=extra_starts,
            extra_equations=config.k_extra,
            match_count=config.match_count,
            match_tol=config.match_tol,
            max_iter=config.max_iter,
        )
    except (TruncationError, ContourDecayError, AdmissibilityError) as exc:
        raise EmptyRangeError(f"equation build failed at {params}: {exc}") from exc


# ---------------------------------------------------------------------------
# matching, indicators, interpolation
# ---------------------------------------------------------------------------

def match_across_points(
    solutions_at_p: Sequence[Solution],
    neighbor_solutions: Sequence[Sequence[Solution]],
    match_count: int = 4,
    match_tol: float = 0.1,
) -> list[list[Solution]]:
    """For each solution at P, its nearest solution at each of the D neighbors
    (max-modulus distance over the first match_count coefficients); sets with
    any distance above match_tol are dropped."""
    matched = []
    for sol in solutions_at_p:
        head = sol.coeff_head(match_count)
        group = [sol]
        ok = True
        for nbr in neighbor_solutions:
            best, best_d = None, np.inf
            for cand in nbr:
                d = float(np.max(np.abs(cand.coeff_head(match_count) - head)))
                if d < best_d:
                    best, best_d = cand, d
            if best is None or best_d > match_tol:
                ok = False
                break
            group.append(best)
        if ok:
            matched.append(group)
    return matched


def indicators(
    matched_set: Sequence[Solution],
    extra_equations: Sequence[Sequence],
) -> np.ndarray:
    """(D+1, k) array: each point's solution substituted into that point's k
    held-back equations, normalized per equation scale."""
    out = []
    for sol, eqs in zip(matched_set, extra_equations):
        out.append([eq.evaluate(sol.coefficients) / eq.scale for eq in eqs])
    return np.array(out)


def interpolate_candidate(
    points: Sequence[np.ndarray],
    matched_set: Sequence[Solution],
    indicator_values: np.ndarray,
    k_extra: int,
    dimension: int,
    proximity_tol: float,
    min_support: float = 0.5,
) -> Optional[CandidateRecord]:
    """Linear interpolation of each D-subset of indicators to its zero; if at
    least half the C(k,D) zeros land within proximity_tol of P, return the
    central-50% average as an initial candidate."""
    p0 = np.asarray(points[0], dtype=float)
    deltas = [np.asarray(q, dtype=float) - p0 for q in points[1:]]
    step_mat = np.column_stack(deltas)  # D x D
    choices = list(itertools.combinations(range(k_extra), dimension))
    zeros = []
    for choice in choices:
        i0 = indicator_values[0, list(choice)]
        m = np.column_stack(
            [indicator_values[1 + d, list(choice)] - i0 for d in range(dimension)]
        )
        try:
            y = np.linalg.solve(m, -i0)
        except np.linalg.LinAlgError:
            continue
        if not np.all(np.isfinite(y)):
            continue
        zeros.append(p0 + step_mat @ y)
    if not zeros:
        return None
    zeros = np.array(zeros)
    near = zeros[np.max(np.abs(zeros - p0), axis=1) <= proximity_tol]
    if len(near) < min_support * len(choices):
        return None
    med = np.median(near, axis=0)
    order = np.argsort(np.linalg.norm(near - med, axis=1))
    central = near[order[: max(1, int(np.ceil(0.5 * len(near))))]]
    params = central.mean(axis=0)
    spread = _spread(near)
    # interpolate the free-unknown vectors to the candidate point
    x0 = matched_set[0].x
    coef = np.linalg.solve(step_mat, params - p0)
    seed = x0 + sum(c * (matched_set[1 + d].x - x0) for d, c in enumerate(coef))
    return CandidateRecord(
        params=params,
        coeff_seed=seed,
        coeff_head=matched_set[0].coeff_head(4).copy(),
        spread=spread,
        support_fraction=len(near) / len(choices),
        status="initial",
    )


def _spread(points: np.ndarray) -> float:
    if len(points) < 2:
        return 0.0
    diff = points[:, None, :] - points[None, :, :]
    return float(np.max(np.linalg.norm(diff, axis=-1)))


# ---------------------------------------------------------------------------
# zoom
# ---------------------------------------------------------------------------

def _solve_near(family, config, params, j_max, seed_x, seed_layout, rng_seed):
    """One zoom-round solve at a point, seeded from a previous solution."""
    cfg = replace(config, j_max=j_max, restarts=config.zoom_restarts, rng_seed=rng_seed)
    layout = UnknownLayout.build(family.structure, j_max, held_out=cfg.held_out)
    seed = _transfer(seed_x, seed_layout, layout)
    try:
        outcome = scan_point(params, family, cfg, extra_starts=[seed], rng_seed=rng_seed)
    except EmptyRangeError:
        return None, layout, None
    if not outcome.solutions:
        return None, layout, outcome
    head = layout.expand(seed).entries[1:5]
    best = min(
        outcome.solutions,
        key=lambda s: float(np.max(np.abs(s.coeff_head(4) - head))),
    )
    return best, layout, outcome


def _transfer(x: np.ndarray, old: UnknownLayout, new: UnknownLayout) -> np.ndarray:
    vals = {s.key(): v for s, v in zip(old.slots, x)}
    return np.array([vals.get(s.key(), 0.0) for s in new.slots])


def zoom(
    candidate: CandidateRecord,
    family: SearchFamily,
    config: SearchConfig,
    initial_step: float,
    j_start: Optional[int] = None,
) -> CandidateRecord:
    """Refine a candidate with shrinking steps and growing J until the spread
    of the C(k,D) interpolated estimates is below zoom_target."""
    d = family.dimension
    params = np.asarray(candidate.params, dtype=float)
    step = float(initial_step)
    j = int(j_start or config.j_max)
    layout0 = UnknownLayout.build(family.structure, config.j_max, held_out=config.held_out)
    seed_x, seed_layout = candidate.coeff_seed, layout0
    rng = np.random.default_rng(config.rng_seed)
    record = replace_status(candidate, "zooming")
    stale = 0
    for round_no in range(config.zoom_max_rounds):
        pts = [params] + [params + step * _unit(d, i) for i in range(d)]
        sols, layouts, extras = [], [], []
        failed = False
        for q in pts:
            sol, layout, outcome = _solve_near(
                family, config, q, j, seed_x, seed_layout, int(rng.integers(1 << 31))
            )
            if sol is None:
                failed = True
                break
            sols.append(sol)
            layouts.append(layout)
            extras.append(outcome.indicator_equations)
        if failed:
            record.status = "abandoned"
            record.history.append({"round": round_no, "J": j, "step": step, "fail": "solve"})
            return record
        ind = indicators(sols, extras)
        cand = interpolate_candidate(
            pts, sols, ind, config.k_extra, d, config.proximity_factor * step
        )
        if cand is None:
            record.status = "abandoned"
            record.history.append({"round": round_no, "J": j, "step": step, "fail": "support"})
            return record
        jump = float(np.max(np.abs(cand.params - params)))
        if jump > 6.0 * step:
            record.status = "abandoned"
            record.history.append({"round": round_no, "J": j, "step": step, "fail": "jump"})
            return record
        params = cand.params
        seed_x, seed_layout = sols[0].x, layouts[0]
        record.params = params
        record.spread = cand.spread
        record.support_fraction = cand.support_fraction
        record.coeff_head = sols[0].coeff_head(4).copy()
        record.coeff_seed = seed_x
        record.j_max = j
        record.history.append(
            {"round": round_no, "J": j, "step": step, "spread": cand.spread}
        )
        if cand.spread < config.zoom_target and round_no >= 1:
            record.status = "confirmed"
            return record
        if cand.spread < step:
            step = max(step / 4.0, min(step, 2.0 * cand.spread))
            j = min(int(np.ceil(config.zoom_j_growth * j)), config.zoom_j_cap)
        else:
            stale += 1
            if stale >= 3:
                record.status = "abandoned"
                return record
    record.status = "abandoned"
    return record


def replace_status(candidate: CandidateRecord, status: str) -> CandidateRecord:
    return CandidateRecord(
        params=np.asarray(candidate.params, dtype=float).copy(),
        coeff_seed=np.asarray(candidate.coeff_seed, dtype=float).copy(),
        coeff_head=np.asarray(candidate.coeff_head).copy(),
        spread=candidate.spread,
        support_fraction=candidate.support_fraction,
        status=status,
        j_max=candidate.j_max,
        history=list(candidate.history),
    )


def _unit(d: int, i: int) -> np.ndarray:
    e = np.zeros(d)
    e[i] = 1.0
    return e


def a32_consistency(x: np.ndarray, layout: UnknownLayout) -> dict[int, float]:
    """|a_n(held out) - a_n(prime recursion)| for each held-out index."""
    out = {}
    _, _, held = layout.unpack(np.asarray(x, dtype=float))
    for n, v in held.items():
        out[n] = float(abs(v - layout.recursed_coefficient(x, n)))
    return out


# ---------------------------------------------------------------------------
# grid driver with checkpoints
# ---------------------------------------------------------------------------

def _point_seed(base_seed: int, index: tuple[int, ...]) -> int:
    ss = np.random.SeedSequence(entropy=base_seed, spawn_key=tuple(index))
    return int(ss.generate_state(1)[0])


def _checkpoint_path(directory: str, index) -> str:
    return os.path.join(directory, "pt_" + "_".join(str(i) for i in index) + ".json")


def _save_point(path: str, params, solutions: Sequence[Solution]) -> None:
    payload = {
        "params": list(map(float, params)),
        "solutions": [
            {
                "x": [float(v) for v in s.x],
                "residual_norm": float(s.residual_norm),
                "multiplicity": int(s.multiplicity),
            }
            for s in solutions
        ],
    }
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh)
    os.replace(tmp, path)


def _load_point(path: str, layout: UnknownLayout) -> list[Solution]:
    with open(path) as fh:
        payload = json.load(fh)
    sols = []
    for rec in payload["solutions"]:
        x = np.array(rec["x"], dtype=float)
        sols.append(
            Solution(
                x=x,
                coefficients=layout.expand(x),
                residual_norm=float(rec["residual_norm"]),
                multiplicity=int(rec["multiplicity"]),
            )
        )
    return sols


@dataclass
class ScanResult:
    solutions: dict[tuple[int, ...], list[Solution]]
    skipped: list[tuple[int, ...]]
    candidates: list[CandidateRecord]


def run_scan(
    family: SearchFamily,
    grid: GridSpec,
    config: SearchConfig,
    checkpoint_dir: Optional[str] = None,
    workers: int = 1,
    zoom_candidates: bool = True,
) -> ScanResult:
    """Scan the grid (row waves; neighbor seeds from the previous row), then
    match solutions across neighbors, interpolate indicator zeros to initial
    candidates, and optionally zoom each candidate.

    Deterministic for fixed config.rng_seed, for any worker count; checkpoint
    files make interrupted scans resumable point by point.
    """
    if grid.dimension != family.dimension:
        raise ValueError("grid dimension must match the family")
    layout = UnknownLayout.build(family.structure, config.j_max, held_out=config.held_out)
    if checkpoint_dir:
        os.makedirs(checkpoint_dir, exist_ok=True)

    n_axis = grid.points_per_axis
    all_idx = sorted(grid.indices())
    rows: dict[int, list[tuple[int, ...]]] = {}
    for idx in all_idx:
        rows.setdefault(idx[0], []).append(idx)

    solutions: dict[tuple[int, ...], list[Solution]] = {}
    skipped: list[tuple[int, ...]] = []

    def neighbor_seeds(idx) -> list[np.ndarray]:
        if idx[0] == 0:
            return []
        seeds = []
        base = list(idx)
        base[0] -= 1
        for off in itertools.product((-1, 0, 1), repeat=grid.dimension - 1):
            nb = (base[0],) + tuple(
                base[1 + i] + off[i] for i in range(grid.dimension - 1)
            )
            if all(0 <= c < n_axis for c in nb) and nb in solutions:
                seeds.extend(s.x for s in solutions[nb][:3])
        return seeds

    def compute(idx):
        params = grid.point(idx)
        path = _checkpoint_path(checkpoint_dir, idx) if checkpoint_dir else None
        if path and os.path.exists(path):
            try:
                return idx, _load_point(path, layout), True
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise RuntimeError(
                    f"corrupt checkpoint {path}; refusing to overwrite"
                ) from exc
        try:
            outcome = scan_point(
                params,
                family,
                config,
                extra_starts=neighbor_seeds(idx),
                rng_seed=_point_seed(config.rng_seed, idx),
            )
            sols = outcome.solutions
        except EmptyRangeError:
            return idx, None, False
        return idx, sols, False

    # worker processes rebuild the family from its registry name
    use_pool = workers > 1 and FAMILIES.get(family.name) is family
    if use_pool:
        from concurrent.futures import ProcessPoolExecutor

    for row in sorted(rows):
        row_idx = rows[row]
        if use_pool:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_scan_task, [
                    (family.name, grid, config, idx, neighbor_seeds(idx),
                     checkpoint_dir) for idx in row_idx
                ]))
        else:
            results = [compute(idx) for idx in row_idx]
        for idx, sols, loaded in results:
            if sols is None:
                skipped.append(idx)
                continue
            solutions[idx] = sols
            if checkpoint_dir and not loaded:
                _save_point(_checkpoint_path(checkpoint_dir, idx), grid.point(idx), sols)

    candidates = _collect_candidates(family, grid, config, solutions)
    if zoom_candidates:
        candidates = [
            zoom(c, family, config, initial_step=grid.step / 4.0) for c in candidates
        ]
    return ScanResult(solutions=solutions, skipped=skipped, candidates=candidates)


def _scan_task(args):
    """Top-level worker task (picklable) for parallel row scanning."""
    name, grid, config, idx, seeds, checkpoint_dir = args
    family = FAMILIES[name]
    path = _checkpoint_path(checkpoint_dir, idx) if checkpoint_dir else None
    layout = UnknownLayout.build(family.structure, config.j_max, held_out=config.held_out)
    if path and os.path.exists(path):
        return idx, _load_point(path, layout), True
    try:
        outcome = scan_point(
            grid.point(idx), family, config,
            extra_starts=seeds, rng_seed=_point_seed(config.rng_seed, idx),
        )
        return idx, outcome.solutions, False
    except EmptyRangeError:
        return idx, None, False


def _collect_candidates(family, grid, config, solutions) -> list[CandidateRecord]:
    d = grid.dimension
    n_axis = grid.points_per_axis
    layout_size = UnknownLayout.build(
        family.structure, config.j_max, held_out=config.held_out
    ).size
    extras_cache: dict[tuple[int, ...], Optional[list]] = {}

    def extras_at(idx) -> Optional[list]:
        if idx not in extras_cache:
            q = grid.point(idx)
            try:
                sites = point_sites(family, q, config, layout_size + config.k_extra)
                extras_cache[idx] = build_difference_equations(
                    family.fe(q), family.structure, sites[-config.k_extra :],
                    config.g1, config.g2, config.j_max,
                )
            except (EmptyRangeError, TruncationError, ContourDecayError):
                extras_cache[idx] = None
        return extras_cache[idx]

    candidates: list[CandidateRecord] = []
    for idx in sorted(solutions):
        nbr_idx = []
        ok = True
        for i in range(d):
            nb = tuple(idx[j] + (1 if j == i else 0) for j in range(d))
            if any(c >= n_axis for c in nb) or nb not in solutions:
                ok = False
                break
            nbr_idx.append(nb)
        if not ok or not solutions[idx]:
            continue
        matched = match_across_points(
            solutions[idx],
            [solutions[nb] for nb in nbr_idx],
            config.match_count,
            config.match_tol,
        )
        if not matched:
            continue
        all_idx = [idx] + nbr_idx
        extras = [extras_at(i) for i in all_idx]
        if any(e is None for e in extras):
            continue
        pts = [grid.point(i) for i in all_idx]
        for mset in matched:
            ind = indicators(mset, extras)
            cand = interpolate_candidate(
                pts, mset, ind, config.k_extra, d, config.proximity_factor * grid.step
            )
            if cand is None:
                continue
            if any(
                np.max(np.abs(cand.params - c.params)) < 0.75 * grid.step
                and np.max(np.abs(cand.coeff_head - c.coeff_head)) < config.match_tol
                for c in candidates
            ):
                continue
            candidates.append(cand)
    return candidates
