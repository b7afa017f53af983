"""Euler-product reduction of the linear equations and multi-start Broyden solving."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import comb
from typing import Callable, Optional, Sequence

import numpy as np

from .afe import LinearEquation, TestFunction, build_difference_equations, equation_sites
from .model import (
    CoefficientVector,
    EulerStructure,
    FunctionalEquation,
    coefficient_bound,
    expand_coefficients,
    factorize,
    primes_up_to,
    ramanujan_prime_power_bound,
)

__all__ = [
    "Slot",
    "UnknownLayout",
    "SolveReport",
    "Solution",
    "residual",
    "make_residual_fn",
    "broyden_solve",
    "multi_start",
    "dedup",
    "growth_filter",
    "solve_coefficients",
    "SolveOutcome",
]

_factorize = lru_cache(maxsize=1 << 16)(lambda n: tuple(factorize(n)))


@dataclass(frozen=True)
class Slot:
    """One real unknown: a prime-power coefficient part, a bad-prime local
    parameter part, or a held-out Dirichlet coefficient part."""

    kind: str  # "prime" | "bad" | "held"
    index: int  # the prime (prime/bad) or the coefficient index n (held)
    power: int  # prime power m, local parameter position k, or 0 for held
    part: str  # "re" | "im"

    def key(self) -> tuple:
        return (self.kind, self.index, self.power, self.part)


@dataclass
class UnknownLayout:
    """Ordered real unknowns for the nonlinear system."""

    structure: EulerStructure
    j_max: int
    slots: list[Slot]
    held_out: tuple[int, ...]
    pinned: dict[tuple, float] = field(default_factory=dict)

    @classmethod
    def build(
        cls,
        structure: EulerStructure,
        j_max: int,
        held_out: Sequence[int] = (),
        pinned: Optional[dict[tuple, float]] = None,
    ) -> "UnknownLayout":
        parts = ("re",) if structure.self_dual else ("re", "im")
        slots: list[Slot] = []
        for p in primes_up_to(j_max):
            if p in structure.bad_primes:
                for k in range(1, structure.bad_primes[p] + 1):
                    slots.extend(Slot("bad", p, k, c) for c in parts)
            else:
                slots.extend(Slot("prime", p, 1, c) for c in parts)
                if structure.degree >= 4 and p * p <= j_max:
                    slots.extend(Slot("prime", p, 2, c) for c in parts)
        held = tuple(n for n in held_out if n <= j_max)
        for n in held:
            fac = _factorize(n)
            if len(fac) != 1 or fac[0][0] in structure.bad_primes:
                raise ValueError(f"held-out index {n} must be a good prime power")
            slots.extend(Slot("held", n, 0, c) for c in parts)
        pinned = dict(pinned or {})
        known = {s.key() for s in slots}
        for k in pinned:
            if k not in known:
                raise ValueError(f"pinned slot {k} not in layout")
        slots = [s for s in slots if s.key() not in pinned]
        return cls(structure=structure, j_max=j_max, slots=slots, held_out=held, pinned=pinned)

    @property
    def m_total(self) -> int:
        return sum(1 for s in self.slots if s.kind != "held")

    @property
    def size(self) -> int:
        return len(self.slots)

    def seed_box(self) -> np.ndarray:
        """Per-slot Ramanujan-style half-widths for random starting points."""
        d = self.structure.degree
        out = np.empty(self.size)
        for i, s in enumerate(self.slots):
            if s.kind == "prime":
                out[i] = ramanujan_prime_power_bound(d, s.power)
            elif s.kind == "held":
                out[i] = coefficient_bound(s.index, self.structure)
            else:
                deg = self.structure.bad_primes[s.index]
                out[i] = comb(s.power + deg - 1, deg - 1) + 1.0
        return out

    def unpack(self, x: np.ndarray):
        """x -> (prime_data, bad_data, held_values)."""
        if len(x) != self.size:
            raise ValueError(f"expected {self.size} unknowns, got {len(x)}")
        vals: dict[tuple, float] = dict(self.pinned)
        for s, v in zip(self.slots, x):
            vals[s.key()] = float(v)

        def get(kind, idx, power) -> complex:
            re = vals.get((kind, idx, power, "re"), 0.0)
            im = vals.get((kind, idx, power, "im"), 0.0)
            return complex(re, im)

        prime_data: dict[int, tuple] = {}
        bad_data: dict[int, tuple] = {}
        held: dict[int, complex] = {}
        need_ap2 = self.structure.degree >= 4
        for p in primes_up_to(self.j_max):
            if p in self.structure.bad_primes:
                deg = self.structure.bad_primes[p]
                bad_data[p] = tuple(get("bad", p, k) for k in range(1, deg + 1))
            else:
                ap = get("prime", p, 1)
                if need_ap2:
                    ap2 = get("prime", p, 2) if p * p <= self.j_max else ap * ap
                    prime_data[p] = (ap, ap2)
                else:
                    prime_data[p] = (ap,)
        for n in self.held_out:
            held[n] = get("held", n, 0)
        return prime_data, bad_data, held

    def expand(self, x: np.ndarray) -> CoefficientVector:
        """Coefficients a_1..a_J with held-out indices read from x directly."""
        prime_data, bad_data, held = self.unpack(x)
        vec = expand_coefficients(self.structure, prime_data, bad_data, self.j_max)
        if held:
            entries = vec.entries.copy()
            for n, v in held.items():
                entries[n - 1] = v if not self.structure.self_dual else complex(v.real)
            vec = CoefficientVector(entries=entries, self_dual=self.structure.self_dual)
        return vec

    def recursed_coefficient(self, x: np.ndarray, n: int) -> complex:
        """a_n from the prime recursion, ignoring any held-out override."""
        prime_data, bad_data, _ = self.unpack(x)
        vec = expand_coefficients(self.structure, prime_data, bad_data, self.j_max)
        return vec.a(n)


def residual(
    equations: Sequence[LinearEquation],
    layout: UnknownLayout,
    structure: EulerStructure,
    x: np.ndarray,
) -> np.ndarray:
    """Raw equation values at the expanded coefficients of x."""
    if structure is not layout.structure and structure != layout.structure:
        raise ValueError("layout/structure mismatch")
    coeffs = layout.expand(np.asarray(x, dtype=float))
    return np.array([eq.evaluate(coeffs) for eq in equations])


def make_residual_fn(
    equations: Sequence[LinearEquation],
    layout: UnknownLayout,
    normalize: bool = True,
) -> Callable[[np.ndarray], np.ndarray]:
    """Fast residual closure; equations are stacked and optionally scaled to
    unit sup-coefficient so tolerances are relative per equation."""
    j = layout.j_max
    if any(eq.j_max != j for eq in equations):
        raise ValueError("all equations must share the layout's J")
    w1 = np.stack([eq.w_b1 for eq in equations])
    w2 = np.stack([eq.w_b2 for eq in equations])
    c = np.array([eq.constant for eq in equations])
    scales = np.array([eq.scale for eq in equations]) if normalize else np.ones(len(c))
    w1 = w1 / scales[:, None]
    w2 = w2 / scales[:, None]
    c = c / scales

    def fn(x: np.ndarray) -> np.ndarray:
        coeffs = layout.expand(x)
        return c + w1 @ coeffs.b1[1:j] + w2 @ coeffs.b2[1:j]

    fn.suggested_tol = 10.0 * max(eq.truncation_bound / eq.scale for eq in equations)
    return fn


@dataclass
class SolveReport:
    solution: Optional[np.ndarray]
    iterations: int
    residual_norm: float
    converged: bool
    start_seed: int
    message: str = ""

    def __post_init__(self):
        if self.converged and self.solution is None:
            raise ValueError("converged report must carry a solution")


def _fd_jacobian(fn, x, r):
    n = len(x)
    jac = np.empty((len(r), n))
    for i in range(n):
        step = 1e-6 * max(1.0, abs(x[i]))
        xp = x.copy()
        xp[i] += step
        jac[:, i] = (fn(xp) - r) / step
    return jac


def broyden_solve(
    residual_fn: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    tol: float,
    max_iter: int = 120,
    start_seed: int = 0,
) -> SolveReport:
    """Multivariate secant (good Broyden) with damping and periodic FD restarts."""
    if tol <= 0 or max_iter < 1:
        raise ValueError("need tol > 0 and max_iter >= 1")
    x = np.asarray(x0, dtype=float).copy()
    r = residual_fn(x)
    if len(r) != len(x):
        raise ValueError(f"square system required: {len(r)} equations, {len(x)} unknowns")
    if not np.all(np.isfinite(r)):
        return SolveReport(None, 0, np.inf, False, start_seed, "non-finite residual at start")
    jac = None
    norm = float(np.max(np.abs(r)))
    stalls = 0
    for it in range(1, max_iter + 1):
        if norm < tol:
            return SolveReport(x, it - 1, norm, True, start_seed)
        if jac is None or it % 30 == 0:
            jac = _fd_jacobian(residual_fn, x, r)
        try:
            # truncated-SVD step: directions the equations cannot see (tiny
            # singular values from sub-noise-level weights) are left alone
            dx, *_ = np.linalg.lstsq(jac, -r, rcond=1e-13)
        except np.linalg.LinAlgError:
            return SolveReport(None, it, norm, False, start_seed, "singular update matrix")
        if not np.all(np.isfinite(dx)):
            return SolveReport(None, it, norm, False, start_seed, "non-finite step")
        lam = 1.0
        for _ in range(10):
            x_new = x + lam * dx
            if np.max(np.abs(x_new)) > 1e8:
                lam *= 0.5
                continue
            r_new = residual_fn(x_new)
            if np.all(np.isfinite(r_new)) and np.max(np.abs(r_new)) < norm:
                break
            lam *= 0.5
        else:
            x_new = x + lam * dx
            r_new = residual_fn(x_new)
            if not np.all(np.isfinite(r_new)):
                return SolveReport(None, it, norm, False, start_seed, "diverged")
            stalls += 1
            if stalls >= 3:
                return SolveReport(None, it, float(np.max(np.abs(r_new))), False,
                                   start_seed, "oscillation / no progress")
        dr = r_new - r
        step = x_new - x
        denom = float(step @ step)
        if denom > 0:
            jac = jac + np.outer(dr - jac @ step, step) / denom
        x, r = x_new, r_new
        norm = float(np.max(np.abs(r)))
    converged = norm < tol
    return SolveReport(x if converged else None, max_iter, norm, converged, start_seed,
                       "" if converged else "max iterations reached")


def multi_start(
    residual_fn: Callable[[np.ndarray], np.ndarray],
    layout: UnknownLayout,
    restarts: int,
    rng_seed: int = 0,
    extra_starts: Sequence[np.ndarray] = (),
    tol: Optional[float] = None,
    max_iter: int = 120,
) -> list[SolveReport]:
    """Solve repeatedly from extra_starts then random Ramanujan-box points.

    Deterministic for a given rng_seed; reports are ordered by start index.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    if tol is None:
        tol = getattr(residual_fn, "suggested_tol", 1e-10)
    rng = np.random.default_rng(rng_seed)
    box = layout.seed_box()
    reports = []
    idx = 0
    for x0 in extra_starts:
        reports.append(broyden_solve(residual_fn, np.asarray(x0, dtype=float), tol,
                                      max_iter, start_seed=idx))
        idx += 1
    for _ in range(restarts):
        x0 = rng.uniform(-box, box)
        reports.append(broyden_solve(residual_fn, x0, tol, max_iter, start_seed=idx))
        idx += 1
    return reports


@dataclass
class Solution:
    """A deduplicated solution with its expanded coefficients."""

    x: np.ndarray
    coefficients: CoefficientVector
    residual_norm: float
    multiplicity: int

    def coeff_head(self, match_count: int) -> np.ndarray:
        return self.coefficients.entries[1 : 1 + match_count]


def dedup(
    reports: Sequence[SolveReport],
    layout: UnknownLayout,
    match_count: int = 4,
    match_tol: float = 0.1,
) -> list[Solution]:
    """Cluster converged reports whose first match_count expanded coefficients
    agree within match_tol (max modulus); returns one representative each."""
    if match_count < 1:
        raise ValueError("match_count must be >= 1")
    clusters: list[Solution] = []
    for rep in reports:
        if not rep.converged:
            continue
        coeffs = layout.expand(rep.solution)
        head = coeffs.entries[1 : 1 + match_count]
        for sol in clusters:
            if np.max(np.abs(head - sol.coeff_head(match_count))) < match_tol:
                sol.multiplicity += 1
                if rep.residual_norm < sol.residual_norm:
                    sol.x = rep.solution
                    sol.coefficients = coeffs
                    sol.residual_norm = rep.residual_norm
                break
        else:
            clusters.append(Solution(x=rep.solution, coefficients=coeffs,
                                     residual_norm=rep.residual_norm, multiplicity=1))
    return clusters


def growth_filter(solution, structure: EulerStructure, j_max: int) -> bool:
    """Keep (True) unless more than half of n in (J/2, J] break the Ramanujan bound."""
    coeffs = solution.coefficients if isinstance(solution, Solution) else solution
    lo = j_max // 2
    ns = range(lo + 1, j_max + 1)
    bad = sum(1 for n in ns if abs(coeffs.a(n)) > coefficient_bound(n, structure))
    total = max(1, j_max - lo)
    return bad / total <= 0.5


@dataclass
class SolveOutcome:
    solutions: list[Solution]
    reports: list[SolveReport]
    equations: list[LinearEquation]
    indicator_equations: list[LinearEquation]
    layout: UnknownLayout
    sites: np.ndarray


def solve_coefficients(
    fe: FunctionalEquation,
    structure: EulerStructure,
    j_max: int,
    sites: np.ndarray,
    g1: TestFunction,
    g2: TestFunction,
    delta: Optional[float] = None,
    restarts: int = 50,
    rng_seed: int = 0,
    held_out: Sequence[int] = (),
    pinned: Optional[dict] = None,
    extra_starts: Sequence[np.ndarray] = (),
    extra_equations: int = 0,
    match_count: int = 4,
    match_tol: float = 0.1,
    max_iter: int = 120,
    apply_growth_filter: bool = True,
    alpha_ladder: Optional[Sequence[float]] = None,
) -> SolveOutcome:
    """Full pipeline: equations at the sites -> square system -> multi-start ->
    dedup -> growth filter.  sites must contain layout.size + extra_equations
    points; the lowest-t sites make the square system."""
    layout = UnknownLayout.build(structure, j_max, held_out=held_out, pinned=pinned)
    sites = np.sort(np.asarray(sites, dtype=float))
    need = layout.size + extra_equations
    if len(sites) < need:
        raise ValueError(f"need {need} sites (= unknowns + extras), got {len(sites)}")
    sites = sites[:need]
    eqs = build_difference_equations(fe, structure, sites, g1, g2, j_max, delta,
                                     alpha_ladder=alpha_ladder)
    square, extras = eqs[: layout.size], eqs[layout.size :]
    fn = make_residual_fn(square, layout)
    reports = multi_start(fn, layout, restarts, rng_seed, extra_starts, max_iter=max_iter)
    sols = dedup(reports, layout, match_count, match_tol)
    if apply_growth_filter:
        sols = [s for s in sols if growth_filter(s, structure, j_max)]
    return SolveOutcome(solutions=sols, reports=reports, equations=square,
                        indicator_equations=extras, layout=layout, sites=sites)
