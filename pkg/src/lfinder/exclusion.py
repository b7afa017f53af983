"""Certify non-existence regions: eliminate (b1(2), b2(2)) from a test-function
triple and interval-bound everything else with the Ramanujan bound."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .afe import TestFunction, rhs_functional
from .model import (
    EulerStructure,
    FunctionalEquation,
    coefficient_bound,
    make_fe,
    ramanujan_prime_power_bound,
)

__all__ = [
    "ExclusionRecipe",
    "ExclusionVerdict",
    "IllConditionedError",
    "DEFAULT_RECIPE_FAMILY",
    "solve_and_bound",
    "exclusion_scan",
    "sl3_fe",
    "write_region_csv",
]

_QUAD_SAFETY = 10.0


class IllConditionedError(RuntimeError):
    """Elimination matrix too close to singular; verdict withheld."""


def sl3_fe(lam1: float, lam2: float, sign: complex = 1.0, level: int = 1) -> FunctionalEquation:
    """Degree-3 Maass shape: Gamma_R shells at i*lam1, i*lam2, -i(lam1+lam2)."""
    return make_fe(level, (1j * lam1, 1j * lam2, -1j * (lam1 + lam2)), (), sign)


@dataclass(frozen=True)
class ExclusionRecipe:
    """Evaluation point, three test functions, and the truncation length.

    direct_n: the interval radius sums |coef|*bound sharply for n <= direct_n
    and majorizes n > direct_n by a geometric ratio-1/2 series started at the
    direct_n term (verified against the computed rows; falls back to the sharp
    sum over all n <= j_max if the halving is violated).
    """

    s0: complex = 0.5 + 1j
    g_triple: tuple[TestFunction, TestFunction, TestFunction] = (
        TestFunction(0.0, 0.25),
        TestFunction(0.0, 0.5),
        TestFunction(0.0, -0.25),
    )
    j_max: int = 30
    direct_n: int = 4

    def __post_init__(self):
        if len({(g.alpha, g.beta) for g in self.g_triple}) != 3:
            raise IllConditionedError("recipe test functions must be pairwise distinct")
        if self.direct_n < 3:
            raise ValueError("direct_n must be >= 3")


@dataclass
class ExclusionVerdict:
    point: tuple[float, float]
    b1_interval: tuple[float, float]
    b2_interval: tuple[float, float]
    excluded: bool
    recipe: dict = field(default_factory=dict)

    @property
    def b1_center(self) -> float:
        return 0.5 * (self.b1_interval[0] + self.b1_interval[1])

    @property
    def b2_center(self) -> float:
        return 0.5 * (self.b2_interval[0] + self.b2_interval[1])

    @property
    def b1_radius(self) -> float:
        return 0.5 * (self.b1_interval[1] - self.b1_interval[0])

    @property
    def b2_radius(self) -> float:
        return 0.5 * (self.b2_interval[1] - self.b2_interval[0])


def _quad_error_estimate(fe, g, s, j_max) -> float:
    """Sup change of constant/low-n weights under quadrature refinement."""
    from .afe import _weight_table

    coarse = _weight_table(fe, g, s, min(8, j_max))
    fine = _weight_table(fe, g, s, min(8, j_max), refine=2.0)
    c1a, c2a = coarse.coefficient_rows("re")
    c1b, c2b = fine.coefficient_rows("re")
    return float(max(np.max(np.abs(c1a - c1b)), np.max(np.abs(c2a - c2b))))


def solve_and_bound(
    fe: FunctionalEquation,
    recipe: ExclusionRecipe = ExclusionRecipe(),
    structure: Optional[EulerStructure] = None,
    point: Optional[tuple[float, float]] = None,
) -> ExclusionVerdict:
    """Eliminate (b1(2), b2(2)) exactly; every other unknown contributes its
    Ramanujan bound to the interval radius, plus truncation and a 10x-safety
    quadrature term, so the intervals are sound outer enclosures under the
    stated error model."""
    if structure is None:
        structure = EulerStructure(degree=fe.degree, level=1)
    g1, g2, g3 = recipe.g_triple
    s0 = complex(recipe.s0)
    j = recipe.j_max
    r1 = rhs_functional(fe, g1, s0, j, structure)
    r2 = rhs_functional(fe, g2, s0, j, structure)
    r3 = rhs_functional(fe, g3, s0, j, structure)

    # two independent Z-equalities
    rows = []
    for ra, rb in ((r1, r2), (r1, r3)):
        rows.append(
            dict(
                const=rb.constant - ra.constant,
                w1=rb.w_b1 - ra.w_b1,
                w2=rb.w_b2 - ra.w_b2,
                tb=ra.truncation_bound + rb.truncation_bound,
            )
        )
    a_mat = np.array(
        [[rows[0]["w1"][0], rows[0]["w2"][0]], [rows[1]["w1"][0], rows[1]["w2"][0]]]
    )
    cond = np.linalg.cond(a_mat)
    if not np.isfinite(cond) or cond > 1e6:
        raise IllConditionedError(f"elimination condition number {cond:.2e} > 1e6")
    a_inv = np.linalg.inv(a_mat)
    c = np.array([rows[0]["const"], rows[1]["const"]])
    center = -a_inv @ c

    # per-n radius contributions of the eliminated expression
    contribs = []
    for i, n in enumerate(range(3, j + 1), start=1):
        bnd = coefficient_bound(int(n), structure)
        c = np.zeros(2)
        for w_key in ("w1", "w2"):
            v = a_inv @ np.array([rows[0][w_key][i], rows[1][w_key][i]])
            c += np.abs(v) * bnd
        contribs.append(c)
    contribs = np.array(contribs)  # rows n = 3..j

    n_direct = min(recipe.direct_n, j)
    head = contribs[: n_direct - 2]
    rest = contribs[n_direct - 2 :]
    anchor = contribs[n_direct - 3] if n_direct >= 3 else None
    halving = bool(
        np.all(rest <= anchor[None, :] * 0.5 ** np.arange(1, len(rest) + 1)[:, None] + 1e-300)
    )
    if halving:
        # tail sum_{k>=1} anchor * (1/2)^k = anchor
        radius = head.sum(axis=0) + anchor
    else:
        radius = contribs.sum(axis=0) + contribs[-1]
    tb = np.array([rows[0]["tb"], rows[1]["tb"]])
    radius += np.abs(a_inv) @ tb
    qe = np.array(
        [
            _quad_error_estimate(fe, g1, s0, j)
            + _quad_error_estimate(fe, g2, s0, j),
            _quad_error_estimate(fe, g1, s0, j)
            + _quad_error_estimate(fe, g3, s0, j),
        ]
    )
    radius += _QUAD_SAFETY * (np.abs(a_inv) @ qe)

    b1_iv = (float(center[0] - radius[0]), float(center[0] + radius[0]))
    b2_iv = (float(center[1] - radius[1]), float(center[1] + radius[1]))
    bound_a2 = float(ramanujan_prime_power_bound(structure.degree, 1))
    excluded = b1_iv[0] > bound_a2 or b1_iv[1] < -bound_a2 or b2_iv[0] > bound_a2 or b2_iv[1] < -bound_a2
    if point is None:
        lams = np.sort(fe.lams.imag / fe.kappas)[::-1]
        point = (float(lams[0]), float(lams[1])) if len(lams) >= 2 else (float(lams[0]), 0.0)
    return ExclusionVerdict(
        point=point,
        b1_interval=b1_iv,
        b2_interval=b2_iv,
        excluded=bool(excluded),
        recipe={
            "s0": s0,
            "g_triple": [(g.alpha, g.beta) for g in recipe.g_triple],
            "J": j,
            "condition_number": float(cond),
        },
    )


# the paper's recipe first; wider-beta triples catch points where the default
# intervals straddle the Ramanujan box
DEFAULT_RECIPE_FAMILY: tuple[ExclusionRecipe, ...] = (
    ExclusionRecipe(),
    ExclusionRecipe(g_triple=(TestFunction(0.0, 0.8), TestFunction(0.0, 1.5),
                              TestFunction(0.0, -0.8))),
    ExclusionRecipe(g_triple=(TestFunction(0.0, 0.6), TestFunction(0.0, 1.2),
                              TestFunction(0.0, -0.6))),
)


def exclusion_scan(
    box: tuple[tuple[float, float], tuple[float, float]],
    step: float,
    recipe_family: Sequence[ExclusionRecipe] = DEFAULT_RECIPE_FAMILY,
    fe_template: Callable[[float, float], FunctionalEquation] = sl3_fe,
    structure: Optional[EulerStructure] = None,
) -> dict[tuple[int, int], ExclusionVerdict]:
    """Per-grid-point verdicts over a (lambda1, lambda2) rectangle.

    A point is excluded if any recipe in the family excludes it.  Recipes that
    fail (ill-conditioned) are skipped; a point with no usable recipe is
    reported as not excluded.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    (x0, x1), (y0, y1) = box
    xs = np.arange(x0, x1 + 0.5 * step, step) if x1 >= x0 else np.array([])
    ys = np.arange(y0, y1 + 0.5 * step, step) if y1 >= y0 else np.array([])
    out: dict[tuple[int, int], ExclusionVerdict] = {}
    for i, lx in enumerate(xs):
        for k, ly in enumerate(ys):
            fe = fe_template(float(lx), float(ly))
            verdict = None
            for recipe in recipe_family:
                try:
                    v = solve_and_bound(fe, recipe, structure, point=(float(lx), float(ly)))
                except IllConditionedError:
                    continue
                if verdict is None or (v.excluded and not verdict.excluded):
                    verdict = v
                if verdict.excluded:
                    break
            if verdict is None:
                verdict = ExclusionVerdict(
                    point=(float(lx), float(ly)),
                    b1_interval=(-np.inf, np.inf),
                    b2_interval=(-np.inf, np.inf),
                    excluded=False,
                    recipe={"withheld": True},
                )
            out[(i, k)] = verdict
    return out


def write_region_csv(path, region: dict[tuple[int, int], ExclusionVerdict]) -> None:
    """Grid CSV: lambda1, lambda2, excluded, interval bounds (stable order)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda1", "lambda2", "excluded", "b1_lo", "b1_hi", "b2_lo", "b2_hi"])
        for key in sorted(region):
            v = region[key]
            w.writerow(
                [f"{v.point[0]:.8f}", f"{v.point[1]:.8f}", int(v.excluded)]
                + [f"{x:.6e}" for x in (*v.b1_interval, *v.b2_interval)]
            )
