"""Smoothed approximate functional equation as linear functionals in the a_n.

Everything here works with the Z-normalized form: the completed L-function is
divided by (sign*Q)^(1/2) and by |Gamma(kappa_j s + lambda_j)| at the
evaluation point, so equations built on the critical line have real
coefficients for alpha = 0 test functions.  That normalization is folded into
the contour integrand in log space, which keeps float64 viable even when the
raw weights span tens of orders of magnitude.

Truncation targets (delta) are interpreted relative to an equation's largest
coefficient; LinearEquation stores the raw bound together with that scale.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import loggamma, zeta

from .gammaquad import ContourDecayError
from .model import CoefficientVector, EulerStructure, FunctionalEquation, coefficient_bound

__all__ = [
    "TestFunction",
    "LinearEquation",
    "AdmissibilityError",
    "TruncationError",
    "InsufficientCoefficientsError",
    "f1",
    "f2",
    "rhs_functional",
    "difference_equation",
    "auto_difference_equation",
    "DEFAULT_ALPHA_LADDER",
    "build_difference_equations",
    "equation_sites",
    "admissible_t_range",
    "z_eval",
]

_EPS = np.finfo(float).eps
_DECAY_MARGIN = 50.0  # nats of decay demanded past the outermost gamma center


class AdmissibilityError(ValueError):
    """Test function not allowed in the approximate functional equation."""


class TruncationError(RuntimeError):
    """Requested truncation precision is unreachable at this J / g / s."""


class InsufficientCoefficientsError(ValueError):
    """Coefficient vector too short for the requested evaluation."""


@dataclass(frozen=True)
class TestFunction:
    """g(s) = exp(-i*beta*s + alpha*s^2)."""

    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if self.alpha < 0:
            raise AdmissibilityError("alpha must be >= 0")

    def check_admissible(self, fe: FunctionalEquation) -> None:
        if self.alpha == 0.0 and abs(self.beta) >= (np.pi / 2) * fe.kappa_sum:
            raise AdmissibilityError(
                f"alpha=0 requires |beta| < (pi/2)*sum kappa = "
                f"{(np.pi / 2) * fe.kappa_sum:.4f}, got {self.beta}"
            )


@dataclass
class LinearEquation:
    """Affine relation  constant + sum_n w_b1(n) b1(n) + w_b2(n) b2(n)  = 0-ish.

    Weights are indexed by ns (2..J).  truncation_bound is a raw-unit bound on
    the dropped tail plus float64 quadrature noise, sound under the Ramanujan
    bound; scale is the sup of |constant| and the weight magnitudes, the unit
    in which relative precision targets are measured.
    """

    constant: float
    ns: np.ndarray
    w_b1: np.ndarray
    w_b2: np.ndarray
    truncation_bound: float
    scale: float
    origin: dict = field(default_factory=dict)

    @property
    def j_max(self) -> int:
        return int(self.ns[-1]) if len(self.ns) else 1

    @property
    def coeffs(self) -> dict[tuple[int, str], float]:
        out = {}
        for i, n in enumerate(self.ns):
            out[(int(n), "re")] = float(self.w_b1[i])
            out[(int(n), "im")] = float(self.w_b2[i])
        return out

    def coeff(self, n: int, part: str) -> float:
        i = int(n) - 2
        return float(self.w_b1[i] if part == "re" else self.w_b2[i])

    def evaluate(self, coeffs: CoefficientVector) -> float:
        j = self.j_max
        if len(coeffs) < j:
            raise InsufficientCoefficientsError(f"need {j} coefficients, have {len(coeffs)}")
        b1 = coeffs.b1[1:j]
        b2 = coeffs.b2[1:j]
        return float(self.constant + self.w_b1 @ b1 + self.w_b2 @ b2)

    def __neg__(self) -> "LinearEquation":
        return LinearEquation(
            constant=-self.constant,
            ns=self.ns,
            w_b1=-self.w_b1,
            w_b2=-self.w_b2,
            truncation_bound=self.truncation_bound,
            scale=self.scale,
            origin=dict(self.origin, negated=True),
        )


# ---------------------------------------------------------------------------
# contour assembly
# ---------------------------------------------------------------------------

def _abscissa(fe: FunctionalEquation, s: complex) -> float:
    # floor of 1.0 keeps sigma = 1/2 + nu summable in the noise Euler bound
    shift = np.min(np.real(fe.lams / fe.kappas + s))
    return max(1.0, 1.0 - shift + 0.5)


def _step(fe: FunctionalEquation) -> float:
    return np.pi / (np.log(1e17) * max(1.0, fe.kappa_sum))


def _decay_rate(fe: FunctionalEquation, g: TestFunction) -> float:
    rate = (np.pi / 2) * fe.kappa_sum - abs(g.beta)
    if rate <= 0 and g.alpha == 0:
        raise AdmissibilityError("no contour decay: |beta| >= (pi/2)*sum kappa")
    return rate


def _half_width(fe: FunctionalEquation, g: TestFunction, t: float, nu: float) -> float:
    """Truncation height: past every gamma center, with enough margin that the
    exponential decay beats the |Gamma| polynomial growth (exponent ~ x_j-1/2
    per shell) by _DECAY_MARGIN nats."""
    centers = -t - np.imag(fe.lams) / fe.kappas
    span = float(np.max(np.abs(centers)))
    rate = _decay_rate(fe, g)
    poly = float(np.sum(np.maximum(fe.kappas * (nu + 0.5) + np.real(fe.lams) - 0.5, 0.0)))
    t_q = span + _DECAY_MARGIN / max(rate, 0.1)
    for _ in range(4):  # fixed point for the polynomial correction
        nats = _DECAY_MARGIN + poly * np.log(2.0 + abs(t) + t_q)
        if g.alpha > 0:
            r = max(rate, 0.0)
            margin = (-r + np.sqrt(r * r + 4 * g.alpha * nats)) / (2 * g.alpha)
        else:
            margin = nats / rate
        t_q = span + margin
    return float(t_q)


@dataclass
class _WeightTable:
    """Z-normalized AFE weights W1, W2 for n = 1..n_max at s = 1/2 + it."""

    s: complex
    n_max: int
    nu: float
    half_width: float
    w1: np.ndarray
    w2: np.ndarray
    absmass: float  # (h/2pi) * sum |E1| + |E2|; roundoff scale of the quadrature

    def coefficient_rows(self, part: str) -> tuple[np.ndarray, np.ndarray]:
        cb1 = self.w1 + self.w2
        cb2 = 1j * (self.w1 - self.w2)
        if part == "re":
            return cb1.real, cb2.real
        return cb1.imag, cb2.imag

    edge_mass: float = 0.0  # contour-truncation residue, same units as absmass

    def noise_amplitude(self, n: np.ndarray) -> np.ndarray:
        """Error floor of W(n): float64 roundoff plus contour truncation.

        The phase ln(n)*(t+y) of n^-(s+z) is computed in float64, so each term
        carries a relative error ~ eps * |phase|, which dominates plain
        summation roundoff once t + half_width is large.
        """
        n = np.asarray(n, dtype=float)
        phase = np.log(np.maximum(n, 2.0)) * (abs(self.s.imag) + self.half_width)
        round_off = _EPS * self.absmass * (4.0 + phase)
        return (round_off + self.edge_mass) * n ** (-0.5 - self.nu)


def _weight_table(
    fe: FunctionalEquation,
    g: TestFunction,
    s: complex,
    n_max: int,
    refine: float = 1.0,
) -> _WeightTable:
    """Assemble the normalized weights by trapezoid quadrature on Re z = nu.

    refine > 1 halves the step and widens the contour proportionally (used for
    quadrature-error estimates).
    """
    g.check_admissible(fe)
    if abs(s.real - 0.5) > 1e-12:
        raise ValueError("weight tables are built on the critical line only")
    kap = fe.kappas
    lam = fe.lams
    q = fe.scale_q
    nu = _abscissa(fe, s)
    h = _step(fe) / refine
    t_q = _half_width(fe, g, s.imag, nu) * (1.0 if refine == 1.0 else 1.25)
    logeps = 1j * np.angle(complex(fe.sign_generic))
    lognorm = -0.5 * (np.log(q) + logeps) - np.sum(np.real(loggamma(kap * s + lam)))
    a, b = g.alpha, g.beta

    def assemble(width):
        k = int(np.ceil(width / h))
        if k > 4_000_000:
            raise TruncationError(f"contour needs {2 * k + 1} nodes; parameters off-scale")
        z = nu + 1j * h * np.arange(-k, k + 1)
        lg1 = np.zeros_like(z)
        lg2 = np.zeros_like(z)
        for kj, lj in zip(kap, lam):
            lg1 += loggamma(kj * (z + s) + lj)
            lg2 += loggamma(kj * (z + 1 - s) + np.conj(lj))
        log_e1 = (lg1 + (-1j * b * z + a * (z * z + 2 * s * z))
                  + (s + z) * np.log(q) - np.log(z) + lognorm)
        log_e2 = (lg2 + (1j * b * z + a * (z * z - 2 * s * z))
                  + (1 - s + z) * np.log(q) - np.log(z) + lognorm + logeps)
        return z, np.exp(log_e1), np.exp(log_e2)

    z, e1, e2 = assemble(t_q)
    if not (np.all(np.isfinite(e1)) and np.all(np.isfinite(e2))):
        raise TruncationError("normalized integrand overflows float64 (|t| too large)")
    peak = max(np.abs(e1).max(), np.abs(e2).max())
    for _ in range(3):
        edge_mag = max(abs(e1[0]), abs(e1[-1]), abs(e2[0]), abs(e2[-1]))
        if peak == 0 or edge_mag <= 1e-20 * peak:
            break
        t_q *= 1.5
        z, e1, e2 = assemble(t_q)
        peak = max(np.abs(e1).max(), np.abs(e2).max())
    else:
        edge_mag = max(abs(e1[0]), abs(e1[-1]), abs(e2[0]), abs(e2[-1]))
        if edge_mag > 1e-8 * peak:
            raise ContourDecayError("AFE contour integrand not decayed at truncation ends")

    rate = max(_decay_rate(fe, g), 0.05)
    edge_mag = max(abs(e1[0]), abs(e1[-1]), abs(e2[0]), abs(e2[-1]))
    edge_mass = float(edge_mag / (2 * np.pi * rate))

    n = np.arange(1, n_max + 1)
    logn = np.log(n)
    w1 = np.exp(-np.outer(logn, s + z)) @ e1 * (h / (2 * np.pi))
    w2 = np.exp(-np.outer(logn, 1 - s + z)) @ e2 * (h / (2 * np.pi))
    absmass = float((np.abs(e1).sum() + np.abs(e2).sum()) * h / (2 * np.pi))
    return _WeightTable(s=s, n_max=n_max, nu=nu, half_width=t_q,
                        w1=w1, w2=w2, absmass=absmass, edge_mass=edge_mass)


# ---------------------------------------------------------------------------
# spec surface: raw Mellin integrals
# ---------------------------------------------------------------------------

def _raw_mellin(fe, g, s_eff, n, conjugate: bool, log_g_of):
    g.check_admissible(fe)
    nu = _abscissa(fe, s_eff)
    h = _step(fe)
    t_q = _half_width(fe, g, s_eff.imag if not conjugate else -np.imag(s_eff), nu)
    k = int(np.ceil(t_q / h))
    z = nu + 1j * h * np.arange(-k, k + 1)
    lg = np.zeros_like(z)
    lam = np.conj(fe.lams) if conjugate else fe.lams
    for kj, lj in zip(fe.kappas, lam):
        lg += loggamma(kj * (z + s_eff) + lj)
    vals = np.exp(lg + log_g_of(z) - np.log(z) + z * np.log(fe.scale_q / n))
    edge = max(3, len(z) // 100)
    mags = np.abs(vals)
    if mags.max() > 0 and max(mags[:edge].max(), mags[-edge:].max()) > 1e-3 * mags.max():
        raise ContourDecayError("Mellin integrand not decayed at truncation ends")
    return complex(vals.sum() * h / (2 * np.pi))


def _log_g(g: TestFunction, u):
    return -1j * g.beta * u + g.alpha * u * u


def f1(fe: FunctionalEquation, g: TestFunction, s: complex, n: int) -> complex:
    """f_1(s,n): (1/2pi i) int prod Gamma(kappa(z+s)+lambda) g(s+z) (Q/n)^z dz/z."""
    s = complex(s)
    return _raw_mellin(fe, g, s, n, conjugate=False, log_g_of=lambda z: _log_g(g, s + z))


def f2(fe: FunctionalEquation, g: TestFunction, s: complex, n: int) -> complex:
    """f_2(s,n) with conjugated shifts and g evaluated across the mirror point.

    `s` is f_2's own argument; in the functional-equation identity it is
    called with s -> 1 - s0, so g is sampled at s0 - z = (1 - s) - z.
    """
    s = complex(s)
    return _raw_mellin(fe, g, s, n, conjugate=True, log_g_of=lambda z: _log_g(g, (1 - s) - z))


# ---------------------------------------------------------------------------
# equations
# ---------------------------------------------------------------------------

def _ramanujan_bounds(structure: EulerStructure, n_max: int) -> np.ndarray:
    return np.array([coefficient_bound(n, structure) for n in range(1, n_max + 1)])


def _tail_parts(
    table: _WeightTable,
    structure: EulerStructure,
    j_max: int,
    part: str,
) -> tuple[float, float, float]:
    """(tail bound, modeled noise bound, scale) for the equation cut at j_max.

    The tail bound covers the dropped n > j_max terms under the Ramanujan
    bound; the noise bound covers float64 roundoff and contour truncation in
    the kept terms.  Both are raw (Z-function) units.
    """
    c1, c2 = table.coefficient_rows(part)
    n_all = np.arange(1, table.n_max + 1)
    bnd = _ramanujan_bounds(structure, table.n_max)
    w_amp = np.abs(c1) + np.abs(c2)
    scale = float(np.max(np.abs(np.concatenate([c1[:j_max], c2[:j_max]]))))

    direct = float((w_amp * bnd)[j_max:].sum())
    noise_amp = table.noise_amplitude(n_all)

    # geometric envelope for n > n_max: fit the smooth weight decay on entries
    # well above the noise plateau (which decays only like n^-(1/2+nu) and
    # would fake a ratio near 1), then majorize the jagged multiplicative
    # bound factor over the extrapolation range separately
    lo = table.n_max // 2
    sig = np.nonzero(w_amp[lo:] > 30 * noise_amp[lo:])[0]
    extra = 0.0
    if len(sig) >= 4:
        idx = sig + lo
        slope, intercept = np.polyfit(n_all[idx], np.log(w_amp[idx]), 1)
        r = float(np.exp(slope))
        if r >= 0.9:
            raise TruncationError(
                f"weight envelope ratio {r:.3f} >= 0.9; tail not summable at J={j_max}"
            )
        w_last = float(np.exp(intercept + slope * table.n_max))
        bnd_cap = 4.0 * float(bnd[lo:].max())
        extra = w_last * r / (1.0 - r) * bnd_cap

    # worst-case impact of the per-weight error floor over all n, with a
    # zeta-series remainder past n_max
    sigma = 0.5 + table.nu
    noise_total = float((noise_amp * np.maximum(bnd, 1.0)).sum())
    noise_total += 2.0 * float(noise_amp[-1]) * float(bnd[lo:].max()) * table.n_max**0.5
    return direct + extra, noise_total, scale


def _measured_noise(
    fe: FunctionalEquation,
    g: TestFunction,
    table: _WeightTable,
    structure: EulerStructure,
    j_max: int,
    part: str,
    safety: float = 3.0,
) -> float:
    """Replace the modeled roundoff bound by a refinement measurement: rebuild
    at half step / wider contour and sum the weight differences against the
    Ramanujan bound (3x safety on the kept n <= J block)."""
    fine = _weight_table(fe, g, table.s, table.n_max, refine=2.0)
    c1, c2 = table.coefficient_rows(part)
    f1_, f2_ = fine.coefficient_rows(part)
    diff = np.abs(c1 - f1_) + np.abs(c2 - f2_)
    bnd = np.maximum(_ramanujan_bounds(structure, table.n_max), 1.0)
    kept = float((diff * bnd)[:j_max].sum())
    tail = float((diff * bnd)[j_max:].sum())
    return safety * kept + tail + 4.0 * _EPS * table.absmass


def _default_structure(fe: FunctionalEquation) -> EulerStructure:
    return EulerStructure(degree=fe.degree, level=fe.level,
                          bad_primes={p: fe.degree - 1 for p, _ in _lv(fe)})


def rhs_functional(
    fe: FunctionalEquation,
    g: TestFunction,
    s: complex,
    j_max: int,
    structure: Optional[EulerStructure] = None,
    delta: Optional[float] = None,
    part: str = "re",
) -> LinearEquation:
    """g(s)^-1 RHS(s, ..., g) as an affine expression in b1(n), b2(n), n <= J.

    truncation_bound = Ramanujan tail bound + numerical-error bound.  The
    error bound defaults to a conservative roundoff model; when that model
    alone would break a requested delta, the real error is measured by
    quadrature refinement (10x safety) instead.  part="im" is only
    informative for alpha > 0; with alpha = 0 it vanishes identically.
    """
    if structure is None:
        structure = _default_structure(fe)
    table = _weight_table(fe, g, complex(s), 4 * j_max)
    c1, c2 = table.coefficient_rows(part)
    tail, noise, scale = _tail_parts(table, structure, j_max, part)
    if delta is not None and tail + noise > delta * scale and tail <= delta * scale:
        noise = min(noise, _measured_noise(fe, g, table, structure, j_max, part))
    bound = tail + noise
    eq = LinearEquation(
        constant=float(c1[0]),
        ns=np.arange(2, j_max + 1),
        w_b1=c1[1:j_max].copy(),
        w_b2=c2[1:j_max].copy(),
        truncation_bound=bound,
        scale=scale,
        origin={"s": complex(s), "g": (g.alpha, g.beta), "J": j_max, "part": part,
                "tail_bound": tail, "noise_bound": noise},
    )
    if delta is not None and bound > delta * scale:
        raise TruncationError(
            f"truncation bound {bound:.2e} exceeds delta*scale = {delta * scale:.2e}; "
            "increase J or move s/g"
        )
    return eq


def _lv(fe: FunctionalEquation):
    from .model import factorize

    return factorize(fe.level) if fe.level > 1 else []


def difference_equation(
    fe: FunctionalEquation,
    s: complex,
    g1: TestFunction,
    g2: TestFunction,
    j_max: int,
    structure: Optional[EulerStructure] = None,
    delta: Optional[float] = None,
    part: str = "re",
) -> LinearEquation:
    """rhs_functional(g2) - rhs_functional(g1): a constraint on the a_n."""
    if g1 == g2:
        base = rhs_functional(fe, g1, s, j_max, structure, None, part)
        return LinearEquation(
            constant=0.0,
            ns=base.ns,
            w_b1=np.zeros_like(base.w_b1),
            w_b2=np.zeros_like(base.w_b2),
            truncation_bound=0.0,
            scale=1.0,
            origin={"s": complex(s), "g1": (g1.alpha, g1.beta), "g2": (g2.alpha, g2.beta),
                    "J": j_max, "part": part},
        )
    if structure is None:
        structure = _default_structure(fe)
    s = complex(s)
    tab_a = _weight_table(fe, g1, s, 4 * j_max)
    tab_b = _weight_table(fe, g2, s, 4 * j_max)
    ca1, ca2 = tab_a.coefficient_rows(part)
    cb1, cb2 = tab_b.coefficient_rows(part)
    tail_a, noise_a, _ = _tail_parts(tab_a, structure, j_max, part)
    tail_b, noise_b, _ = _tail_parts(tab_b, structure, j_max, part)
    w_b1 = cb1[1:j_max] - ca1[1:j_max]
    w_b2 = cb2[1:j_max] - ca2[1:j_max]
    constant = float(cb1[0] - ca1[0])
    scale = float(max(abs(constant), np.max(np.abs(w_b1)), np.max(np.abs(w_b2))))
    tail = tail_a + tail_b
    noise = noise_a + noise_b
    if delta is not None and tail + noise > delta * scale and tail <= delta * scale:
        # the conservative roundoff model is the blocker; measure instead
        noise = min(
            noise,
            _measured_noise(fe, g1, tab_a, structure, j_max, part)
            + _measured_noise(fe, g2, tab_b, structure, j_max, part),
        )
    bound = tail + noise
    eq = LinearEquation(
        constant=constant,
        ns=np.arange(2, j_max + 1),
        w_b1=w_b1.copy(),
        w_b2=w_b2.copy(),
        truncation_bound=bound,
        scale=scale,
        origin={"s": s, "g1": (g1.alpha, g1.beta), "g2": (g2.alpha, g2.beta),
                "J": j_max, "part": part, "tail_bound": tail, "noise_bound": noise},
    )
    if delta is not None and bound > delta * scale:
        raise TruncationError(
            f"difference truncation {bound:.2e} exceeds delta*scale {delta * scale:.2e}"
        )
    return eq


DEFAULT_ALPHA_LADDER: tuple[float, ...] = (
    0.08, 0.06, 0.05, 0.045, 0.04, 0.035, 0.03, 0.02, 0.01, 0.005, 0.0,
)


def auto_difference_equation(
    fe: FunctionalEquation,
    s: complex,
    beta1: float,
    beta2: float,
    j_max: int,
    structure: Optional[EulerStructure] = None,
    delta: float = 0.5e-4,
    alpha_ladder: Sequence[float] = DEFAULT_ALPHA_LADDER,
) -> LinearEquation:
    """Difference equation with the largest ladder alpha that meets delta.

    Larger alpha widens the n-range the equation is sensitive to (the
    Gaussian factor slows coefficient decay), so taking the largest
    delta-compatible alpha keeps the convergence rate comparable across
    sites while making high-n unknowns determinable.
    """
    last_exc: Exception | None = None
    for alpha in sorted(set(alpha_ladder), reverse=True):
        try:
            return difference_equation(
                fe, s, TestFunction(alpha, beta1), TestFunction(alpha, beta2),
                j_max, structure, delta,
            )
        except (TruncationError, ContourDecayError, AdmissibilityError) as exc:
            last_exc = exc
    raise TruncationError(
        f"no ladder alpha meets delta={delta} at s={s} with J={j_max}: {last_exc}"
    )


def admissible_t_range(
    fe: FunctionalEquation,
    g: TestFunction,
    j_max: int,
    delta: float,
    g2: Optional[TestFunction] = None,
    structure: Optional[EulerStructure] = None,
    resolution: float = 1.0,
    t_cap: float = 300.0,
) -> tuple[float, float]:
    """Largest contiguous t-interval where equations at 1/2+it meet delta.

    With g2 the criterion is the difference equation's relative bound, else the
    single-g functional's.  Returns (t1, t2); (0.0, 0.0)-width empty intervals
    are possible.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")

    def ok(t: float) -> bool:
        try:
            if g2 is None:
                eq = rhs_functional(fe, g, 0.5 + 1j * t, j_max, structure)
            else:
                eq = difference_equation(fe, 0.5 + 1j * t, g, g2, j_max, structure)
        except (TruncationError, ContourDecayError):
            return False
        return eq.truncation_bound <= delta * eq.scale

    if not ok(0.0):
        return (0.0, 0.0)
    hi = 0.0
    misses = 0
    t = resolution
    while t <= t_cap and misses < 2:
        if ok(t):
            hi = t
            misses = 0
        else:
            misses += 1
        t += resolution
    lo = 0.0
    misses = 0
    t = -resolution
    while t >= -t_cap and misses < 2:
        if ok(t):
            lo = t
            misses = 0
        else:
            misses += 1
        t -= resolution
    return (lo, hi)


def equation_sites(t_range: tuple[float, float], count: int, inset: float = 0.05) -> np.ndarray:
    """count equally spaced t values inside the range, inset 5% from each end."""
    t1, t2 = t_range
    width = t2 - t1
    if width <= 0:
        raise ValueError("empty admissible range")
    a = t1 + inset * width
    b = t2 - inset * width
    return np.linspace(a, b, count)


def build_difference_equations(
    fe: FunctionalEquation,
    structure: EulerStructure,
    sites,
    g1: TestFunction,
    g2: TestFunction,
    j_max: int,
    delta: Optional[float] = None,
    alpha_ladder: Optional[Sequence[float]] = None,
) -> list[LinearEquation]:
    """One difference equation per site.  With alpha_ladder set, the betas of
    g1/g2 are kept and alpha is chosen per site (largest that meets delta)."""
    if alpha_ladder is not None:
        if delta is None:
            raise ValueError("alpha_ladder needs a delta target")
        return [
            auto_difference_equation(fe, 0.5 + 1j * float(t), g1.beta, g2.beta,
                                     j_max, structure, delta, alpha_ladder)
            for t in sites
        ]
    return [
        difference_equation(fe, 0.5 + 1j * float(t), g1, g2, j_max, structure, delta)
        for t in sites
    ]


def z_eval(
    fe: FunctionalEquation,
    coeffs: CoefficientVector,
    t: float,
    g: Optional[TestFunction] = None,
    structure: Optional[EulerStructure] = None,
) -> float:
    """Z(1/2 + it) from a finite coefficient vector, with realness self-check."""
    if g is None:
        g = TestFunction(0.0, 0.25)
    if structure is None:
        structure = EulerStructure(degree=fe.degree, level=1)
    j = len(coeffs)
    s = 0.5 + 1j * t
    table = _weight_table(fe, g, s, 4 * j)
    tail, noise, scale = _tail_parts(table, structure, j, "re")
    if tail + noise > 1e-8 * scale and tail <= 1e-8 * scale:
        noise = min(noise, _measured_noise(fe, g, table, structure, j, "re"))
    bound = tail + noise
    if bound > 1e-8 * scale:
        raise InsufficientCoefficientsError(
            f"relative truncation {bound / scale:.2e} > 1e-8; need more coefficients"
        )
    a = coeffs.entries
    val = complex(table.w1[:j] @ a + table.w2[:j] @ np.conj(a))
    # g(s)^-1 RHS is Z(s) itself, so the imaginary residue is pure error
    if abs(val.imag) > max(bound, 1e-10 * max(1.0, abs(val.real)), 1e-10 * scale):
        raise ArithmeticError(
            f"Z imaginary residue {val.imag:.2e} exceeds error budget {bound:.2e}"
        )
    return float(val.real)
