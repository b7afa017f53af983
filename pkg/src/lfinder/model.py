"""Functional-equation shapes, Euler structures, and coefficient expansion."""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import Sequence

import numpy as np

from .gammaquad import gamma_c, gamma_r, log_gamma

__all__ = [
    "FunctionalEquation",
    "EulerStructure",
    "LocalFactor",
    "CoefficientVector",
    "make_fe",
    "make_generic_fe",
    "ramanujan_prime_power_bound",
    "coefficient_bound",
    "local_factor_from_free_params",
    "bad_local_factor",
    "expand_coefficients",
    "check_unit_circle_roots",
    "primes_up_to",
    "factorize",
]

_UNIMODULAR_TOL = 1e-15


def primes_up_to(n: int) -> list[int]:
    if n < 2:
        return []
    sieve = np.ones(n + 1, dtype=bool)
    sieve[:2] = False
    for p in range(2, int(n**0.5) + 1):
        if sieve[p]:
            sieve[p * p :: p] = False
    return [int(p) for p in np.nonzero(sieve)[0]]


def factorize(n: int) -> list[tuple[int, int]]:
    """Prime factorization [(p, m), ...] of n >= 1."""
    out = []
    m = n
    p = 2
    while p * p <= m:
        if m % p == 0:
            e = 0
            while m % p == 0:
                m //= p
                e += 1
            out.append((p, e))
        p += 1 if p == 2 else 2
    if m > 1:
        out.append((m, 1))
    return out


@dataclass(frozen=True)
class FunctionalEquation:
    """Analytic shape of a completed L-function.

    Arithmetic form:  N^(s/2) prod Gamma_R(s+mu_j) prod Gamma_C(s+nu_j) L(s),
    with Lambda(s) = sign * conj(Lambda)(1-s).

    Generic form:  C * Q^s prod Gamma(kappa_j s + lambda_j) L(s).  The constant
    C is carried separately; the AFE engine works with Lambda/C, whose sign is
    `sign_generic` (= sign * conj(C)/C, unimodular).
    """

    level: int
    real_shells: tuple[complex, ...]
    complex_shells: tuple[complex, ...]
    sign: complex
    kappas: np.ndarray = field(repr=False)
    lams: np.ndarray = field(repr=False)
    scale_q: float
    constant: complex
    sign_generic: complex

    @property
    def degree(self) -> int:
        return len(self.real_shells) + 2 * len(self.complex_shells)

    @property
    def kappa_sum(self) -> float:
        return float(self.kappas.sum())

    def arithmetic_completed_log(self, s: complex) -> complex:
        """log of N^(s/2) prod Gamma_R(s+mu) prod Gamma_C(s+nu)."""
        out = 0.5 * s * np.log(self.level)
        for mu in self.real_shells:
            out += -0.5 * (s + mu) * np.log(np.pi) + log_gamma((s + mu) / 2)
        for nu in self.complex_shells:
            out += np.log(2.0) - (s + nu) * np.log(2 * np.pi) + log_gamma(s + nu)
        return complex(out)

    def generic_completed_log(self, s: complex) -> complex:
        """log of C * Q^s prod Gamma(kappa_j s + lambda_j)."""
        out = np.log(complex(self.constant)) + s * np.log(self.scale_q)
        out += np.sum(log_gamma(self.kappas * s + self.lams))
        return complex(out)


def make_fe(
    level: int,
    mu_list: Sequence[complex] = (),
    nu_list: Sequence[complex] = (),
    sign: complex = 1.0,
) -> FunctionalEquation:
    """Build a FunctionalEquation from arithmetic (Gamma_R/Gamma_C) data.

    Each Gamma_R(s+mu) becomes a (kappa=1/2, lambda=mu/2) shell and each
    Gamma_C(s+nu) a (kappa=1, lambda=nu) shell; Q = N^(1/2) pi^(-d1/2) (2pi)^(-d2)
    and the constant multiplier absorbs pi^(-mu/2) and 2(2pi)^(-nu).
    """
    mu = tuple(complex(m) for m in mu_list)
    nu = tuple(complex(n) for n in nu_list)
    if not mu and not nu:
        raise ValueError("functional equation needs at least one gamma shell")
    if level < 1 or int(level) != level:
        raise ValueError("level must be a positive integer")
    sign = complex(sign)
    if abs(abs(sign) - 1.0) > 1e-12:
        raise ValueError(f"sign must be unimodular, got |sign| = {abs(sign)}")
    sign /= abs(sign)
    for shift in mu + nu:
        if shift.real < -1e-12:
            raise ValueError("shifts must satisfy Re >= 0 (Selberg convention)")

    d1, d2 = len(mu), len(nu)
    kappas = np.array([0.5] * d1 + [1.0] * d2)
    lams = np.array([m / 2 for m in mu] + list(nu), dtype=complex)
    q = float(level**0.5 * np.pi ** (-d1 / 2) * (2 * np.pi) ** (-d2))
    log_c = sum(-m / 2 * np.log(np.pi) for m in mu) + sum(
        np.log(2.0) - n * np.log(2 * np.pi) for n in nu
    )
    c = complex(np.exp(log_c))
    sign_generic = sign * np.conj(c) / c
    return FunctionalEquation(
        level=int(level),
        real_shells=mu,
        complex_shells=nu,
        sign=sign,
        kappas=kappas,
        lams=lams,
        scale_q=q,
        constant=c,
        sign_generic=sign_generic,
    )


def make_generic_fe(
    kappas: Sequence[float],
    lams: Sequence[complex],
    scale_q: float,
    sign: complex = 1.0,
) -> FunctionalEquation:
    """Directly build the generic form C=1, Q^s prod Gamma(kappa s + lambda)."""
    kappas = np.asarray(kappas, dtype=float)
    lams = np.asarray(lams, dtype=complex)
    if kappas.size == 0 or kappas.size != lams.size:
        raise ValueError("kappas and lams must be equal-length, non-empty")
    sign = complex(sign)
    if abs(abs(sign) - 1.0) > 1e-12:
        raise ValueError("sign must be unimodular")
    return FunctionalEquation(
        level=1,
        real_shells=(),
        complex_shells=(),
        sign=sign,
        kappas=kappas,
        lams=lams,
        scale_q=float(scale_q),
        constant=1.0 + 0j,
        sign_generic=sign,
    )


@dataclass(frozen=True)
class EulerStructure:
    """Shape of the Euler product: degree, level, bad-prime local degrees."""

    degree: int
    level: int = 1
    bad_primes: dict[int, int] = field(default_factory=dict)
    character: str = "trivial"
    self_dual: bool = False

    def __post_init__(self):
        if not 1 <= self.degree <= 5:
            raise ValueError("degree must be in 1..5")
        if self.character not in ("trivial", "principal-mod-N"):
            raise ValueError("character must be 'trivial' or 'principal-mod-N'")
        level_primes = {p for p, _ in factorize(self.level)} if self.level > 1 else set()
        if set(self.bad_primes) != level_primes:
            raise ValueError(
                f"bad_primes keys {sorted(self.bad_primes)} must be exactly the "
                f"primes dividing the level: {sorted(level_primes)}"
            )
        for p, deg in self.bad_primes.items():
            if not 0 <= deg <= self.degree - 1:
                raise ValueError(f"bad local degree at p={p} must be <= degree-1")

    @property
    def free_params_per_good_prime(self) -> int:
        # a_p for degrees 1..3, (a_p, a_p^2) for 4..5; degree 1 keeps one slot
        # so that Dirichlet L-functions have an unknown to solve for.
        return max(1, self.degree // 2)

    def good_primes(self, limit: int) -> list[int]:
        return [p for p in primes_up_to(limit) if p not in self.bad_primes]


@dataclass(frozen=True)
class LocalFactor:
    """Polynomial f_p with f_p(0) = 1; L_p(s) = 1/f_p(p^-s)."""

    prime: int
    poly_coeffs: tuple[complex, ...]

    def __post_init__(self):
        if not self.poly_coeffs or self.poly_coeffs[0] != 1:
            raise ValueError("local factor must have constant term exactly 1")

    @property
    def degree(self) -> int:
        return len(self.poly_coeffs) - 1

    def series(self, m_max: int) -> np.ndarray:
        """Reciprocal power-series coefficients a_{p^m}, m = 0..m_max."""
        c = self.poly_coeffs
        a = np.zeros(m_max + 1, dtype=complex)
        a[0] = 1.0
        for m in range(1, m_max + 1):
            a[m] = -sum(c[k] * a[m - k] for k in range(1, min(m, self.degree) + 1))
        return a

    def roots(self) -> np.ndarray:
        return np.roots(np.asarray(self.poly_coeffs[::-1], dtype=complex))


def local_factor_from_free_params(
    p: int, free: Sequence[complex], structure: EulerStructure
) -> LocalFactor:
    """Good-prime self-reciprocal factor matching the given prime-power coefficients.

    free = (a_p,) for degree 1..3 and (a_p, a_{p^2}) for degree 4..5.
    """
    d = structure.degree
    if d not in (1, 2, 3, 4, 5):
        raise ValueError("only degrees 1..5 are supported")
    need = 1 if d <= 3 else 2
    if len(free) != need:
        raise ValueError(f"degree {d} expects {need} free parameter(s)")
    ap = complex(free[0])
    if d == 1:
        coeffs = (1.0 + 0j, -ap)
    elif d == 2:
        coeffs = (1.0 + 0j, -ap, 1.0 + 0j)
    elif d == 3:
        coeffs = (1.0 + 0j, -ap, np.conj(ap), -1.0 + 0j)
    else:
        ap2 = complex(free[1])
        c2 = ap * ap - ap2
        if d == 4:
            coeffs = (1.0 + 0j, -ap, c2, -np.conj(ap), 1.0 + 0j)
        else:
            coeffs = (1.0 + 0j, -ap, c2, -np.conj(c2), np.conj(ap), -1.0 + 0j)
    return LocalFactor(prime=p, poly_coeffs=coeffs)


def bad_local_factor(p: int, params: Sequence[complex], local_degree: int) -> LocalFactor:
    """Unconstrained factor 1 + A_p z + B_p z^2 + ... at a prime dividing the level."""
    if len(params) != local_degree:
        raise ValueError(f"expected {local_degree} parameter(s), got {len(params)}")
    coeffs = (1.0 + 0j,) + tuple(complex(a) for a in params)
    return LocalFactor(prime=p, poly_coeffs=coeffs)


def ramanujan_prime_power_bound(d: int, m: int) -> int:
    """|a(p^m)| <= binomial(m+d-1, d-1) when all local roots are on the unit circle."""
    if d < 1 or m < 0:
        raise ValueError("need d >= 1 and m >= 0")
    return comb(m + d - 1, d - 1)


def coefficient_bound(n: int, structure: EulerStructure) -> float:
    """Multiplicative Ramanujan-type bound on |a_n| for this Euler structure."""
    if n < 1:
        raise ValueError("n must be >= 1")
    out = 1.0
    for p, m in factorize(n):
        deg = structure.bad_primes.get(p, structure.degree)
        if deg == 0:
            return 0.0
        out *= comb(m + deg - 1, deg - 1)
    return out


@dataclass(frozen=True)
class CoefficientVector:
    """Dirichlet coefficients a_1..a_J, a_1 = 1, stored as one complex array."""

    entries: np.ndarray
    self_dual: bool = False

    def __post_init__(self):
        if len(self.entries) < 1 or self.entries[0] != 1:
            raise ValueError("a_1 must be exactly 1")
        if self.self_dual and np.any(self.entries.imag != 0):
            raise ValueError("self-dual coefficients must be real")

    def __len__(self) -> int:
        return len(self.entries)

    def a(self, n: int) -> complex:
        return complex(self.entries[n - 1])

    @property
    def b1(self) -> np.ndarray:
        return self.entries.real

    @property
    def b2(self) -> np.ndarray:
        return self.entries.imag


def expand_coefficients(
    structure: EulerStructure,
    prime_data: dict[int, Sequence[complex]],
    bad_data: dict[int, Sequence[complex]],
    j_max: int,
) -> CoefficientVector:
    """a_n for n <= j_max from per-prime data and multiplicativity.

    prime_data maps each good prime <= j_max to its free parameters;
    bad_data maps each level prime <= j_max to its local-factor parameters.
    """
    series: dict[int, np.ndarray] = {}
    for p in primes_up_to(j_max):
        m_max = int(np.log(j_max) / np.log(p) + 1e-9)
        if p in structure.bad_primes:
            if p not in bad_data:
                raise KeyError(f"missing bad-prime data for p={p}")
            factor = bad_local_factor(p, bad_data[p], structure.bad_primes[p])
        else:
            if p not in prime_data:
                raise KeyError(f"missing prime data for p={p}")
            factor = local_factor_from_free_params(p, prime_data[p], structure)
        series[p] = factor.series(m_max)

    a = np.zeros(j_max, dtype=complex)
    a[0] = 1.0
    for n in range(2, j_max + 1):
        v = 1.0 + 0j
        for p, m in factorize(n):
            v *= series[p][m]
        a[n - 1] = v
    if structure.self_dual:
        a = a.real.astype(complex)
    return CoefficientVector(entries=a, self_dual=structure.self_dual)


def check_unit_circle_roots(factor: LocalFactor, good: bool = True) -> bool:
    """Ramanujan root test: on the unit circle (good p) / on or outside (bad p)."""
    if factor.degree == 0:
        return True
    mods = np.abs(factor.roots())
    if good:
        return bool(np.all(np.abs(mods - 1.0) <= 1e-6))
    return bool(np.all(mods >= 1.0 - 1e-6))
