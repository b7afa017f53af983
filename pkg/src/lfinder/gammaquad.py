"""Complex gamma helpers and vertical-line contour quadrature.

All arithmetic is binary64. The gamma backend is isolated here so an
extended-precision implementation could be swapped in for very large
spectral parameters without touching the callers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import loggamma as _loggamma

__all__ = [
    "GammaPoleError",
    "ContourDecayError",
    "log_gamma",
    "gamma_r",
    "gamma_c",
    "QuadratureRule",
    "contour_integral",
    "refinement_error",
]

_POLE_TOL = 1e-12


class GammaPoleError(ValueError):
    """Argument is (numerically) a non-positive integer pole of Gamma."""


class ContourDecayError(RuntimeError):
    """Integrand has not decayed enough by the ends of the truncated contour."""


def _check_poles(z) -> None:
    z = np.asarray(z, dtype=complex)
    near_real = np.abs(z.imag) < _POLE_TOL
    if not np.any(near_real):
        return
    zr = z.real[near_real]
    bad = (zr < 0.5) & (np.abs(zr - np.round(zr)) < _POLE_TOL)
    if np.any(bad):
        raise GammaPoleError(f"argument within {_POLE_TOL} of a Gamma pole")


def log_gamma(z):
    """Principal branch of log Gamma(z); scalar or array."""
    _check_poles(z)
    out = _loggamma(np.asarray(z, dtype=complex))
    return complex(out) if out.ndim == 0 else out


def gamma_r(s):
    """Gamma_R(s) = pi^(-s/2) Gamma(s/2)."""
    s = np.asarray(s, dtype=complex)
    out = np.exp(-0.5 * s * np.log(np.pi) + log_gamma(s / 2))
    return complex(out) if out.ndim == 0 else out


def gamma_c(s):
    """Gamma_C(s) = 2 (2 pi)^(-s) Gamma(s)."""
    s = np.asarray(s, dtype=complex)
    out = 2.0 * np.exp(-s * np.log(2 * np.pi) + log_gamma(s))
    return complex(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class QuadratureRule:
    """Uniform trapezoid nodes on Re z = nu, truncated to |Im z| <= half_width."""

    abscissa: float
    half_width: float
    step: float

    def __post_init__(self):
        if self.abscissa <= 0:
            raise ValueError("abscissa nu must be positive")
        if self.step <= 0:
            raise ValueError("step h must be positive")
        if self.half_width < 10 * self.step:
            raise ValueError("half_width must be at least 10*step")

    @property
    def node_count(self) -> int:
        return 2 * int(np.floor(self.half_width / self.step)) + 1

    def nodes(self) -> np.ndarray:
        k = int(np.floor(self.half_width / self.step))
        return self.abscissa + 1j * self.step * np.arange(-k, k + 1)


def contour_integral(integrand, rule: QuadratureRule) -> complex:
    """(1/2 pi i) * integral of `integrand` along Re z = nu, trapezoid rule.

    The integrand must decay on the contour; if the sampled magnitude near
    |Im z| = half_width has not dropped below 1e-3 of the peak, the
    truncation is unsound and ContourDecayError is raised.
    """
    z = rule.nodes()
    vals = np.asarray(integrand(z), dtype=complex)
    mags = np.abs(vals)
    peak = mags.max()
    if peak > 0.0:
        edge = max(3, rule.node_count // 50)
        edge_mag = max(mags[:edge].max(), mags[-edge:].max())
        if edge_mag > 1e-3 * peak:
            raise ContourDecayError(
                f"integrand at contour ends is {edge_mag / peak:.2e} of peak"
            )
    return complex(vals.sum() * rule.step / (2 * np.pi))


def refinement_error(integrand, rule: QuadratureRule) -> float:
    """Heuristic quadrature error: |value - value at halved step, 1.25x width|."""
    coarse = contour_integral(integrand, rule)
    fine = contour_integral(
        integrand,
        QuadratureRule(rule.abscissa, 1.25 * rule.half_width, 0.5 * rule.step),
    )
    return abs(fine - coarse)
