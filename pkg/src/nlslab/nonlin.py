"""Gauge-covariant nonlinearities g, their potential G, linearization and remainder.

Power terms are a|psi|^{p-1} psi; Hartree terms are (Phi * |psi|^2) psi with the
convolution done by an analytic Fourier multiplier on the Cartesian grid.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np
import scipy.fft as sfft
from scipy.special import gamma

from .grid import CartesianGrid, Field, Grid

__all__ = [
    "PowerTerm",
    "GaussianKernel",
    "PowerLawKernel",
    "HartreeTerm",
    "NonlinearitySpec",
    "UnsupportedConfiguration",
    "g_apply",
    "G_value",
    "linearize_g",
    "F2_eval",
    "second_variation",
    "multiplier",
    "convolve",
]


class UnsupportedConfiguration(ValueError):
    pass


@dataclass(frozen=True)
class PowerTerm:
    """coef * |psi|^(power-1) * psi."""

    coef: float
    power: float

    def __post_init__(self):
        if not self.power > 1:
            raise ValueError("power must exceed 1")


@dataclass(frozen=True)
class GaussianKernel:
    """Phi(x) = amplitude * exp(-|x|^2 / width^2)."""

    amplitude: float
    width: float

    def multiplier(self, k2: np.ndarray) -> np.ndarray:
        w = self.width
        return self.amplitude * np.pi**1.5 * w**3 * np.exp(-0.25 * w**2 * k2)


@dataclass(frozen=True)
class PowerLawKernel:
    """Phi(x) = amplitude / |x|^exponent with 0 < exponent < 3."""

    amplitude: float
    exponent: float

    def __post_init__(self):
        if not 0 < self.exponent < 3:
            raise ValueError("power-law kernel exponent must lie in (0, 3)")

    def multiplier(self, k2: np.ndarray, dk: float) -> np.ndarray:
        b = self.exponent
        const = np.pi**1.5 * 2.0 ** (3 - b) * gamma((3 - b) / 2) / gamma(b / 2)
        k = np.sqrt(k2)
        out = np.empty(np.broadcast(k2).shape)
        nz = k > 0
        out[nz] = const * k[nz] ** (b - 3)
        # k = 0: average of |k|^(b-3) over the ball with the volume of one k-cell
        kappa = (3.0 / (4.0 * np.pi)) ** (1.0 / 3.0) * dk
        out[~nz] = const * 3.0 * kappa ** (b - 3) / b
        return self.amplitude * out


@dataclass(frozen=True)
class HartreeTerm:
    kernel: Union[GaussianKernel, PowerLawKernel]


Term = Union[PowerTerm, HartreeTerm]


@dataclass(frozen=True)
class NonlinearitySpec:
    terms: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        for t in self.terms:
            if isinstance(t, PowerTerm) and not (7.0 / 3.0 - 1e-12 <= t.power <= 5.0 + 1e-12):
                warnings.warn(f"power {t.power} lies outside [7/3, 5]; accepted but untested",
                              stacklevel=3)

    @property
    def has_hartree(self) -> bool:
        return any(isinstance(t, HartreeTerm) for t in self.terms)

    def check_grid(self, grid: Grid) -> None:
        if self.has_hartree and grid.kind != "cartesian":
            raise UnsupportedConfiguration("Hartree terms need the Cartesian backend")


@lru_cache(maxsize=16)
def _kernel_multiplier(kernel, grid: CartesianGrid) -> np.ndarray:
    if isinstance(kernel, GaussianKernel):
        return kernel.multiplier(grid.k2)
    return kernel.multiplier(np.broadcast_to(grid.k2, grid.shape), 2.0 * np.pi / grid.box)


def convolve(kernel, grid: CartesianGrid, density: np.ndarray) -> np.ndarray:
    """Phi * density for a real density on the periodic box."""
    mult = _kernel_multiplier(kernel, grid)
    return sfft.ifftn(mult * sfft.fftn(density)).real


def _abs_pow(a: np.ndarray, s: float) -> np.ndarray:
    # |a|^s with 0 -> 0 for s > 0
    return np.abs(a) ** s


def multiplier(spec: NonlinearitySpec, psi: Field) -> np.ndarray:
    """Real array N[psi] with g(psi) = N[psi] * psi."""
    spec.check_grid(psi.grid)
    v = psi.values
    out = np.zeros(psi.grid.shape)
    for t in spec.terms:
        if isinstance(t, PowerTerm):
            out += t.coef * _abs_pow(v, t.power - 1)
        else:
            out += convolve(t.kernel, psi.grid, np.abs(v) ** 2)
    return out


def g_apply(spec: NonlinearitySpec, psi: Field) -> Field:
    return Field(psi.grid, multiplier(spec, psi) * psi.values)


def G_value(spec: NonlinearitySpec, psi: Field) -> float:
    """Potential functional G whose derivative in direction eta is Re(g(psi), eta)."""
    spec.check_grid(psi.grid)
    w = psi.grid.weights
    rho = np.abs(psi.values) ** 2
    total = 0.0
    for t in spec.terms:
        if isinstance(t, PowerTerm):
            total += t.coef / (t.power + 1) * np.sum(w * rho ** ((t.power + 1) / 2))
        else:
            total += 0.25 * np.sum(w * convolve(t.kernel, psi.grid, rho) * rho)
    return float(total)


def linearize_g(spec: NonlinearitySpec, Q: Field, eta: Field) -> Field:
    """d/d(eps) g(Q + eps*eta) at eps = 0.

    Real-linear but not complex-linear in eta.  Valid for any complex Q; for
    Q = Q_real * e^{i theta} it agrees with the gauge-rotated real formula.
    """
    spec.check_grid(Q.grid)
    q, e = Q.values, eta.values
    out = np.zeros(Q.grid.shape, dtype=complex)
    aq2 = np.abs(q) ** 2
    re_qe = (q.conj() * e).real
    for t in spec.terms:
        if isinstance(t, PowerTerm):
            p = t.power
            lead = t.coef * _abs_pow(q, p - 1)
            out += lead * e
            # (p-1) a |Q|^{p-3} Re(conj(Q) eta) Q, written to avoid |Q|^{p-3} at Q = 0
            ratio = np.divide(re_qe, aq2, out=np.zeros_like(re_qe), where=aq2 > 0)
            out += (p - 1) * lead * ratio * q
        else:
            out += convolve(t.kernel, Q.grid, aq2) * e
            out += 2.0 * convolve(t.kernel, Q.grid, re_qe) * q
    return Field(Q.grid, out)


def F2_eval(spec: NonlinearitySpec, Q: Field, eta: Field) -> Field:
    """g(Q + eta) - g(Q) - linearize_g(Q, eta), evaluated without expansion."""
    return g_apply(spec, Q + eta) - g_apply(spec, Q) - linearize_g(spec, Q, eta)


def second_variation(spec: NonlinearitySpec, Q: Field, a: Field, b: Field) -> Field:
    """Second derivative of g at a real Q in real directions a, b."""
    spec.check_grid(Q.grid)
    q, x, y = Q.values.real, a.values.real, b.values.real
    out = np.zeros(Q.grid.shape)
    for t in spec.terms:
        if isinstance(t, PowerTerm):
            p = t.power
            aq = np.abs(q)
            # a p (p-1) |Q|^{p-3} Q = a p (p-1) |Q|^{p-2} sgn(Q)
            out += t.coef * p * (p - 1) * _abs_pow(aq, p - 2) * np.sign(q) * x * y
        else:
            c = lambda d: convolve(t.kernel, Q.grid, d)  # noqa: E731
            out += 2.0 * c(q * y) * x + 2.0 * c(x * y) * q + 2.0 * c(q * x) * y
    return Field(Q.grid, out)
