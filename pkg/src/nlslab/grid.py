"""Spatial grids, fields, quadrature and norms.

Two discretizations of R^3 are provided.  The radial grid stores a
spherically symmetric field psi(r) at r_i = i*h (i = 1..n, h = r_max/(n+1))
and evaluates the Laplacian with a type-I sine transform of u = r*psi, which
enforces u(0) = u(r_max) = 0.  The Cartesian grid is a periodic box with
FFT-based derivatives; it exists for the Hartree nonlinearity and for
non-radial spot checks.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Union

import numpy as np
import scipy.fft as sfft

__all__ = [
    "RadialGrid",
    "CartesianGrid",
    "Grid",
    "Field",
    "GridMismatchError",
    "NormKind",
    "L2Ball",
    "inner",
    "real_inner",
    "norm",
    "gradient",
    "gradient_norm_sq",
    "laplacian",
    "to_spectral",
    "from_spectral",
    "value_at_origin",
]

FOUR_PI = 4.0 * np.pi


class GridMismatchError(ValueError):
    """Raised when two fields on different grids are combined."""


@dataclass(frozen=True)
class RadialGrid:
    """Radial grid for spherically symmetric fields on the ball |x| < r_max."""

    n: int
    r_max: float

    kind = "radial"

    def __post_init__(self):
        if self.n < 4:
            raise ValueError("radial grid needs at least 4 points")
        if not self.r_max > 0:
            raise ValueError("r_max must be positive")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,)

    @cached_property
    def h(self) -> float:
        return self.r_max / (self.n + 1)

    @cached_property
    def r(self) -> np.ndarray:
        return self.h * np.arange(1, self.n + 1)

    @cached_property
    def weights(self) -> np.ndarray:
        # trapezoid in u = r*psi with u(0) = u(r_max) = 0
        return FOUR_PI * self.h * self.r**2

    @cached_property
    def radius(self) -> np.ndarray:
        """Distance from the origin at each grid point."""
        return self.r

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        return np.pi * np.arange(1, self.n + 1) / self.r_max

    @cached_property
    def k2(self) -> np.ndarray:
        return self.wavenumbers**2

    def dst_matrix(self) -> np.ndarray:
        """Orthonormal (and symmetric) DST-I matrix acting on u."""
        return sfft.dst(np.eye(self.n), type=1, norm="ortho", axis=0)


@dataclass(frozen=True)
class CartesianGrid:
    """Periodic cube [-box/2, box/2)^3 with n points per axis."""

    n: int
    box: float

    kind = "cartesian"

    def __post_init__(self):
        if self.n < 4 or self.n & (self.n - 1):
            raise ValueError("Cartesian grid needs n to be a power of two")
        if not self.box > 0:
            raise ValueError("box must be positive")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n, self.n, self.n)

    @cached_property
    def h(self) -> float:
        return self.box / self.n

    @cached_property
    def axis(self) -> np.ndarray:
        return -0.5 * self.box + self.h * np.arange(self.n)

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(np.meshgrid(self.axis, self.axis, self.axis, indexing="ij"))

    @cached_property
    def radius(self) -> np.ndarray:
        x, y, z = self.coords
        return np.sqrt(x**2 + y**2 + z**2)

    @cached_property
    def weights(self) -> np.ndarray:
        return np.full(self.shape, self.h**3)

    @cached_property
    def kvec(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        k = 2.0 * np.pi * sfft.fftfreq(self.n, d=self.h)
        return tuple(np.meshgrid(k, k, k, indexing="ij", sparse=True))

    @cached_property
    def k2(self) -> np.ndarray:
        kx, ky, kz = self.kvec
        return kx**2 + ky**2 + kz**2


Grid = Union[RadialGrid, CartesianGrid]


class Field:
    """Complex-valued state sampled on a grid.

    Fields are immutable: ``values`` is a read-only array.  Arithmetic with
    another field requires an identical grid.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        arr = np.array(values, dtype=np.complex128)
        if arr.shape != grid.shape:
            raise ValueError(f"values of shape {arr.shape} do not match grid shape {grid.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Field is immutable")

    def __repr__(self):
        return f"Field({self.grid!r}, |max|={np.abs(self.values).max():.3e})"

    @classmethod
    def zeros(cls, grid: Grid) -> "Field":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "Field":
        """Sample ``fn(radius)`` for radial grids or ``fn(x, y, z)`` for Cartesian ones."""
        if grid.kind == "radial":
            return cls(grid, fn(grid.r))
        return cls(grid, fn(*grid.coords))

    @property
    def u(self) -> np.ndarray:
        """r * psi on a radial grid."""
        if self.grid.kind != "radial":
            raise TypeError("u = r*psi is only defined on radial grids")
        return self.grid.r * self.values

    def _other(self, other):
        if isinstance(other, Field):
            if other.grid != self.grid:
                raise GridMismatchError(f"{self.grid!r} != {other.grid!r}")
            return other.values
        return other

    def __add__(self, other):
        return Field(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return Field(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return Field(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return Field(self.grid, self.values / self._other(other))

    def __neg__(self):
        return Field(self.grid, -self.values)

    def conj(self) -> "Field":
        return Field(self.grid, self.values.conj())

    @property
    def real(self) -> "Field":
        return Field(self.grid, self.values.real)

    @property
    def imag(self) -> "Field":
        return Field(self.grid, self.values.imag)

    def same_values(self, other: "Field") -> bool:
        return self.grid == other.grid and np.array_equal(self.values, other.values)


def _check(a: Field, b: Field) -> None:
    if a.grid != b.grid:
        raise GridMismatchError(f"{a.grid!r} != {b.grid!r}")


def inner(a: Field, b: Field) -> complex:
    """L2 inner product (a, b) = int conj(a) b dx, conjugate-linear in a."""
    _check(a, b)
    w = a.grid.weights
    return complex(np.sum(w * (a.values.conj() * b.values)))


def real_inner(a: Field, b: Field) -> float:
    """Real inner product <a, b> = Re (a, b)."""
    _check(a, b)
    w = a.grid.weights
    return float(np.sum(w * (a.values.real * b.values.real + a.values.imag * b.values.imag)))


# -- spectral machinery ------------------------------------------------------


def to_spectral(a: Field) -> np.ndarray:
    """Orthonormal spectral coefficients; Euclidean norm equals the L2 norm of ``a``."""
    g = a.grid
    if g.kind == "radial":
        return np.sqrt(FOUR_PI * g.h) * _dst(a.u)
    return sfft.fftn(a.values, norm="ortho") * g.h**1.5


def from_spectral(grid: Grid, coeffs: np.ndarray) -> Field:
    if grid.kind == "radial":
        u = _dst(coeffs) / np.sqrt(FOUR_PI * grid.h)
        return Field(grid, u / grid.r)
    return Field(grid, sfft.ifftn(coeffs, norm="ortho") / grid.h**1.5)


def _dst(x: np.ndarray) -> np.ndarray:
    # DST-I with orthonormal scaling is its own inverse
    if np.iscomplexobj(x):
        return sfft.dst(x.real, type=1, norm="ortho") + 1j * sfft.dst(x.imag, type=1, norm="ortho")
    return sfft.dst(x, type=1, norm="ortho")


def spectral_multiply(a: Field, multiplier: np.ndarray) -> Field:
    """Apply a Fourier/sine multiplier diagonal in the spectral basis."""
    g = a.grid
    if g.kind == "radial":
        return Field(g, _dst(multiplier * _dst(a.u)) / g.r)
    return Field(g, sfft.ifftn(multiplier * sfft.fftn(a.values)))


def laplacian(a: Field) -> Field:
    return spectral_multiply(a, -a.grid.k2)


def gradient_norm_sq(a: Field) -> float:
    """||grad a||_2^2 evaluated spectrally (equals -<a, laplacian a>)."""
    c = to_spectral(a)
    return float(np.sum(a.grid.k2 * np.abs(c) ** 2))


def gradient(a: Field) -> np.ndarray:
    """Pointwise gradient.

    Radial grids return d psi/dr (shape (n,)); Cartesian grids return an
    array of shape (3, n, n, n).
    """
    g = a.grid
    if g.kind == "radial":
        # u' from the sine series via a DCT-I on the extended index range
        c = _dst(a.u) * g.wavenumbers
        ext = np.zeros(g.n + 2, dtype=c.dtype)
        ext[1:-1] = c
        scale = np.sqrt(2.0 / (g.n + 1))
        if np.iscomplexobj(ext):
            du = sfft.dct(ext.real, type=1) + 1j * sfft.dct(ext.imag, type=1)
        else:
            du = sfft.dct(ext, type=1)
        du = 0.5 * scale * du[1:-1]
        return du / g.r - a.u / g.r**2
    fa = sfft.fftn(a.values)
    return np.stack([sfft.ifftn(1j * k * fa) for k in g.kvec])


# -- norms -------------------------------------------------------------------


class NormKind(str, Enum):
    L2 = "L2"
    L6 = "L6"
    H1 = "H1"
    W16 = "W16"
    # No grid analog of the Lorentz norm L^{6,2}; monitored through plain L6.
    L62 = "L62"


@dataclass(frozen=True)
class L2Ball:
    """L2 norm restricted to the ball |x| <= radius."""

    radius: float


def _lp(values: np.ndarray, weights: np.ndarray, p: float) -> float:
    return float(np.sum(weights * np.abs(values) ** p) ** (1.0 / p))


def norm(a: Field, kind: Union[NormKind, str, L2Ball] = NormKind.L2) -> float:
    """Grid approximation of a spatial norm of ``a``."""
    w = a.grid.weights
    if isinstance(kind, L2Ball):
        mask = a.grid.radius <= kind.radius
        return float(np.sqrt(np.sum(w[mask] * np.abs(a.values[mask]) ** 2)))
    kind = NormKind(kind)
    if kind is NormKind.L2:
        return _lp(a.values, w, 2)
    if kind in (NormKind.L6, NormKind.L62):
        return _lp(a.values, w, 6)
    if kind is NormKind.H1:
        return float(np.sqrt(_lp(a.values, w, 2) ** 2 + gradient_norm_sq(a)))
    if kind is NormKind.W16:
        grad = gradient(a)
        if a.grid.kind == "radial":
            gmag = np.abs(grad)
        else:
            gmag = np.sqrt(np.sum(np.abs(grad) ** 2, axis=0))
        return _lp(a.values, w, 6) + _lp(gmag, w, 6)
    raise ValueError(f"unknown norm {kind!r}")


def value_at_origin(a: Field) -> complex:
    """psi(0) = u'(0) for a radial field, differentiating the sine series of u = r psi."""
    g = a.grid
    if g.kind != "radial":
        raise TypeError("value_at_origin is defined for radial fields")
    c = _dst(a.u)
    return complex(np.sqrt(2.0 / (g.n + 1)) * np.sum(c * g.wavenumbers))
