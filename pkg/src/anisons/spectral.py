"""Periodic-box grids, discrete Fourier transforms and Fourier multipliers.

Convention, used everywhere in the package: the forward transform is the
unnormalised sum ``f_hat(k) = sum_x f(x) exp(-i xi.x)`` and the inverse carries
the ``1/(n1 n2 n3)`` factor (numpy/scipy defaults).  With this choice

    integral |f|^2 dx = (L1 L2 L3 / N^2) * sum_k |f_hat(k)|^2,   N = n1 n2 n3.

Wavenumbers are ``xi_j = 2 pi k_j / L_j`` with ``k_j`` in ``{-n_j/2+1, ..., n_j/2}``.
The Nyquist plane ``k_j = n_j/2`` is kept at zero in every spectral field.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.fft as sfft

from .exceptions import DimensionError, SingularMultiplierError

TWO_PI = 2.0 * np.pi
FFT_WORKERS = 1  # single-threaded transforms keep runs bit-reproducible


def fftn(a, axes=None):
    return sfft.fftn(a, axes=axes, workers=FFT_WORKERS)


def ifftn(a, axes=None):
    return sfft.ifftn(a, axes=axes, workers=FFT_WORKERS)


@dataclass(frozen=True)
class Grid:
    """Uniform grid on the periodic box ``[0, L1) x [0, L2) x [0, L3)``."""

    n1: int
    n2: int
    n3: int
    L1: float = TWO_PI
    L2: float = TWO_PI
    L3: float = TWO_PI

    def __post_init__(self):
        for name in ("n1", "n2", "n3"):
            n = getattr(self, name)
            if int(n) != n or n < 4 or n % 2:
                raise ValueError(f"{name}={n!r}: mode counts must be even integers >= 4")
            object.__setattr__(self, name, int(n))
        for name in ("L1", "L2", "L3"):
            L = float(getattr(self, name))
            if not np.isfinite(L) or L <= 0:
                raise ValueError(f"{name}={L!r}: box lengths must be positive")
            object.__setattr__(self, name, L)

    @classmethod
    def cube(cls, n: int, L: float = TWO_PI) -> "Grid":
        return cls(n, n, n, L, L, L)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n1, self.n2, self.n3)

    @property
    def lengths(self) -> tuple[float, float, float]:
        return (self.L1, self.L2, self.L3)

    @property
    def npoints(self) -> int:
        return self.n1 * self.n2 * self.n3

    @property
    def volume(self) -> float:
        return self.L1 * self.L2 * self.L3

    @property
    def spacing(self) -> tuple[float, float, float]:
        return tuple(L / n for L, n in zip(self.lengths, self.shape))

    @property
    def parseval(self) -> float:
        """Weight turning ``sum |f_hat|^2`` into ``integral |f|^2``."""
        return self.volume / float(self.npoints) ** 2

    def scaled_vertically(self, eps: float) -> "Grid":
        """Same sampling, vertical length divided by ``eps``."""
        return Grid(self.n1, self.n2, self.n3, self.L1, self.L2, self.L3 / eps)

    def integers(self, axis: int) -> np.ndarray:
        """Integer wavenumbers in FFT storage order, Nyquist stored as ``+n/2``."""
        n = self.shape[axis]
        k = np.fft.fftfreq(n, d=1.0 / n)
        k[n // 2] = n // 2
        return k

    def wavenumbers(self, axis: int) -> np.ndarray:
        return TWO_PI * self.integers(axis) / self.lengths[axis]

    def coords(self, axis: int) -> np.ndarray:
        return np.arange(self.shape[axis]) * self.spacing[axis]

    def mesh(self):
        return np.meshgrid(self.coords(0), self.coords(1), self.coords(2), indexing="ij")

    @cached_property
    def xi(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable wavenumber arrays of shapes (n1,1,1), (1,n2,1), (1,1,n3)."""
        return (
            self.wavenumbers(0)[:, None, None],
            self.wavenumbers(1)[None, :, None],
            self.wavenumbers(2)[None, None, :],
        )

    @cached_property
    def xi_h2(self) -> np.ndarray:
        x1, x2, _ = self.xi
        return x1**2 + x2**2

    @cached_property
    def xi_abs2(self) -> np.ndarray:
        return self.xi_h2 + self.xi[2] ** 2

    @cached_property
    def keep(self) -> np.ndarray:
        """Boolean mask, False on the Nyquist planes."""
        masks = [np.abs(self.integers(a)) != self.shape[a] // 2 for a in range(3)]
        return masks[0][:, None, None] & masks[1][None, :, None] & masks[2][None, None, :]

    @cached_property
    def dealias(self) -> np.ndarray:
        """Two-thirds rule mask: ``|k_j| < n_j / 3`` on every axis."""
        masks = [np.abs(self.integers(a)) < self.shape[a] / 3.0 for a in range(3)]
        return masks[0][:, None, None] & masks[1][None, :, None] & masks[2][None, None, :]

    def mode_label(self, index) -> str:
        k = tuple(int(self.integers(a)[i]) for a, i in enumerate(index))
        return f"k={k}"


def _grid_of(obj) -> Grid:
    return obj.grid


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Fourier coefficients of a real scalar field on ``grid``."""

    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs)
        if c.shape != self.grid.shape:
            raise DimensionError(f"coefficient shape {c.shape} does not match grid {self.grid.shape}")
        c = np.array(c, dtype=np.complex128, copy=True)
        c[~self.grid.keep] = 0.0
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, grid: Grid) -> "SpectralField":
        return cls(grid, np.zeros(grid.shape, dtype=np.complex128))

    def to_physical(self) -> np.ndarray:
        return inverse_transform(self)

    def conjugate_symmetry_defect(self) -> float:
        """Relative defect of ``c(-k) = conj(c(k))``."""
        c = self.coeffs
        ref = np.abs(c).max()
        if ref == 0:
            return 0.0
        flipped = c[np.ix_(*[(-np.arange(n)) % n for n in self.grid.shape])]
        return float(np.abs(flipped - np.conj(c)).max() / ref)

    def __add__(self, other):
        return SpectralField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other):
        return SpectralField(self.grid, self.coeffs - other.coeffs)

    def __neg__(self):
        return SpectralField(self.grid, -self.coeffs)

    def __mul__(self, scalar):
        return SpectralField(self.grid, self.coeffs * scalar)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class VelocityField:
    """Three spectral components on a shared grid plus a divergence-free flag."""

    u1: SpectralField
    u2: SpectralField
    u3: SpectralField
    divfree: bool = False

    DIVFREE_TOL = 1e-10

    def __post_init__(self):
        if not (self.u1.grid == self.u2.grid == self.u3.grid):
            raise DimensionError("velocity components live on different grids")
        if self.divfree:
            res = self.divergence_residual()
            if res > self.DIVFREE_TOL:
                raise ValueError(f"field flagged divergence-free has residual {res:.3e}")

    @property
    def grid(self) -> Grid:
        return self.u1.grid

    @property
    def components(self) -> tuple[SpectralField, SpectralField, SpectralField]:
        return (self.u1, self.u2, self.u3)

    @property
    def coeffs(self) -> np.ndarray:
        return np.stack([self.u1.coeffs, self.u2.coeffs, self.u3.coeffs])

    @classmethod
    def from_coeffs(cls, grid: Grid, coeffs, divfree: bool = False) -> "VelocityField":
        c = np.asarray(coeffs)
        if c.shape != (3,) + grid.shape:
            raise DimensionError(f"expected shape {(3,) + grid.shape}, got {c.shape}")
        return cls(*(SpectralField(grid, c[i]) for i in range(3)), divfree=divfree)

    @classmethod
    def from_physical(cls, grid: Grid, arrays, divfree: bool = False) -> "VelocityField":
        return cls(*(forward_transform(np.asarray(a), grid) for a in arrays), divfree=divfree)

    @classmethod
    def zeros(cls, grid: Grid) -> "VelocityField":
        z = SpectralField.zeros(grid)
        return cls(z, z, z, divfree=True)

    def to_physical(self) -> np.ndarray:
        return np.stack([inverse_transform(c) for c in self.components])

    def divergence(self) -> SpectralField:
        x1, x2, x3 = self.grid.xi
        d = 1j * (x1 * self.u1.coeffs + x2 * self.u2.coeffs + x3 * self.u3.coeffs)
        return SpectralField(self.grid, d)

    def divergence_residual(self) -> float:
        """``max|xi . u_hat| / max(|xi| |u_hat|)``; zero for the zero field."""
        x1, x2, x3 = self.grid.xi
        c = self.coeffs
        num = np.abs(x1 * c[0] + x2 * c[1] + x3 * c[2]).max()
        den = (np.sqrt(self.grid.xi_abs2) * np.sqrt((np.abs(c) ** 2).sum(axis=0))).max()
        return float(num / den) if den > 0 else 0.0

    def with_divfree(self, flag: bool = True) -> "VelocityField":
        return VelocityField(self.u1, self.u2, self.u3, divfree=flag)

    def _combine(self, other, op):
        flag = self.divfree and other.divfree
        comps = [SpectralField(self.grid, op(a.coeffs, b.coeffs)) for a, b in zip(self.components, other.components)]
        return VelocityField(*comps, divfree=flag and _still_divfree(comps))

    def __add__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, scalar):
        return VelocityField(*(c * scalar for c in self.components), divfree=self.divfree)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0


def _still_divfree(comps) -> bool:
    return VelocityField(*comps).divergence_residual() <= VelocityField.DIVFREE_TOL


# --------------------------------------------------------------------------- transforms


def forward_transform(physical, grid: Grid) -> SpectralField:
    a = np.asarray(physical)
    if a.shape != grid.shape:
        raise DimensionError(f"array shape {a.shape} does not match grid {grid.shape}")
    if np.iscomplexobj(a):
        raise DimensionError("physical samples must be real")
    return SpectralField(grid, fftn(a.astype(np.float64, copy=False)))


def inverse_transform(f: SpectralField) -> np.ndarray:
    return ifftn(f.coeffs).real


def derivative(f: SpectralField, alpha: Sequence[int]) -> SpectralField:
    """Apply ``d^alpha`` by multiplying with ``(i xi_1)^a1 (i xi_2)^a2 (i xi_3)^a3``."""
    if len(alpha) != 3 or any(int(a) != a or a < 0 for a in alpha):
        raise ValueError(f"alpha must be three nonnegative integers, got {alpha!r}")
    if not any(alpha):
        return f
    sym = np.ones((1, 1, 1), dtype=np.complex128)
    for xi, a in zip(f.grid.xi, alpha):
        if a:
            sym = sym * (1j * xi) ** int(a)
    return SpectralField(f.grid, f.coeffs * sym)


def multiplier_values(grid: Grid, m: Callable, *, at_zero: complex) -> np.ndarray:
    """Evaluate ``m(xi1, xi2, xi3)`` on the grid, substituting ``at_zero`` at xi=0."""
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        vals = np.broadcast_to(np.asarray(m(*grid.xi), dtype=np.complex128), grid.shape).copy()
    vals[0, 0, 0] = at_zero
    bad = ~np.isfinite(vals) & grid.keep
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise SingularMultiplierError(f"multiplier not finite at mode {grid.mode_label(idx)}")
    vals[~grid.keep] = 0.0
    return vals


def apply_multiplier(f: SpectralField, m: Callable, *, at_zero: complex) -> SpectralField:
    """Pointwise Fourier multiplier; the caller decides the value at xi = 0."""
    return SpectralField(f.grid, f.coeffs * multiplier_values(f.grid, m, at_zero=at_zero))


# --------------------------------------------------------------------------- projectors


def leray_coeffs(c: np.ndarray, grid: Grid) -> np.ndarray:
    """Leray projection of a (3, n1, n2, n3) coefficient stack; mean mode untouched."""
    x1, x2, x3 = grid.xi
    k2 = grid.xi_abs2
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(k2 > 0, 1.0 / k2, 0.0)
    dot = (x1 * c[0] + x2 * c[1] + x3 * c[2]) * inv
    return np.stack([c[0] - x1 * dot, c[1] - x2 * dot, c[2] - x3 * dot])


def leray_project(u: VelocityField) -> VelocityField:
    return VelocityField.from_coeffs(u.grid, leray_coeffs(u.coeffs, u.grid), divfree=True)


def horizontal_leray_coeffs(c1: np.ndarray, c2: np.ndarray, grid: Grid):
    x1, x2, _ = grid.xi
    kh2 = grid.xi_h2
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(kh2 > 0, 1.0 / kh2, 0.0)
    dot = (x1 * c1 + x2 * c2) * inv
    return c1 - x1 * dot, c2 - x2 * dot


def horizontal_leray_project(uh):
    """``P_h = Id - grad_h Delta_h^{-1} div_h`` on a pair of spectral fields.

    The symbol does not involve ``xi_3``, so this acts independently on every
    horizontal slice.  Modes with ``xi_h = 0`` pass through unchanged.
    """
    a, b = uh
    c1, c2 = horizontal_leray_coeffs(a.coeffs, b.coeffs, a.grid)
    return SpectralField(a.grid, c1), SpectralField(a.grid, c2)


def horizontal_divergence(uh) -> SpectralField:
    a, b = uh
    x1, x2, _ = a.grid.xi
    return SpectralField(a.grid, 1j * (x1 * a.coeffs + x2 * b.coeffs))


def aniso_pressure_coeffs(m1: np.ndarray, m2: np.ndarray, grid: Grid, eps: float) -> np.ndarray:
    x1, x2, x3 = grid.xi
    den = grid.xi_h2 + eps**2 * x3**2
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(den > 0, 1.0 / den, 0.0)
    return 1j * (x1 * m1 + x2 * m2) * inv


def anisotropic_pressure_solve(rhs, eps: float) -> SpectralField:
    """Solve ``(-Delta_h - eps^2 d_3^2) Q = div_h M^h`` for ``Q``.

    ``rhs`` is a VelocityField (its horizontal part is used) or a pair of
    spectral fields.  Modes where ``|xi_h|^2 + eps^2 xi_3^2`` vanishes get 0.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if isinstance(rhs, VelocityField):
        m1, m2 = rhs.u1, rhs.u2
    else:
        m1, m2 = rhs
    return SpectralField(m1.grid, aniso_pressure_coeffs(m1.coeffs, m2.coeffs, m1.grid, eps))


# --------------------------------------------------------------------------- helpers


def l2_inner(a: SpectralField, b: SpectralField) -> float:
    """Real L2 inner product over the box, computed spectrally."""
    return float(a.grid.parseval * np.real(np.vdot(a.coeffs, b.coeffs)))


def dealiased_product(a: SpectralField, b: SpectralField) -> SpectralField:
    """Product with both factors and the result truncated by the 2/3 rule."""
    g = a.grid
    pa = ifftn(a.coeffs * g.dealias).real
    pb = ifftn(b.coeffs * g.dealias).real
    return SpectralField(g, fftn(pa * pb) * g.dealias)


def slice_coeffs(c: np.ndarray, index: int = 0) -> np.ndarray:
    """2D coefficients of the physical slice ``x3 = index * dx3`` from 3D coefficients."""
    n3 = c.shape[-1]
    phase = np.exp(2j * np.pi * np.fft.fftfreq(n3, d=1.0 / n3) * index / n3)
    return (c * phase).sum(axis=-1) / n3


def half_to_full(half: np.ndarray, shape) -> np.ndarray:
    """Rebuild full FFT coefficients from the rfftn layout (last axis halved)."""
    n1, n2, n3 = shape
    h = n3 // 2 + 1
    lead = half.shape[:-3]
    full = np.empty(lead + (n1, n2, n3), dtype=np.complex128)
    full[..., :h] = half
    i1 = (-np.arange(n1)) % n1
    i2 = (-np.arange(n2)) % n2
    i3 = n3 - np.arange(h, n3)
    full[..., h:] = np.conj(half[..., i1[:, None, None], i2[None, :, None], i3[None, None, :]])
    return full
