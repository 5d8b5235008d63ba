"""Isotropic, anisotropic and mixed Lebesgue/Sobolev/Besov norms on the box.

Quadratic-form norms are discrete quadratures of their Fourier definition,

    |f|^2 = (V / N^2) * sum_k  w(xi_k) |f_hat(k)|^2,

so that ``w = 1`` reproduces the physical L2 norm exactly.  Power weights use
the conventions ``|x|^0 = 1`` and ``0^p = 0`` for ``p > 0``; a negative power
leaves the corresponding modes out of the sum, which is only meaningful when
they carry no mass (checked, ``MeaninglessNormError`` otherwise).  The ell^2
mass sitting on modes where a weight factor degenerates is reported as
``excluded_mode_mass`` so that the box surrogate of a homogeneous norm can be
audited.  Vector fields use the Euclidean norm pointwise / mode by mode.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.integrate import trapezoid

from .exceptions import InvalidIndexError, MeaninglessNormError, NormSpecError
from .spectral import Grid, SpectralField, VelocityField, ifftn

EXCLUDED_MASS_TOL = 1e-20

KINDS = (
    "Sobolev3D",
    "AnisoHsSigma",
    "AnisoH3",
    "MixedLpLq",
    "LqvHsh",
    "BesovCminus1",
    "BesovMinus1Infty2",
)


@dataclass(frozen=True)
class NormSpec:
    """One entry of the norm catalogue: a kind tag plus its indices."""

    kind: str
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise NormSpecError(f"unknown norm kind {self.kind!r}")
        object.__setattr__(self, "params", tuple(self.params))

    @property
    def hilbert_regime(self) -> bool | None:
        if self.kind == "AnisoHsSigma":
            s, sigma = self.params
            return s < 1 and sigma < 0.5
        if self.kind == "AnisoH3":
            return all(s < 0.5 for s in self.params)
        return None

    def indices(self) -> str:
        return ";".join(_fmt(p) for p in self.params)

    def to_string(self) -> str:
        return _TO_STRING[self.kind](self.params)


@dataclass(frozen=True)
class NormValue:
    value: float
    spec: NormSpec
    excluded_mode_mass: float = 0.0

    def __post_init__(self):
        if not self.value >= 0:
            raise ValueError(f"norm value must be nonnegative, got {self.value}")
        if not 0.0 <= self.excluded_mode_mass <= 1.0:
            raise ValueError("excluded_mode_mass must lie in [0, 1]")

    def __float__(self):
        return float(self.value)

    def csv_row(self) -> list[str]:
        return [self.spec.kind, self.spec.indices(), repr(float(self.value)), repr(float(self.excluded_mode_mass))]


def _fmt(p) -> str:
    if isinstance(p, str):
        return p
    if p == math.inf:
        return "inf"
    return repr(float(p))


_TO_STRING = {
    "Sobolev3D": lambda p: f"H3:{_fmt(p[0])}",
    "AnisoHsSigma": lambda p: f"Haniso:{_fmt(p[0])},{_fmt(p[1])}",
    "AnisoH3": lambda p: f"Htri:{','.join(_fmt(x) for x in p)}",
    "MixedLpLq": lambda p: f"LpLq:{_fmt(p[0])},{_fmt(p[1])},{p[2]}",
    "LqvHsh": lambda p: f"LqvHsh:{_fmt(p[0])},{_fmt(p[1])}",
    "BesovCminus1": lambda p: "Besov:Cminus1",
    "BesovMinus1Infty2": lambda p: "Besov:Minus1Infty2",
}


# --------------------------------------------------------------------------- plumbing


def _stack(u):
    """Return ``(grid, coeffs)`` with coeffs of shape (ncomp, n1, n2, n3)."""
    if isinstance(u, VelocityField):
        return u.grid, u.coeffs
    if isinstance(u, SpectralField):
        return u.grid, u.coeffs[None]
    raise TypeError(f"expected SpectralField or VelocityField, got {type(u).__name__}")


def _power(x: np.ndarray, p: float):
    """``x**p`` with the package conventions; returns (values, degenerate mask)."""
    zero = x == 0
    if p == 0:
        return np.ones_like(x), np.zeros_like(zero)
    with np.errstate(divide="ignore"):
        vals = np.where(zero, 0.0, np.abs(x) ** p)
    return vals, zero


def _quadratic(u, factors, spec: NormSpec, tol: float = EXCLUDED_MASS_TOL) -> NormValue:
    """``factors`` is a list of (|component of xi|, exponent, label)."""
    grid, c = _stack(u)
    mass = (np.abs(c) ** 2).sum(axis=0)
    total = mass.sum()
    weight = np.ones(grid.shape)
    degenerate = np.zeros(grid.shape, dtype=bool)
    for base, expo, label in factors:
        vals, zero = _power(base, 2.0 * expo)
        weight = weight * vals
        zero = np.broadcast_to(zero, grid.shape)
        if expo < 0 and total > 0:
            frac = mass[zero].sum() / total
            if frac > tol:
                raise MeaninglessNormError(
                    f"{spec.kind}: negative exponent on {label} but {frac:.3e} of the mass sits where {label} = 0"
                )
        degenerate |= zero
    excluded = float(mass[degenerate].sum() / total) if total > 0 else 0.0
    value = math.sqrt(grid.parseval * float((weight * mass).sum()))
    return NormValue(value, spec, min(max(excluded, 0.0), 1.0))


# --------------------------------------------------------------------------- catalogue


def sobolev3(u, s: float) -> NormValue:
    """Homogeneous isotropic Sobolev norm."""
    grid, _ = _stack(u)
    return _quadratic(u, [(np.sqrt(grid.xi_abs2), s, "|xi|")], NormSpec("Sobolev3D", (s,)))


def aniso_hs_sigma(u, s: float, sigma: float) -> NormValue:
    """Norm with weight ``|xi_h|^{2s} |xi_3|^{2 sigma}``."""
    grid, _ = _stack(u)
    factors = [(np.sqrt(grid.xi_h2), s, "|xi_h|"), (grid.xi[2], sigma, "xi_3")]
    return _quadratic(u, factors, NormSpec("AnisoHsSigma", (s, sigma)))


def aniso_h3(u, s1: float, s2: float, s3: float) -> NormValue:
    """Norm with weight ``|xi_1|^{2 s1} |xi_2|^{2 s2} |xi_3|^{2 s3}``."""
    grid, _ = _stack(u)
    factors = [(grid.xi[0], s1, "xi_1"), (grid.xi[1], s2, "xi_2"), (grid.xi[2], s3, "xi_3")]
    return _quadratic(u, factors, NormSpec("AnisoH3", (s1, s2, s3)))


def _check_lebesgue(x) -> float:
    x = float(x)
    if not x >= 1:
        raise InvalidIndexError(f"Lebesgue index must be >= 1, got {x}")
    return x


def _lp_reduce(a: np.ndarray, p: float, axes, cell: float) -> np.ndarray:
    if p == math.inf:
        return a.max(axis=axes)
    return (cell * (a**p).sum(axis=axes)) ** (1.0 / p)


def mixed_lebesgue(u, p: float, q: float, order: str = "h-outer", grid: Grid | None = None) -> NormValue:
    """``L^p_h L^q_v`` (order ``h-outer``) or ``L^q_v L^p_h`` (order ``v-outer``).

    Uniform-grid Riemann sums, which are the trapezoid rule on the periodic box;
    infinite indices are grid maxima.  ``u`` may also be a raw physical array
    (scalar of shape grid.shape or vector of shape (3,)+grid.shape).
    """
    p, q = _check_lebesgue(p), _check_lebesgue(q)
    if order not in ("h-outer", "v-outer"):
        raise InvalidIndexError(f"order must be 'h-outer' or 'v-outer', got {order!r}")
    if isinstance(u, (SpectralField, VelocityField)):
        grid = u.grid
        phys = u.to_physical()
    else:
        if grid is None:
            raise TypeError("grid is required for physical arrays")
        phys = np.asarray(u, dtype=float)
    a = np.sqrt((phys**2).sum(axis=0)) if phys.ndim == 4 else np.abs(phys)
    dx1, dx2, dx3 = grid.spacing
    if order == "h-outer":
        inner = _lp_reduce(a, q, 2, dx3)
        value = _lp_reduce(inner, p, (0, 1), dx1 * dx2)
    else:
        inner = _lp_reduce(a, p, (0, 1), dx1 * dx2)
        value = _lp_reduce(inner, q, 0, dx3)
    return NormValue(float(value), NormSpec("MixedLpLq", (p, q, order)))


def slice_hs_squared(slices: np.ndarray, grid: Grid, s: float) -> np.ndarray:
    """Squared 2D ``H^s_h`` norms of per-slice coefficients.

    ``slices`` holds 2D coefficients ``sum_{x_h} f e^{-i xi_h x_h}`` with shape
    (ncomp, n1, n2, m) for any number ``m`` of slices.
    """
    w, _ = _power(np.sqrt(grid.xi_h2), 2.0 * s)
    area = grid.L1 * grid.L2 / float(grid.n1 * grid.n2) ** 2
    return area * (w * (np.abs(slices) ** 2).sum(axis=0)).sum(axis=(0, 1))


def horizontal_slices(u) -> np.ndarray:
    """Per-slice 2D coefficients, shape (ncomp, n1, n2, n3)."""
    _, c = _stack(u)
    return ifftn(c, axes=(-1,))


def lqv_hsh(u, q, s: float, tol: float = EXCLUDED_MASS_TOL) -> NormValue:
    """``L^q_v H^s_h`` with q in {2, inf}: horizontal norm per slice, then L^q in x3."""
    grid, c = _stack(u)
    q = math.inf if q in ("inf", math.inf) else float(q)
    if q not in (2.0, math.inf):
        raise InvalidIndexError(f"q must be 2 or inf, got {q}")
    spec = NormSpec("LqvHsh", (q, s))
    mass = (np.abs(c) ** 2).sum(axis=0)
    total = mass.sum()
    flat = np.broadcast_to(grid.xi_h2 == 0, grid.shape)
    frac = float(mass[flat].sum() / total) if total > 0 and s != 0 else 0.0
    if s < 0 and frac > tol:
        raise MeaninglessNormError(f"LqvHsh with s={s}: {frac:.3e} of the mass has zero horizontal frequency")
    per_slice = slice_hs_squared(horizontal_slices(u), grid, s)
    if q == 2.0:
        value = math.sqrt(grid.spacing[2] * float(per_slice.sum()))
    else:
        value = math.sqrt(float(per_slice.max()))
    return NormValue(value, spec, min(max(frac, 0.0), 1.0))


def default_t_grid() -> np.ndarray:
    return np.logspace(-4.0, 2.0, 49)


def heat_sup_profile(u, t_grid: Sequence[float]) -> np.ndarray:
    """``max_x |e^{t Delta} u|`` for each t, with the mean mode removed."""
    grid, c = _stack(u)
    c = c.copy()
    c[:, 0, 0, 0] = 0.0
    k2 = grid.xi_abs2
    out = np.empty(len(t_grid))
    for i, t in enumerate(t_grid):
        phys = ifftn(c * np.exp(-t * k2), axes=(1, 2, 3)).real
        out[i] = np.sqrt((phys**2).sum(axis=0)).max()
    return out


def besov_heat(u, variant: str = "Cminus1", t_grid: Sequence[float] | None = None) -> NormValue:
    """Heat-semigroup characterisation of the two endpoint Besov norms.

    ``Cminus1``: ``max_t t^{1/2} |e^{t Delta} u|_inf`` over ``t_grid``.
    ``Minus1Infty2``: ``(int |e^{t Delta} u|_inf^2 dt)^{1/2}`` by the trapezoid
    rule in ``log t`` across ``t_grid``.
    """
    t = default_t_grid() if t_grid is None else np.asarray(t_grid, dtype=float)
    if t.size == 0:
        raise ValueError("t_grid is empty")
    if np.any(t <= 0) or np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must be positive and strictly increasing")
    grid, c = _stack(u)
    mass = (np.abs(c) ** 2).sum(axis=0)
    total = mass.sum()
    excluded = float(mass[0, 0, 0] / total) if total > 0 else 0.0
    prof = heat_sup_profile(u, t)
    if variant == "Cminus1":
        value = float((np.sqrt(t) * prof).max())
        spec = NormSpec("BesovCminus1")
    elif variant == "Minus1Infty2":
        integrand = prof**2 * t
        value = math.sqrt(float(trapezoid(integrand, np.log(t)))) if t.size > 1 else 0.0
        spec = NormSpec("BesovMinus1Infty2")
    else:
        raise NormSpecError(f"unknown Besov variant {variant!r}")
    return NormValue(value, spec, min(max(excluded, 0.0), 1.0))


# --------------------------------------------------------------------------- spec strings

GRAMMAR = (
    "norm spec grammar: H3:s | Haniso:s,sigma | Htri:s1,s2,s3 | LpLq:p,q[,h-outer|v-outer] | "
    "LqvHsh:q,s | Besov:Cminus1 | Besov:Minus1Infty2   (p, q may be 'inf')"
)

_NUM = r"[-+]?(?:\d+\.?\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|inf)"


def _num(tok: str) -> float:
    tok = tok.strip()
    if not re.fullmatch(_NUM, tok):
        raise NormSpecError(f"not a number: {tok!r}; {GRAMMAR}")
    return math.inf if tok == "inf" else float(tok)


def parse_norm_spec(text: str) -> NormSpec:
    if ":" not in text:
        raise NormSpecError(f"missing ':' in {text!r}; {GRAMMAR}")
    head, _, rest = text.strip().partition(":")
    args = [a.strip() for a in rest.split(",")] if rest.strip() else []
    if head == "H3" and len(args) == 1:
        return NormSpec("Sobolev3D", (_num(args[0]),))
    if head == "Haniso" and len(args) == 2:
        return NormSpec("AnisoHsSigma", tuple(_num(a) for a in args))
    if head == "Htri" and len(args) == 3:
        return NormSpec("AnisoH3", tuple(_num(a) for a in args))
    if head == "LpLq" and len(args) in (2, 3):
        order = args[2] if len(args) == 3 else "h-outer"
        if order not in ("h-outer", "v-outer"):
            raise NormSpecError(f"bad order {order!r}; {GRAMMAR}")
        return NormSpec("MixedLpLq", (_num(args[0]), _num(args[1]), order))
    if head == "LqvHsh" and len(args) == 2:
        return NormSpec("LqvHsh", (_num(args[0]), _num(args[1])))
    if head == "Besov" and args in (["Cminus1"], ["Minus1Infty2"]):
        return NormSpec("Besov" + args[0])
    raise NormSpecError(f"cannot parse {text!r}; {GRAMMAR}")


def evaluate(spec: NormSpec | str, u, t_grid=None) -> NormValue:
    if isinstance(spec, str):
        spec = parse_norm_spec(spec)
    p = spec.params
    if spec.kind == "Sobolev3D":
        return sobolev3(u, *p)
    if spec.kind == "AnisoHsSigma":
        return aniso_hs_sigma(u, *p)
    if spec.kind == "AnisoH3":
        return aniso_h3(u, *p)
    if spec.kind == "MixedLpLq":
        return mixed_lebesgue(u, *p)
    if spec.kind == "LqvHsh":
        return lqv_hsh(u, *p)
    if spec.kind == "BesovCminus1":
        return besov_heat(u, "Cminus1", t_grid)
    return besov_heat(u, "Minus1Infty2", t_grid)
