"""Initial-data families and the two spectral decompositions.

Profiles are periodised Gaussians ``a * exp(-|x - c|^2 / w^2)`` evaluated with
minimum-image distances.  Horizontal velocity fields are always built as
``curl_h`` of a stream function in spectral space, so their divergence is zero
up to rounding.

Families indexed by a small parameter ``eps`` that stretch the data
vertically are emitted on the vertically scaled box ``grid.scaled_vertically(eps)``;
the samples then coincide with those of the unscaled profile on ``grid``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import (
    BoxTooShortError,
    CertificateViolationError,
    HypothesisViolationError,
    ResolutionError,
)
from .norms import lqv_hsh, sobolev3
from .spectral import (
    TWO_PI,
    Grid,
    VelocityField,
    fftn,
    horizontal_leray_coeffs,
    leray_coeffs,
    slice_coeffs,
)

BOUNDARY_TOL = 1e-10
HYPOTHESIS_TOL = 1e-10
CERTIFICATE_TOL = 1e-8
_CONE_SLACK = 1e-12

FAMILIES = ("oscillating", "slow-varying")


@dataclass(frozen=True)
class ProfileSpec:
    """Parameters of the Gaussian profiles ``phi(x_h)`` and ``phi0(x_3)``.

    ``phi_width=None`` means one tenth of the horizontal box length.
    """

    family: str = "oscillating"
    eps: float = 0.25
    amplitude: float = 1.0
    phi_width: float | None = None
    phi_center: tuple[float, float] = (0.0, 0.0)
    phi0_width: float = 1.0
    phi0_center: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if not 0.0 < self.eps < 1.0:
            raise ValueError(f"eps must lie in (0, 1), got {self.eps}")
        if self.phi_width is not None and self.phi_width <= 0:
            raise ValueError("phi_width must be positive")
        if self.phi0_width <= 0:
            raise ValueError("phi0_width must be positive")

    def width(self, grid: Grid) -> float:
        return self.phi_width if self.phi_width is not None else grid.L1 / 10.0


@dataclass(frozen=True)
class DecompositionResult:
    part_a: VelocityField
    part_b: VelocityField
    eps: float
    certificate: float
    worst_mode: tuple | None = None

    def reconstruct(self) -> VelocityField:
        return VelocityField.from_coeffs(self.part_a.grid, self.part_a.coeffs + self.part_b.coeffs)


# --------------------------------------------------------------------------- profiles


def periodic_gaussian(x: np.ndarray, center: float, width: float, length: float) -> np.ndarray:
    d = (x - center + 0.5 * length) % length - 0.5 * length
    return np.exp(-((d / width) ** 2))


def _edge_value(width: float, half_length: float) -> float:
    return math.exp(-((half_length / width) ** 2))


def horizontal_profile(grid: Grid, spec: ProfileSpec) -> np.ndarray:
    """``phi(x_h)`` on the (n1, n2) horizontal grid."""
    w = spec.width(grid)
    if _edge_value(w, 0.5 * min(grid.L1, grid.L2)) >= BOUNDARY_TOL:
        raise BoxTooShortError(f"horizontal profile of width {w} does not fit in the box {grid.L1}x{grid.L2}")
    g1 = periodic_gaussian(grid.coords(0), spec.phi_center[0], w, grid.L1)
    g2 = periodic_gaussian(grid.coords(1), spec.phi_center[1], w, grid.L2)
    return spec.amplitude * g1[:, None] * g2[None, :]


def snap_eps(eps: float, L3: float) -> tuple[float, int]:
    """Nearest ``eps' = L3 / (2 pi m)`` making ``cos(x3/eps')`` box-periodic."""
    m = int(round(L3 / (TWO_PI * eps)))
    if m < 1:
        raise ResolutionError(f"box height {L3} cannot hold one period of cos(x3/eps) for eps={eps}")
    return L3 / (TWO_PI * m), m


def curl_h(psi: np.ndarray, grid: Grid) -> VelocityField:
    """``(-d2 psi, d1 psi, 0)`` from stream-function coefficients."""
    x1, x2, _ = grid.xi
    zero = np.zeros(grid.shape, dtype=np.complex128)
    return VelocityField.from_coeffs(grid, np.stack([-1j * x2 * psi, 1j * x1 * psi, zero]), divfree=True)


def _stream(grid: Grid, phi_h: np.ndarray, vertical: np.ndarray) -> np.ndarray:
    return fftn(phi_h[:, :, None] * vertical[None, None, :])


def gen_oscillating(spec: ProfileSpec, grid: Grid) -> VelocityField:
    """``(1/eps) cos(x3/eps) (-d2 phi, d1 phi, 0)`` with eps snapped to the box."""
    eps, m = snap_eps(spec.eps, grid.L3)
    if 4 * m > grid.n3:
        raise ResolutionError(f"eps={eps:.6g} needs n3 >= {4 * m} (have {grid.n3})")
    vertical = np.cos(grid.coords(2) / eps) / eps
    return curl_h(_stream(grid, horizontal_profile(grid, spec), vertical), grid)


def gen_slow_varying(spec: ProfileSpec, grid: Grid) -> VelocityField:
    """``phi0(eps x3) (-d2 phi(x_h), d1 phi(x_h), 0)``."""
    eps = spec.eps
    if _edge_value(spec.phi0_width, 0.5 * eps * grid.L3) >= BOUNDARY_TOL:
        need = 2.0 * spec.phi0_width * math.sqrt(-math.log(BOUNDARY_TOL)) / eps
        raise BoxTooShortError(f"slow profile needs L3 >= {need:.4g} at eps={eps}, box has {grid.L3}")
    vertical = periodic_gaussian(eps * grid.coords(2), spec.phi0_center, spec.phi0_width, eps * grid.L3)
    return curl_h(_stream(grid, horizontal_profile(grid, spec), vertical), grid)


def _horizontal_pair(v0h):
    if isinstance(v0h, VelocityField):
        return v0h.u1, v0h.u2
    a, b = v0h
    return a, b


def layered_example(
    grid: Grid,
    *,
    zero_slice: bool = True,
    amplitude: float = 1.0,
    w_amplitude: float = 1.0,
    width: float | None = None,
    period: float | None = None,
):
    """Reference ``(v0h, w0)`` pair on ``grid`` for :func:`gen_thm12_data`.

    ``v0h = curl_h phi(x_h) * g(x3)`` and ``w0 = (grad_h chi * b', -Delta_h chi * b)``
    with ``chi = phi`` and ``b = sin``; ``g = sin`` when ``zero_slice`` (so that
    v0h and w0^3 vanish on x3 = 0), ``g = cos`` otherwise.  Both vertical
    profiles have period ``period`` (default ``L3``).  Since ``w0^h`` is a horizontal gradient,
    ``P_h w0^h = 0``, and every nonzero mode has ``|xi_3| <= |xi_h|``.
    """
    spec = ProfileSpec(phi_width=width)
    phi = horizontal_profile(grid, spec)
    z = TWO_PI * grid.coords(2) / (grid.L3 if period is None else period)
    g = np.sin(z) if zero_slice else np.cos(z)
    v = curl_h(_stream(grid, amplitude * phi, g), grid)
    x1, x2, x3 = grid.xi
    a = _stream(grid, w_amplitude * phi, np.sin(z))
    w = np.stack([-x1 * x3 * a, -x2 * x3 * a, grid.xi_h2 * a])
    w0 = VelocityField.from_coeffs(grid, w, divfree=True)
    return (v.u1, v.u2), w0


def gen_thm12_data(v0h, w0: VelocityField, eps: float, *, zero_slice: bool = False) -> VelocityField:
    """``(v0h + eps w0h, w0^3)(x1, x2, eps x3)`` on the vertically scaled box.

    ``v0h`` (a pair of SpectralFields or the horizontal part of a VelocityField)
    and ``w0`` live on a common grid; the result lives on
    ``grid.scaled_vertically(eps)`` and shares their samples.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    a, b = _horizontal_pair(v0h)
    grid = a.grid
    if w0.grid != grid or b.grid != grid:
        raise HypothesisViolationError("v0h and w0 must share a grid")
    x1, x2, _ = grid.xi
    dh = np.abs(x1 * a.coeffs + x2 * b.coeffs).max()
    scale = (np.sqrt(grid.xi_h2) * np.sqrt(np.abs(a.coeffs) ** 2 + np.abs(b.coeffs) ** 2)).max()
    if scale > 0 and dh > HYPOTHESIS_TOL * scale:
        raise HypothesisViolationError(f"v0h is not horizontally divergence-free (residual {dh / scale:.3e})")
    res = w0.divergence_residual()
    if res > HYPOTHESIS_TOL:
        raise HypothesisViolationError(f"w0 is not divergence-free (residual {res:.3e})")
    if zero_slice:
        ref = max(np.abs(a.coeffs).sum(), np.abs(b.coeffs).sum(), np.abs(w0.u3.coeffs).sum(), 1e-300)
        on_slice = max(np.abs(slice_coeffs(c)).max() for c in (a.coeffs, b.coeffs, w0.u3.coeffs))
        if on_slice > HYPOTHESIS_TOL * ref:
            raise HypothesisViolationError("zero-slice condition v0h(.,0) = w0^3(.,0) = 0 does not hold")
    w = w0.coeffs
    out = np.stack([a.coeffs + eps * w[0], b.coeffs + eps * w[1], w[2]])
    scaled = grid.scaled_vertically(eps)
    return VelocityField.from_coeffs(scaled, out, divfree=True)


# --------------------------------------------------------------------------- cones


def cone_masks(grid: Grid, eps: float):
    """``(vertical, horizontal)`` boolean masks.

    vertical: ``|xi_h| <= eps |xi_3|`` (boundary included), horizontal:
    ``|xi_3| <= eps |xi_h|`` minus the vertical cone.  The mean mode belongs to
    neither and Nyquist planes are excluded.
    """
    x3sq = np.broadcast_to(grid.xi[2] ** 2, grid.shape)
    kh2 = np.broadcast_to(grid.xi_h2, grid.shape)
    slack = 1.0 + _CONE_SLACK
    vertical = (kh2 <= eps**2 * x3sq * slack) & grid.keep
    horizontal = (x3sq <= eps**2 * kh2 * slack) & grid.keep & ~vertical
    vertical = vertical.copy()
    vertical[0, 0, 0] = False
    horizontal[0, 0, 0] = False
    return vertical, horizontal


def _random_in_mask(rng: np.random.Generator, grid: Grid, mask: np.ndarray, power: float) -> np.ndarray:
    noise = fftn(rng.standard_normal((3,) + grid.shape), axes=(1, 2, 3))
    amp = (1.0 + grid.xi_abs2) ** (-0.5 * power)
    return leray_coeffs(noise * amp * mask, grid)


def gen_cone_supported(
    seed: int,
    eps: float,
    s_range: Sequence[float] = (0.0, 0.5),
    grid: Grid | None = None,
    *,
    power: float = 2.0,
) -> VelocityField:
    """Random divergence-free field with spectrum in ``{|xi_3| <= eps |xi_h|}``.

    ``grid=None`` uses the 16^3 cube scaled vertically by ``1/eps``.  The field is
    normalised so that the largest ``L^inf_v H^s_h`` norm over ``s_range`` is 1.
    Leray projection acts mode by mode, so masking once before projecting keeps
    the support exact.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    grid = Grid.cube(16).scaled_vertically(eps) if grid is None else grid
    _, mask = cone_masks(grid, eps)
    if not (mask & (np.broadcast_to(grid.xi[2], grid.shape) != 0)).any():
        raise ResolutionError(f"the cone |xi_3| <= {eps}|xi_h| holds no vertically varying mode on this grid")
    c = _random_in_mask(np.random.default_rng(seed), grid, mask, power)
    u = VelocityField.from_coeffs(grid, c)
    scale = max(lqv_hsh(u, math.inf, s).value for s in s_range)
    return VelocityField.from_coeffs(grid, c / scale, divfree=True)


def gen_cone_union(seed: int, eps: float, grid: Grid, *, power: float = 2.0, vertical_weight: float = 1.0) -> VelocityField:
    """Random field supported in the union of both cones, unit ``H^{1/2}`` norm."""
    vertical, horizontal = cone_masks(grid, eps)
    if not (vertical | horizontal).any():
        raise ResolutionError("both cones are empty on this grid")
    weight = np.where(vertical, vertical_weight, 1.0) * (vertical | horizontal)
    c = _random_in_mask(np.random.default_rng(seed), grid, weight, power)
    u = VelocityField.from_coeffs(grid, c)
    n = sobolev3(u, 0.5).value
    if n == 0:
        raise ResolutionError("drawn field vanished; grid too coarse for the cones")
    return VelocityField.from_coeffs(grid, c / n, divfree=True)


def _mass_outside(c: np.ndarray, allowed: np.ndarray) -> float:
    mass = (np.abs(c) ** 2).sum(axis=0)
    total = mass.sum()
    return float(mass[~allowed].sum() / total) if total > 0 else 0.0


def decompose_cones(u0: VelocityField, eps: float) -> DecompositionResult:
    """Split into the vertical-cone part (``part_a``) and horizontal-cone part (``part_b``).

    ``certificate`` is the fraction of the input's ell^2 mass outside both cones.
    """
    grid = u0.grid
    vertical, horizontal = cone_masks(grid, eps)
    c = u0.coeffs
    outside = _mass_outside(c, vertical | horizontal)
    if outside > HYPOTHESIS_TOL:
        raise HypothesisViolationError(f"{outside:.3e} of the mass lies outside both cones (eps={eps})")
    flag = u0.divfree
    a = VelocityField.from_coeffs(grid, c * vertical, divfree=flag)
    b = VelocityField.from_coeffs(grid, c * horizontal, divfree=flag)
    return DecompositionResult(a, b, eps, outside)


def horizontal_certificate(w: np.ndarray, eps: float):
    """Worst ``|w_hat^h| / (eps |w_hat^3|)`` and the mode where it occurs."""
    wh = np.sqrt(np.abs(w[0]) ** 2 + np.abs(w[1]) ** 2)
    w3 = np.abs(w[2])
    scale = max(wh.max(), w3.max())
    if scale == 0:
        return 0.0, None
    live = w3 > 1e-13 * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(live, wh / (eps * np.where(live, w3, 1.0)), 0.0)
    stray = ~live & (wh > 1e-10 * scale)
    ratio = np.where(stray, np.inf, ratio)
    idx = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
    return float(ratio[idx]), tuple(int(i) for i in idx)


def decompose_horizontal(v_eps0: VelocityField, eps: float) -> DecompositionResult:
    """``part_a = (P_h v^h, 0)``, ``part_b = v - part_a``.

    Requires a divergence-free input with spectrum in ``{|xi_3| <= eps |xi_h|}``.
    ``certificate`` is the worst per-mode ratio ``|w_hat^h| / (eps |w_hat^3|)``.
    """
    grid = v_eps0.grid
    res = v_eps0.divergence_residual()
    if res > HYPOTHESIS_TOL:
        raise HypothesisViolationError(f"input is not divergence-free (residual {res:.3e})")
    _, cone = cone_masks(grid, eps)
    c = v_eps0.coeffs
    outside = _mass_outside(c, cone)
    if outside > HYPOTHESIS_TOL:
        raise HypothesisViolationError(f"{outside:.3e} of the mass lies outside |xi_3| <= {eps}|xi_h|")
    p1, p2 = horizontal_leray_coeffs(c[0], c[1], grid)
    a = np.stack([p1, p2, np.zeros_like(p1)])
    w = c - a
    ratio, mode = horizontal_certificate(w, eps)
    if ratio > 1.0 + CERTIFICATE_TOL:
        raise CertificateViolationError(
            f"|w^h| <= eps |w^3| fails at {grid.mode_label(mode)} with ratio {ratio:.6g}", mode=mode, ratio=ratio
        )
    part_a = VelocityField.from_coeffs(grid, a, divfree=True)
    part_b = VelocityField.from_coeffs(grid, w, divfree=True)
    return DecompositionResult(part_a, part_b, eps, ratio, mode)
