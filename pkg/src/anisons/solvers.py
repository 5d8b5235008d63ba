"""Integrating-factor Runge-Kutta solvers for the four evolution systems.

All systems have the form ``du/dt = -K u + N(u, t)`` with a diagonal
dissipative symbol ``K``.  The stiff part is integrated exactly (Lawson's
integrating factor) and ``N`` by classical RK2/RK4 stages.  Nonlinear terms
are evaluated in divergence form ``d_j(a_j b_i)`` with both factors and the
result truncated by the 2/3 rule, so every product is exact on retained modes.

Internally states use the real-FFT half spectrum; samples are handed out as
full-spectrum :class:`VelocityField` objects.  The cumulative dissipation is
an extra ODE variable integrated with the same stages, which keeps the energy
identity at the order of the scheme.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.fft as sfft

from .exceptions import BlowupSuspectedError, CFLError, HypothesisViolationError, TrajectoryError
from .norms import sobolev3
from .spectral import FFT_WORKERS, Grid, VelocityField, half_to_full

SCHEMES = ("IF-RK2", "IF-RK4")
_TIME_TOL = 1e-12


@dataclass(frozen=True)
class SolveConfig:
    """Time-stepping parameters; viscosity is fixed to 1."""

    dt: float = 0.01
    t_end: float = 4.0
    scheme: str = "IF-RK4"
    dealias: bool = True
    stride: int = 1
    cfl: float = 0.5
    viscosity: float = field(default=1.0, init=False)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.t_end > 0:
            raise ValueError(f"t_end must be positive, got {self.t_end}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if int(self.stride) != self.stride or self.stride < 1:
            raise ValueError("stride must be a positive integer")
        ratio = self.t_end / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ValueError(f"t_end={self.t_end} is not a multiple of dt={self.dt}")

    @property
    def nsteps(self) -> int:
        return int(round(self.t_end / self.dt))

    def sample_steps(self) -> np.ndarray:
        steps = list(range(0, self.nsteps + 1, self.stride))
        if steps[-1] != self.nsteps:
            steps.append(self.nsteps)
        return np.array(steps)


# --------------------------------------------------------------------------- layout


def _rfft(a, axes):
    return sfft.rfftn(a, axes=axes, workers=FFT_WORKERS)


def _irfft(a, shape, axes):
    return sfft.irfftn(a, s=shape, axes=axes, workers=FFT_WORKERS)


class _Half3D:
    """Wavenumbers, masks and quadrature weights for the 3D rfft layout."""

    axes = (-3, -2, -1)

    def __init__(self, grid: Grid):
        self.grid = grid
        n3 = grid.n3
        self.h = n3 // 2 + 1
        self.x1, self.x2 = grid.xi[0], grid.xi[1]
        self.x3 = grid.xi[2][..., : self.h]
        self.xi = (self.x1, self.x2, self.x3)
        self.kh2 = self.x1**2 + self.x2**2
        self.k2 = self.kh2 + self.x3**2
        self.keep = grid.keep[..., : self.h]
        self.dealias = grid.dealias[..., : self.h] & self.keep
        w = np.full(self.h, 2.0)
        w[0] = 1.0
        w[-1] = 0.0
        self.weight = w * grid.parseval

    def to_phys(self, c):
        return _irfft(c, self.grid.shape, self.axes)

    def to_spec(self, a):
        return _rfft(a, self.axes)

    def norm2(self, c, symbol=None):
        m = np.abs(c) ** 2
        if m.ndim == 4:
            m = m.sum(axis=0)
        if symbol is not None:
            m = m * symbol
        return float((m * self.weight).sum())

    def leray(self, c):
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(self.k2 > 0, 1.0 / self.k2, 0.0)
        dot = (self.x1 * c[0] + self.x2 * c[1] + self.x3 * c[2]) * inv
        return np.stack([c[0] - self.x1 * dot, c[1] - self.x2 * dot, c[2] - self.x3 * dot])


def _courant(phys, spacing, dt, axes=(0, 1, 2)):
    return max(float(np.abs(phys[j]).max()) * dt / spacing[j] for j in axes)


# --------------------------------------------------------------------------- trajectory


@dataclass
class Trajectory:
    """Sampled solution plus per-step diagnostics.

    ``data`` holds half-spectrum coefficient stacks of shape (3, n1, n2, n3//2+1);
    :meth:`field` rebuilds the full :class:`VelocityField`.
    """

    grid: Grid
    times: np.ndarray
    data: list
    step_times: np.ndarray
    step_energy: np.ndarray
    step_dissipation: np.ndarray
    sample_steps: np.ndarray | None = None
    slice_energy: np.ndarray | None = None
    slice_dissipation: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) != len(self.data):
            raise TrajectoryError("times and samples differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise TrajectoryError("sample times must be strictly increasing")

    def __len__(self):
        return len(self.data)

    def half(self, i: int) -> np.ndarray:
        return self.data[i]

    def coeffs(self, i: int) -> np.ndarray:
        return half_to_full(self.data[i], self.grid.shape)

    def field(self, i: int) -> VelocityField:
        u = VelocityField.from_coeffs(self.grid, self.coeffs(i))
        return u.with_divfree(True) if u.divergence_residual() <= VelocityField.DIVFREE_TOL else u

    @property
    def fields(self) -> list[VelocityField]:
        return [self.field(i) for i in range(len(self))]

    @property
    def samples(self):
        return [(float(t), self.field(i)) for i, t in enumerate(self.times)]

    def physical(self, i: int) -> np.ndarray:
        return _Half3D(self.grid).to_phys(self.data[i])

    def sample_energy(self) -> np.ndarray:
        hg = _Half3D(self.grid)
        return np.array([0.5 * hg.norm2(c) for c in self.data])

    def sample_dissipation(self) -> np.ndarray:
        if self.sample_steps is None:
            return np.full(len(self), np.nan)
        return self.step_dissipation[self.sample_steps]

    def map_samples(self, fn: Callable[[VelocityField], float]) -> np.ndarray:
        return np.array([fn(self.field(i)) for i in range(len(self))])

    @property
    def tail_energy(self) -> float:
        return float(self.step_energy[-1]) if len(self.step_energy) else float("nan")


def _check_aligned(*trajs):
    ref = trajs[0]
    for tr in trajs[1:]:
        if len(tr) != len(ref) or not np.allclose(tr.times, ref.times, rtol=0, atol=_TIME_TOL * max(1.0, ref.times[-1])):
            raise TrajectoryError("trajectories have different sample times")
        if tr.grid.shape != ref.grid.shape:
            raise TrajectoryError("trajectories live on grids of different shapes")


# --------------------------------------------------------------------------- engine


class _System:
    """Interface used by :func:`_integrate`; subclasses fill in the physics."""

    symbol: np.ndarray  # dissipative symbol K (broadcastable to the state)

    def rhs(self, c, t):  # returns N(c, t)
        raise NotImplementedError

    def dissipation(self, c):
        raise NotImplementedError

    def energy(self, c):
        raise NotImplementedError

    courant: float = 0.0

    def offender(self):
        return None


def _integrate(system: _System, c0: np.ndarray, cfg: SolveConfig, store: Callable):
    dt = cfg.dt
    E = np.exp(-system.symbol * dt)
    E2 = np.exp(-system.symbol * (0.5 * dt))
    nsteps = cfg.nsteps
    sample_steps = cfg.sample_steps()
    sample_set = set(int(s) for s in sample_steps)
    c = c0
    D = np.zeros_like(np.asarray(system.dissipation(c), dtype=float))
    energies = [system.energy(c)]
    diss = [D.copy()]
    samples = [store(c, 0)]
    times = [0.0]
    for step in range(nsteps):
        t = step * dt
        k1 = system.rhs(c, t)
        if system.courant > cfg.cfl:
            raise CFLError(
                f"CFL number {system.courant:.3g} exceeds {cfg.cfl} at step {step} (t={t:.6g})",
                step,
                system.offender(),
            )
        d1 = system.dissipation(c)
        if cfg.scheme == "IF-RK4":
            c2 = E2 * (c + (0.5 * dt) * k1)
            k2 = system.rhs(c2, t + 0.5 * dt)
            c3 = E2 * c + (0.5 * dt) * k2
            k3 = system.rhs(c3, t + 0.5 * dt)
            c4 = E * c + dt * (E2 * k3)
            k4 = system.rhs(c4, t + dt)
            new = E * c + (dt / 6.0) * (E * k1 + 2.0 * E2 * (k2 + k3) + k4)
            D = D + (dt / 6.0) * (d1 + 2.0 * system.dissipation(c2) + 2.0 * system.dissipation(c3) + system.dissipation(c4))
        else:
            c1 = E * (c + dt * k1)
            k2 = system.rhs(c1, t + dt)
            new = E * (c + (0.5 * dt) * k1) + (0.5 * dt) * k2
            D = D + (0.5 * dt) * (d1 + system.dissipation(c1))
        if not np.isfinite(new).all():
            raise BlowupSuspectedError(f"non-finite state at t={t + dt:.6g}", t + dt, _bad_slice(new))
        c = new
        energies.append(system.energy(c))
        diss.append(D.copy())
        if step + 1 in sample_set:
            samples.append(store(c, step + 1))
            times.append((step + 1) * dt)
    step_times = np.arange(nsteps + 1) * dt
    return np.array(times), samples, step_times, np.array(energies), np.array(diss), sample_steps


def _bad_slice(c):
    bad = ~np.isfinite(c)
    if c.ndim >= 1 and bad.any():
        idx = np.argwhere(bad)[0]
        return int(idx[-1])
    return None


# --------------------------------------------------------------------------- NS3D


class _NS3D(_System):
    def __init__(self, grid: Grid, cfg: SolveConfig):
        self.hg = _Half3D(grid)
        self.cfg = cfg
        self.mask = self.hg.dealias if cfg.dealias else self.hg.keep
        self.symbol = self.hg.k2 * cfg.viscosity
        self.spacing = grid.spacing

    def rhs(self, c, t):
        hg = self.hg
        u = hg.to_phys(c * self.mask)
        self.courant = _courant(u, self.spacing, self.cfg.dt)
        a = np.zeros_like(c)
        for i in range(3):
            for j in range(i, 3):
                p = hg.to_spec(u[i] * u[j])
                a[i] += 1j * hg.xi[j] * p
                if j != i:
                    a[j] += 1j * hg.xi[i] * p
        return -hg.leray(a) * self.mask

    def dissipation(self, c):
        return self.hg.norm2(c, self.hg.k2)

    def energy(self, c):
        return 0.5 * self.hg.norm2(c)


def _half_of(u: VelocityField) -> np.ndarray:
    h = u.grid.n3 // 2 + 1
    return np.ascontiguousarray(u.coeffs[..., :h])


def _run(system, c0, grid, cfg, **extra):
    times, data, st, en, di, ss = _integrate(system, c0, cfg, lambda c, step: c.copy())
    return Trajectory(grid, times, data, st, en, di, sample_steps=ss, **extra)


def solve_ns3d(u0: VelocityField, cfg: SolveConfig) -> Trajectory:
    """Incompressible Navier-Stokes with unit viscosity."""
    res = u0.divergence_residual()
    if res > 1e-9:
        raise HypothesisViolationError(f"initial velocity is not divergence-free (residual {res:.3e})")
    c0 = _half_of(u0)
    traj = _run(_NS3D(u0.grid, cfg), c0, u0.grid, cfg)
    traj.data[0] = c0
    traj.info["system"] = "ns3d"
    return traj


# --------------------------------------------------------------------------- NS2D stack


class _Stack2D(_System):
    """2D Navier-Stokes on every x3 slice at once.

    State layout: (2, n1, n2//2+1, m) with the horizontal rfft on axes (-3, -2);
    the last axis only labels slices.
    """

    axes = (-3, -2)

    def __init__(self, grid: Grid, m: int, cfg: SolveConfig):
        self.cfg = cfg
        self.shape_h = (grid.n1, grid.n2)
        h2 = grid.n2 // 2 + 1
        self.x1 = grid.wavenumbers(0)[:, None, None]
        self.x2 = grid.wavenumbers(1)[None, :h2, None]
        self.kh2 = self.x1**2 + self.x2**2
        keep = (np.abs(grid.integers(0)) != grid.n1 // 2)[:, None, None] & (
            np.abs(grid.integers(1)[:h2]) != grid.n2 // 2
        )[None, :, None]
        deal = (np.abs(grid.integers(0)) < grid.n1 / 3)[:, None, None] & (
            np.abs(grid.integers(1)[:h2]) < grid.n2 / 3
        )[None, :, None]
        self.keep = keep
        self.mask = (deal & keep) if cfg.dealias else keep
        w = np.full(h2, 2.0)
        w[0] = 1.0
        w[-1] = 0.0
        self.weight = (w * grid.L1 * grid.L2 / float(grid.n1 * grid.n2) ** 2)[None, :, None]
        self.symbol = self.kh2 * cfg.viscosity
        self.spacing = grid.spacing
        self.m = m
        self.slice_courant = np.zeros(m)

    def to_phys(self, c):
        return _irfft(c, self.shape_h, self.axes)

    def to_spec(self, a):
        return _rfft(a, self.axes)

    def rhs(self, c, t):
        v = self.to_phys(c * self.mask)
        dt = self.cfg.dt
        self.slice_courant = np.maximum(
            np.abs(v[0]).max(axis=(0, 1)) * dt / self.spacing[0], np.abs(v[1]).max(axis=(0, 1)) * dt / self.spacing[1]
        )
        self.courant = float(self.slice_courant.max())
        p11 = self.to_spec(v[0] * v[0])
        p12 = self.to_spec(v[0] * v[1])
        p22 = self.to_spec(v[1] * v[1])
        a1 = 1j * (self.x1 * p11 + self.x2 * p12)
        a2 = 1j * (self.x1 * p12 + self.x2 * p22)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(self.kh2 > 0, 1.0 / self.kh2, 0.0)
        dot = (self.x1 * a1 + self.x2 * a2) * inv
        return -np.stack([a1 - self.x1 * dot, a2 - self.x2 * dot]) * self.mask

    def _slice_norm2(self, c, symbol=None):
        m = (np.abs(c) ** 2).sum(axis=0)
        if symbol is not None:
            m = m * symbol
        return (m * self.weight).sum(axis=(0, 1))

    def dissipation(self, c):
        return self._slice_norm2(c, self.kh2)

    def energy(self, c):
        return 0.5 * self._slice_norm2(c)

    def offender(self):
        return int(np.argmax(self.slice_courant))


def ns2d_slices(vh: np.ndarray, grid: Grid, cfg: SolveConfig):
    """Solve 2D Navier-Stokes independently on each slice of ``vh``.

    ``vh`` holds physical horizontal velocities of shape (2, n1, n2, m) for any
    slice count ``m``; the horizontal box is that of ``grid``.  Returns
    ``(times, samples, step_times, slice_energy, slice_dissipation)`` with
    samples as physical arrays of the same shape as ``vh``.
    """
    vh = np.asarray(vh, dtype=float)
    system = _Stack2D(grid, vh.shape[-1], cfg)
    c0 = system.to_spec(vh)
    times, samples, st, en, di, ss = _integrate(system, c0, cfg, lambda c, step: system.to_phys(c))
    samples[0] = vh.copy()
    return times, samples, st, en, di, ss


def solve_ns2d_stack(v0h, cfg: SolveConfig) -> Trajectory:
    """Independent 2D Navier-Stokes solves, one per horizontal slice.

    ``v0h`` is a pair of SpectralFields or a VelocityField whose third
    component is ignored.  Samples are returned as 3D fields with zero third
    component; ``slice_energy`` and ``slice_dissipation`` have one column per x3.
    """
    a, b = (v0h.u1, v0h.u2) if isinstance(v0h, VelocityField) else v0h
    grid = a.grid
    x1, x2, _ = grid.xi
    dh = np.abs(x1 * a.coeffs + x2 * b.coeffs).max()
    scale = (np.sqrt(grid.xi_h2) * np.sqrt(np.abs(a.coeffs) ** 2 + np.abs(b.coeffs) ** 2)).max()
    if scale > 0 and dh > 1e-9 * scale:
        raise HypothesisViolationError(f"v0h is not horizontally divergence-free (residual {dh / scale:.3e})")
    vh = np.stack([a.to_physical(), b.to_physical()])
    times, samples, st, en, di, ss = ns2d_slices(vh, grid, cfg)
    hg = _Half3D(grid)
    data = []
    for i, v in enumerate(samples):
        if i == 0:
            c = np.stack([a.coeffs, b.coeffs, np.zeros(grid.shape, dtype=np.complex128)])[..., : hg.h]
        else:
            c = hg.to_spec(np.stack([v[0], v[1], np.zeros(grid.shape)]))
        data.append(np.ascontiguousarray(c))
    traj = Trajectory(
        grid,
        times,
        data,
        st,
        en.sum(axis=1) * grid.spacing[2],
        di.sum(axis=1) * grid.spacing[2],
        sample_steps=ss,
        slice_energy=en,
        slice_dissipation=di,
    )
    traj.info["system"] = "ns2d-stack"
    return traj


def rest_trajectory(grid: Grid, t_end: float) -> Trajectory:
    """A fluid at rest on ``[0, t_end]``; the advecting field for pure heat flow."""
    z = np.zeros((3, grid.n1, grid.n2, grid.n3 // 2 + 1), dtype=np.complex128)
    traj = Trajectory(grid, np.array([0.0, float(t_end)]), [z, z], np.array([0.0, float(t_end)]),
                      np.zeros(2), np.zeros(2), sample_steps=np.array([0, 1]))
    traj.info["system"] = "rest"
    return traj


# --------------------------------------------------------------------------- (T) and W


class _Advector:
    """Linear-in-time interpolation of a sampled horizontal advecting field."""

    def __init__(self, traj: Trajectory, grid: Grid, t_end: float, dealias: bool):
        if traj.grid.shape != grid.shape:
            raise TrajectoryError(f"advecting field grid {traj.grid.shape} does not match {grid.shape}")
        tol = _TIME_TOL * max(1.0, t_end)
        if traj.times[0] > tol or traj.times[-1] < t_end - tol:
            raise TrajectoryError(
                f"advecting trajectory covers [{traj.times[0]}, {traj.times[-1]}], need [0, {t_end}]"
            )
        self.traj = traj
        hg = _Half3D(traj.grid)
        self.hg = hg
        self.mask = hg.dealias if dealias else hg.keep
        self._cache: dict[int, np.ndarray] = {}

    def _phys(self, i):
        if i not in self._cache:
            if len(self._cache) > 4:
                self._cache.pop(min(self._cache))
            self._cache[i] = self.hg.to_phys(self.traj.data[i][:2] * self.mask)
        return self._cache[i]

    def __call__(self, t):
        times = self.traj.times
        i = int(np.searchsorted(times, t, side="right")) - 1
        i = min(max(i, 0), len(times) - 1)
        if abs(times[i] - t) <= _TIME_TOL * max(1.0, t) or i == len(times) - 1:
            return self._phys(i)
        theta = (t - times[i]) / (times[i + 1] - times[i])
        return (1.0 - theta) * self._phys(i) + theta * self._phys(i + 1)


class _Transport(_System):
    """``dw/dt + d_j(vbar_j w) = K-dissipation - pressure`` for j = 1, 2.

    ``eps=None`` gives system (T) (full Laplacian, Leray projection); a number
    gives the rescaled system with symbol ``|xi_h|^2 + eps^2 xi_3^2`` and the
    anisotropic pressure ``Q``.
    """

    def __init__(self, grid: Grid, adv: _Advector, cfg: SolveConfig, eps: float | None):
        self.hg = _Half3D(grid)
        self.adv = adv
        self.cfg = cfg
        self.eps = eps
        self.mask = self.hg.dealias if cfg.dealias else self.hg.keep
        hg = self.hg
        self.symbol = (hg.k2 if eps is None else hg.kh2 + eps**2 * hg.x3**2) * cfg.viscosity
        if eps is not None:
            den = hg.kh2 + eps**2 * hg.x3**2
            with np.errstate(divide="ignore", invalid="ignore"):
                self.inv = np.where(den > 0, 1.0 / den, 0.0)
        self.spacing = grid.spacing

    def rhs(self, c, t):
        hg = self.hg
        v = self.adv(t)
        self.courant = _courant(v, self.spacing, self.cfg.dt, axes=(0, 1))
        w = hg.to_phys(c * self.mask)
        p = [[hg.to_spec(v[j] * w[i]) for j in range(2)] for i in range(3)]
        a = np.stack([1j * (hg.x1 * p[i][0] + hg.x2 * p[i][1]) for i in range(3)])
        if self.eps is None:
            return -hg.leray(a) * self.mask
        m1 = a[0] + 1j * hg.x3 * p[2][0]
        m2 = a[1] + 1j * hg.x3 * p[2][1]
        q = 1j * (hg.x1 * m1 + hg.x2 * m2) * self.inv
        out = -np.stack([a[0] + 1j * hg.x1 * q, a[1] + 1j * hg.x2 * q, a[2] + self.eps**2 * 1j * hg.x3 * q])
        return out * self.mask

    def dissipation(self, c):
        return self.hg.norm2(c, self.symbol)

    def energy(self, c):
        return 0.5 * self.hg.norm2(c)


def solve_transport_diffusion(w0: VelocityField, vbar_traj: Trajectory, cfg: SolveConfig) -> Trajectory:
    """Linear transport-diffusion by the horizontal field of ``vbar_traj``."""
    res = w0.divergence_residual()
    if res > 1e-9:
        raise HypothesisViolationError(f"w0 is not divergence-free (residual {res:.3e})")
    if vbar_traj.grid != w0.grid:
        raise TrajectoryError("advecting trajectory lives on a different grid")
    adv = _Advector(vbar_traj, w0.grid, cfg.t_end, cfg.dealias)
    c0 = _half_of(w0)
    traj = _run(_Transport(w0.grid, adv, cfg, None), c0, w0.grid, cfg)
    traj.data[0] = c0
    traj.info["system"] = "transport"
    return traj


def solve_rescaled_W(W0: VelocityField, Vbar_traj: Trajectory, eps: float, cfg: SolveConfig) -> Trajectory:
    """Rescaled system with anisotropic dissipation ``-Delta_h - eps^2 d_3^2``.

    ``Vbar_traj`` must have the same sampling shape as ``W0``; only its samples
    are used, so it may live on the vertically stretched box.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    res = W0.divergence_residual()
    if res > 1e-9:
        raise HypothesisViolationError(f"W0 is not divergence-free (residual {res:.3e})")
    adv = _Advector(Vbar_traj, W0.grid, cfg.t_end, cfg.dealias)
    c0 = _half_of(W0)
    traj = _run(_Transport(W0.grid, adv, cfg, eps), c0, W0.grid, cfg)
    traj.data[0] = c0
    traj.info["system"] = "rescaled"
    traj.info["eps"] = eps
    return traj


def rescale_to_W(w: VelocityField, eps: float, base: Grid) -> VelocityField:
    """``(w^h / eps, w^3)`` re-labelled onto the unstretched grid ``base``."""
    if w.grid.shape != base.shape:
        raise TrajectoryError("grid shapes differ")
    c = w.coeffs
    return VelocityField.from_coeffs(base, np.stack([c[0] / eps, c[1] / eps, c[2]]), divfree=w.divfree)


# --------------------------------------------------------------------------- assembly


def build_approximate_solution(u_traj: Trajectory, vbar_traj: Trajectory, w_traj: Trajectory) -> Trajectory:
    """Sample-wise sum ``u + (vbar^h, 0) + w``."""
    _check_aligned(u_traj, vbar_traj, w_traj)
    if not (u_traj.grid == vbar_traj.grid == w_traj.grid):
        raise TrajectoryError("trajectories live on different grids")
    hg = _Half3D(u_traj.grid)
    data = []
    for cu, cv, cw in zip(u_traj.data, vbar_traj.data, w_traj.data):
        cv = cv.copy()
        cv[2] = 0.0
        data.append(cu + cv + cw)
    energy = np.array([0.5 * hg.norm2(c) for c in data])
    grad = np.array([hg.norm2(c, hg.k2) for c in data])
    diss = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(u_traj.times) * (grad[1:] + grad[:-1]))])
    traj = Trajectory(u_traj.grid, u_traj.times.copy(), data, u_traj.times.copy(), energy, diss,
                      sample_steps=np.arange(len(data)))
    traj.info["system"] = "approximate"
    return traj


def compute_remainder(u0: VelocityField, v_eps0: VelocityField, approx: Trajectory, cfg: SolveConfig) -> Trajectory:
    """``R = u_eps - u_app`` where ``u_eps`` solves Navier-Stokes from ``u0 + v_eps0``.

    The full solve starts from the first sample of ``approx`` (checked against
    ``u0 + v_eps0``), so ``R(0)`` vanishes identically.  ``info`` carries the
    full trajectory's last time, ``sup_h12`` and, on blow-up, the error text.
    """
    grid = approx.grid
    start = approx.field(0)
    target = u0.coeffs + v_eps0.coeffs
    scale = max(np.abs(target).max(), 1e-300)
    if np.abs(start.coeffs - target).max() > 1e-12 * scale:
        raise TrajectoryError("approximate solution does not start from u0 + v_eps0")
    expected = cfg.sample_steps() * cfg.dt
    if len(approx.times) != len(expected) or not np.allclose(
        approx.times, expected, rtol=0, atol=_TIME_TOL * max(1.0, cfg.t_end)
    ):
        raise TrajectoryError("approximate solution is not sampled on the solver's time grid")
    full = solve_ns3d(start.with_divfree(True), cfg)
    hg = _Half3D(grid)
    data = [cu - ca for cu, ca in zip(full.data, approx.data)]
    energy = np.array([0.5 * hg.norm2(c) for c in data])
    traj = Trajectory(grid, full.times.copy(), data, full.times.copy(), energy, np.zeros(len(data)),
                      sample_steps=np.arange(len(data)))
    h12 = np.array([math.sqrt(hg.norm2(c, np.sqrt(hg.k2))) for c in data])
    traj.info.update(system="remainder", h12=h12, sup_h12=float(h12.max()))
    return traj


def h12_profile(traj: Trajectory) -> np.ndarray:
    """``||u(t)||_{H^{1/2}}`` at every sample."""
    return traj.map_samples(lambda u: sobolev3(u, 0.5).value)
