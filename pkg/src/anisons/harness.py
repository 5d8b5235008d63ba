"""Forcing split, boundary-slice diagnostics, epsilon sweeps and inequality checks.

Every scaling claim is operationalised as a *recipe*: a scalar quantity
measured per ``eps`` plus a verdict rule (``slope`` against an expected
exponent, ``bounded`` as max/min < 3, ``le`` as all values <= 1, ``decreasing``
as strictly decreasing with ``eps``, ``nonvanishing`` as last >= 0.4 x first).
Sweeps are deterministic: the same settings give bit-identical reports.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import trapezoid

from .datagen import (
    ProfileSpec,
    decompose_cones,
    decompose_horizontal,
    gen_cone_supported,
    gen_cone_union,
    gen_oscillating,
    gen_slow_varying,
    gen_thm12_data,
    layered_example,
)
from .exceptions import AnisoError, HypothesisViolationError, SweepFailedError, TrajectoryError
from .norms import aniso_h3, aniso_hs_sigma, besov_heat, lqv_hsh, slice_hs_squared, sobolev3
from .solvers import (
    SolveConfig,
    Trajectory,
    build_approximate_solution,
    compute_remainder,
    rescale_to_W,
    solve_ns2d_stack,
    solve_ns3d,
    solve_transport_diffusion,
)
from .spectral import TWO_PI, Grid, SpectralField, VelocityField, dealiased_product, fftn, ifftn, slice_coeffs

BOUNDED_RATIO = 3.0
SLICE_ENERGY_FLOOR = 1e-12
NONVANISHING_FRACTION = 0.4


# --------------------------------------------------------------------------- pressure and forcing


def compute_pressure_2d(vbar) -> SpectralField:
    """Per-slice pressure: ``-Delta_h p = sum_{j,k<=2} d_j d_k (v_j v_k)``, zero on ``xi_h = 0``."""
    a, b = (vbar.u1, vbar.u2) if isinstance(vbar, VelocityField) else vbar
    g = a.grid
    x1, x2, _ = g.xi
    p11 = dealiased_product(a, a).coeffs
    p12 = dealiased_product(a, b).coeffs
    p22 = dealiased_product(b, b).coeffs
    kh2 = g.xi_h2
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(kh2 > 0, 1.0 / kh2, 0.0)
    return SpectralField(g, -(x1 * x1 * p11 + 2.0 * x1 * x2 * p12 + x2 * x2 * p22) * inv)


def _phys(c, grid):
    return ifftn(c * grid.dealias, axes=(-3, -2, -1)).real


def advect(a: np.ndarray, b: np.ndarray, grid: Grid) -> np.ndarray:
    """Coefficients of ``(a . grad) b`` with 2/3-rule truncation of inputs and output."""
    ap = _phys(a, grid)
    out = np.empty_like(b)
    for i in range(3):
        acc = np.zeros(grid.shape)
        for j in range(3):
            acc += ap[j] * _phys(1j * grid.xi[j] * b[i], grid)
        out[i] = fftn(acc) * grid.dealias
    return out


def _h_minus_half(c: np.ndarray, grid: Grid) -> float:
    # The whole xi_h = 0 plane is dropped, not just the mean: on the periodic box it is one
    # mode of finite weight, whereas in the whole space it has measure zero.  Keeping it makes
    # the horizontal mean of d_3 (w^3 w^3) an O(1) box artefact on tall boxes.
    c = c.copy()
    c[:, 0, 0, :] = 0.0
    return sobolev3(VelocityField.from_coeffs(grid, c), -0.5).value


def _l2_time(values: np.ndarray, times: np.ndarray) -> float:
    if len(times) < 2:
        return 0.0
    return math.sqrt(float(trapezoid(np.asarray(values) ** 2, times)))


@dataclass
class ForcingSplit:
    """Parts of the defect, their per-sample ``H^{-1/2}`` norms and ``L^2_t`` norms."""

    times: np.ndarray
    G1: list | None
    G2: list | None
    G3: list | None
    H: list | None
    profiles: dict
    norms: dict
    reconstruction_defect: float


def assemble_forcing(u_traj: Trajectory | None, vbar_traj: Trajectory, w_traj: Trajectory, *, keep_fields: bool = True) -> ForcingSplit:
    """``F = (d3^2 vbar^h, d3 pbar) + w.grad v_app + u.grad v_app + v_app.grad u``.

    ``G1 = (d3^2 vbar^h, 0)``, ``G2 = (0, d3 pbar)``, ``G3 = w.grad v_app`` and
    ``H`` the two terms involving ``u``; ``u_traj=None`` stands for ``u = 0``.
    """
    trajs = [vbar_traj, w_traj] + ([u_traj] if u_traj is not None else [])
    ref = trajs[0]
    for tr in trajs[1:]:
        if len(tr) != len(ref) or not np.allclose(tr.times, ref.times, rtol=0, atol=1e-12 * max(1.0, ref.times[-1])):
            raise TrajectoryError("trajectories have different sample times")
        if tr.grid != ref.grid:
            raise TrajectoryError("trajectories live on different grids")
    g = ref.grid
    x3 = g.xi[2]
    parts = {k: [] for k in ("G1", "G2", "G3", "H")}
    prof = {k: [] for k in ("G1", "G2", "G3", "G", "H", "F")}
    defect = 0.0
    for i in range(len(ref)):
        vb = vbar_traj.coeffs(i)
        vb[2] = 0.0
        w = w_traj.coeffs(i)
        vapp = vb + w
        g1 = np.zeros_like(vb)
        g1[:2] = -(x3**2) * vb[:2]
        p = compute_pressure_2d((SpectralField(g, vb[0]), SpectralField(g, vb[1]))).coeffs
        g2 = np.zeros_like(vb)
        g2[2] = 1j * x3 * p
        g3 = advect(w, vapp, g)
        if u_traj is not None:
            u = u_traj.coeffs(i)
            h = advect(u, vapp, g) + advect(vapp, u, g)
            direct = g1 + g2 + advect(w + u, vapp, g) + advect(vapp, u, g)
        else:
            h = np.zeros_like(vb)
            direct = g1 + g2 + g3
        total = g1 + g2 + g3 + h
        scale = max(np.abs(direct).max(), 1e-300)
        defect = max(defect, float(np.abs(total - direct).max() / scale))
        for name, c in (("G1", g1), ("G2", g2), ("G3", g3), ("G", g1 + g2 + g3), ("H", h), ("F", total)):
            prof[name].append(_h_minus_half(c, g))
        if keep_fields:
            for name, c in (("G1", g1), ("G2", g2), ("G3", g3), ("H", h)):
                parts[name].append(VelocityField.from_coeffs(g, c))
    profiles = {k: np.array(v) for k, v in prof.items()}
    norms = {k: _l2_time(v, ref.times) for k, v in profiles.items()}
    fields = parts if keep_fields else {k: None for k in parts}
    return ForcingSplit(ref.times.copy(), fields["G1"], fields["G2"], fields["G3"], fields["H"], profiles, norms, defect)


# --------------------------------------------------------------------------- boundary slice


def _slice_norm(c: np.ndarray, grid: Grid, s: float, index: int = 0) -> float:
    sl = np.stack([slice_coeffs(ci, index) for ci in c])[..., None]
    return math.sqrt(float(slice_hs_squared(sl, grid, s)[0]))


def transport_pressure(vbar: np.ndarray, w: np.ndarray, grid: Grid) -> np.ndarray:
    """``q = (-Delta)^{-1} div(vbar^h . grad_h w)`` as 3D coefficients."""
    vp = _phys(vbar, grid)
    wp = _phys(w, grid)
    acc = np.zeros(grid.shape, dtype=np.complex128)
    for i in range(3):
        for j in range(2):
            acc += -grid.xi[i] * grid.xi[j] * fftn(vp[j] * wp[i]) * grid.dealias
    k2 = grid.xi_abs2
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(k2 > 0, acc / k2, 0.0)


@dataclass
class BoundaryReport:
    app_slice_linf_l2: float
    grad_slice_l2_l2: float
    T_eps: float
    d33w3: float
    slice_energy_defect: float | None

    def rows(self) -> list[tuple[str, float]]:
        return [(k, v) for k, v in asdict(self).items()]


def boundary_slice_report(vbar_traj: Trajectory, w_traj: Trajectory, index: int = 0) -> BoundaryReport:
    """Diagnostics on the slice ``x3 = index * dx3`` (default the zero slice).

    ``slice_energy_defect`` is the relative defect of the 2D energy identity
    of the stack on that slice (None when the stack diagnostics are missing).
    """
    if len(vbar_traj) != len(w_traj) or not np.allclose(vbar_traj.times, w_traj.times, rtol=0, atol=1e-12):
        raise TrajectoryError("trajectories have different sample times")
    g = vbar_traj.grid
    x3 = g.xi[2]
    app, grad, tq, d33 = [], [], [], []
    for i in range(len(vbar_traj)):
        vb = vbar_traj.coeffs(i)
        vb[2] = 0.0
        w = w_traj.coeffs(i)
        vapp = vb + w
        app.append(_slice_norm(vapp, g, 0.0, index))
        grad.append(_slice_norm(vapp, g, 1.0, index))
        q = transport_pressure(vb, w, g)
        d = -(x3**2) * w[2]
        t_eps = d - 1j * x3 * q
        tq.append(_slice_norm(t_eps[None], g, -0.5, index))
        d33.append(_slice_norm(d[None], g, -0.5, index))
    times = vbar_traj.times
    defect = float(slice_energy_defects(vbar_traj)[index]) if vbar_traj.slice_energy is not None else None
    return BoundaryReport(
        app_slice_linf_l2=float(max(app)),
        grad_slice_l2_l2=_l2_time(np.array(grad), times),
        T_eps=_l2_time(np.array(tq), times),
        d33w3=_l2_time(np.array(d33), times),
        slice_energy_defect=defect,
    )


def slice_energy_defects(vbar_traj: Trajectory) -> np.ndarray:
    """Per-slice relative defect of ``E(t_end) + int |grad_h v|^2 = E(0)``."""
    e = vbar_traj.slice_energy
    d = vbar_traj.slice_dissipation
    if e is None:
        raise TrajectoryError("trajectory has no per-slice diagnostics")
    # slices that start at rest (or at roundoff level) are measured against the largest slice
    scale = np.maximum(e[0], SLICE_ENERGY_FLOOR * max(float(e[0].max()), np.finfo(float).tiny))
    return np.abs(e[-1] + d[-1] - e[0]) / scale


# --------------------------------------------------------------------------- settings and pipelines


@dataclass(frozen=True)
class SweepSettings:
    """Everything a recipe depends on besides ``eps``."""

    seed: int = 0
    dt: float = 0.01
    t_end: float = 4.0
    stride: int = 4
    scheme: str = "IF-RK4"
    base_shape: tuple = (32, 32, 16)
    oscillating_shape: tuple = (32, 32, 64)
    slow_shape: tuple = (32, 32, 64)
    corpus_size: int = 20
    cone_n: int = 16
    sobolev_s: float = 0.25
    remainder_shape: tuple = (32, 32, 128)
    remainder_eps_floor: float = 1.0 / 16.0
    remainder_t_end: float = 2.0
    remainder_amplitude: float = 0.1
    remainder_width: float = 2.0

    def solve_config(self, t_end=None, stride=None) -> SolveConfig:
        return SolveConfig(
            dt=self.dt,
            t_end=self.t_end if t_end is None else t_end,
            scheme=self.scheme,
            stride=self.stride if stride is None else stride,
        )


def _oscillating(eps: float, st: SweepSettings) -> dict:
    n1, n2, n3 = st.oscillating_shape
    grid = Grid(n1, n2, n3, TWO_PI, TWO_PI, TWO_PI / 4.0)
    u = gen_oscillating(ProfileSpec("oscillating", eps), grid)
    return {"h12": sobolev3(u, 0.5).value, "c1": besov_heat(u, "Cminus1").value}


def _slow(eps: float, st: SweepSettings) -> dict:
    n1, n2, n3 = st.slow_shape
    grid = Grid(n1, n2, n3, TWO_PI, TWO_PI, 4.0 * np.pi).scaled_vertically(eps)
    u = gen_slow_varying(ProfileSpec("slow-varying", eps), grid)
    return {"l2": sobolev3(u, 0.0).value, "c1": besov_heat(u, "Cminus1").value}


def _cone(eps: float, st: SweepSettings) -> dict:
    grid = Grid.cube(st.cone_n).scaled_vertically(eps)
    u = gen_cone_supported(st.seed, eps, (st.sobolev_s,), grid)
    return {"l2v": math.sqrt(eps) * lqv_hsh(u, 2, st.sobolev_s).value, "linfv": lqv_hsh(u, math.inf, st.sobolev_s).value}


def aniso_ratio(u: VelocityField, eps: float) -> float:
    """``||u||_{H^{1/4,1/4}} / (eps^{1/4} ||u||_{H^{1/2}})``."""
    den = eps**0.25 * sobolev3(u, 0.5).value
    return aniso_hs_sigma(u, 0.25, 0.25).value / den if den > 0 else 0.0


def cone_union_corpus(eps: float, count: int, seed: int, n: int = 16) -> list[VelocityField]:
    """Union-of-cones fields on a tall box (rich horizontal cone) and a flat box (rich vertical cone)."""
    tall = Grid.cube(n).scaled_vertically(eps)
    flat = Grid(n, n, n, TWO_PI, TWO_PI, TWO_PI * eps)
    out = []
    for k in range(count):
        grid = tall if k % 2 == 0 else flat
        out.append(gen_cone_union(seed * 100003 + k, eps, grid))
    return out


def _aniso(eps: float, st: SweepSettings) -> dict:
    ratios = [aniso_ratio(u, eps) for u in cone_union_corpus(eps, st.corpus_size, st.seed, st.cone_n)]
    return {"ratio": max(ratios)}


def _sup_slices(traj: Trajectory, fn: Callable[[np.ndarray], float], indices) -> float:
    return max(fn(traj.coeffs(i)) for i in indices)


def _linf_v(c: np.ndarray, grid: Grid, s: float) -> float:
    return lqv_hsh(VelocityField.from_coeffs(grid, c), math.inf, s).value


def _grad_linf_v_l2h(c: np.ndarray, grid: Grid) -> float:
    acc = np.zeros(grid.n3)
    area = grid.spacing[0] * grid.spacing[1]
    for i in range(3):
        for j in range(3):
            d = ifftn(1j * grid.xi[j] * c[i]).real
            acc += area * (d**2).sum(axis=(0, 1))
    return math.sqrt(float(acc.max()))


def _approx(eps: float, st: SweepSettings) -> dict:
    """Stack + transport pipeline on the vertically stretched box (u = 0)."""
    base = Grid(*st.base_shape)
    v0h, w0 = layered_example(base)
    v_eps0 = gen_thm12_data(v0h, w0, eps, zero_slice=True)
    grid = v_eps0.grid
    dec = decompose_horizontal(v_eps0, eps)
    fine = st.solve_config(stride=1)
    vbar_fine = solve_ns2d_stack(dec.part_a, fine)
    w_traj = solve_transport_diffusion(dec.part_b, vbar_fine, st.solve_config())
    keep = [int(k) for k in st.solve_config().sample_steps()]
    vbar = Trajectory(
        grid,
        vbar_fine.times[keep],
        [vbar_fine.data[k] for k in keep],
        vbar_fine.step_times,
        vbar_fine.step_energy,
        vbar_fine.step_dissipation,
        sample_steps=np.array(keep),
        slice_energy=vbar_fine.slice_energy,
        slice_dissipation=vbar_fine.slice_dissipation,
    )
    del vbar_fine
    x3 = grid.xi[2]
    idx = range(len(vbar))
    s = st.sobolev_s
    out = {
        "dv3": _sup_slices(vbar, lambda c: _linf_v(1j * x3 * c, grid, s), idx),
        "d33v": _sup_slices(vbar, lambda c: _linf_v(-(x3**2) * c, grid, s), idx),
        "wh": _sup_slices(w_traj, lambda c: _linf_v(np.stack([c[0], c[1], 0 * c[2]]), grid, 0.0), idx),
        "w3": _sup_slices(w_traj, lambda c: _linf_v(np.stack([0 * c[0], 0 * c[1], c[2]]), grid, 0.0), idx),
        "W": max(
            lqv_hsh(rescale_to_W(w_traj.field(i), eps, base), 2, 0.5).value for i in idx
        ),
        "slice_energy_defect": float(slice_energy_defects(vbar).max()),
    }
    forcing = assemble_forcing(None, vbar, w_traj, keep_fields=False)
    out.update({f"forcing_{k}": v for k, v in forcing.norms.items()})
    rep = boundary_slice_report(vbar, w_traj)
    out.update(d33w3=rep.d33w3, T_eps=rep.T_eps, app_slice=rep.app_slice_linf_l2, grad_slice=rep.grad_slice_l2_l2)
    app = build_approximate_solution(_zero_like(vbar), vbar, w_traj)
    linf = np.array([np.abs(app.physical(i)).max() for i in idx])
    grad = np.array([_grad_linf_v_l2h(app.coeffs(i), grid) for i in idx])
    out["app_linf_l2t"] = _l2_time(linf, app.times)
    out["grad_app_l2t"] = _l2_time(grad, app.times)
    out["tail_energy"] = float(w_traj.tail_energy + vbar.tail_energy)
    return out


def _zero_like(traj: Trajectory) -> Trajectory:
    z = np.zeros_like(traj.data[0])
    return Trajectory(traj.grid, traj.times.copy(), [z] * len(traj), traj.times.copy(),
                      np.zeros(len(traj)), np.zeros(len(traj)), sample_steps=np.arange(len(traj)))


def localized_taylor_green(grid: Grid, amplitude: float, width: float) -> VelocityField:
    """``a (cos x1 sin x2, -sin x1 cos x2, 0) exp(-x3^2/width^2)`` (x3 periodised around 0)."""
    from .datagen import periodic_gaussian

    x1, x2 = grid.coords(0), grid.coords(1)
    g = periodic_gaussian(grid.coords(2), 0.0, width, grid.L3)
    c1 = np.cos(x1)[:, None, None] * np.sin(x2)[None, :, None] * g[None, None, :]
    c2 = -np.sin(x1)[:, None, None] * np.cos(x2)[None, :, None] * g[None, None, :]
    return VelocityField.from_physical(grid, [amplitude * c1, amplitude * c2, np.zeros(grid.shape)], divfree=True)


def remainder_grid(st: SweepSettings) -> Grid:
    n1, n2, n3 = st.remainder_shape
    return Grid(n1, n2, n3, TWO_PI, TWO_PI, TWO_PI / st.remainder_eps_floor)


def _remainder(eps: float, st: SweepSettings) -> dict:
    """Full solve from ``u0 + v_eps0`` minus the approximate solution, fixed tall box."""
    grid = remainder_grid(st)
    j = eps / st.remainder_eps_floor
    if abs(j - round(j)) > 1e-9 or round(j) < 1:
        raise HypothesisViolationError(f"eps={eps} is not a multiple of the box floor {st.remainder_eps_floor}")
    base = Grid(grid.n1, grid.n2, grid.n3, TWO_PI, TWO_PI, TWO_PI * round(j))
    v0h, w0 = layered_example(base, period=TWO_PI)
    v_eps0 = VelocityField.from_coeffs(grid, gen_thm12_data(v0h, w0, eps, zero_slice=True).coeffs, divfree=True)
    u0 = localized_taylor_green(grid, st.remainder_amplitude, st.remainder_width)
    cfg = st.solve_config(t_end=st.remainder_t_end)
    dec = decompose_horizontal(v_eps0, eps)
    vbar_fine = solve_ns2d_stack(dec.part_a, replace(cfg, stride=1))
    w_traj = solve_transport_diffusion(dec.part_b, vbar_fine, cfg)
    keep = [int(k) for k in cfg.sample_steps()]
    vbar = Trajectory(grid, vbar_fine.times[keep], [vbar_fine.data[k] for k in keep], vbar_fine.step_times,
                      vbar_fine.step_energy, vbar_fine.step_dissipation, sample_steps=np.array(keep))
    del vbar_fine
    u_traj = solve_ns3d(u0, cfg)
    approx = build_approximate_solution(u_traj, vbar, w_traj)
    del u_traj, vbar, w_traj
    rem = compute_remainder(u0, v_eps0, approx, cfg)
    return {"sup_h12": rem.info["sup_h12"], "r0": float(np.abs(rem.data[0]).max())}


PIPELINES: dict[str, Callable[[float, SweepSettings], dict]] = {
    "oscillating": _oscillating,
    "slow": _slow,
    "cone": _cone,
    "aniso": _aniso,
    "approx": _approx,
    "remainder": _remainder,
}


@lru_cache(maxsize=64)
def measure(pipeline: str, eps: float, settings: SweepSettings) -> dict:
    """Scalar measurements of one pipeline at one ``eps`` (memoised)."""
    return dict(PIPELINES[pipeline](eps, settings))


# --------------------------------------------------------------------------- recipes


@dataclass(frozen=True)
class Recipe:
    name: str
    pipeline: str
    key: str
    kind: str
    expected: float | None = None
    tolerance: float | None = None
    description: str = ""
    min_r2: float | None = None

    def value(self, eps: float, settings: SweepSettings) -> float:
        return float(measure(self.pipeline, eps, settings)[self.key])


RECIPES: dict[str, Recipe] = {
    r.name: r
    for r in [
        Recipe("h12-oscillating", "oscillating", "h12", "slope", -1.5, 0.1, "H^{1/2} norm of oscillating data",
               min_r2=0.999),
        Recipe("c1-oscillating", "oscillating", "c1", "bounded", description="C^{-1} norm of oscillating data"),
        Recipe("slow-varying-l2", "slow", "l2", "slope", -0.5, 0.1, "L2 norm of slowly varying data"),
        Recipe("slow-varying-c1", "slow", "c1", "nonvanishing", description="C^{-1} norm of slowly varying data"),
        Recipe("cone-l2v", "cone", "l2v", "bounded", description="sqrt(eps) L2_v H^s_h of cone data"),
        Recipe("thm11-aniso-norm", "aniso", "ratio", "le", 1.0, description="H^{1/4,1/4} / (eps^{1/4} H^{1/2})"),
        Recipe("dv3-stack", "approx", "dv3", "slope", 1.0, 0.15, "sup_t |d3 vbar|_{Linf_v H^s_h}"),
        Recipe("d33v-stack", "approx", "d33v", "slope", 2.0, 0.2, "sup_t |d3^2 vbar|_{Linf_v H^s_h}"),
        Recipe("wh-transport", "approx", "wh", "slope", 1.0, 0.2, "sup_t |w^h|_{Linf_v L2_h}"),
        Recipe("w3-transport", "approx", "w3", "bounded", description="sup_t |w^3|_{Linf_v L2_h}"),
        Recipe("W-bounded", "approx", "W", "bounded", description="sup_t |W|_{L2_v H^{1/2}_h}"),
        Recipe("G-forcing", "approx", "forcing_G", "slope", 0.5, 0.2, "|G|_{L2_t H^{-1/2}}"),
        Recipe("d33w3-slice", "approx", "d33w3", "slope", 2.0, 0.3, "|d3^2 w^3(.,0)|_{L2_t H^{-1/2}_h}"),
        Recipe("app-linf", "approx", "app_linf_l2t", "bounded", description="|u_app|_{L2_t Linf}"),
        Recipe("grad-app", "approx", "grad_app_l2t", "bounded", description="|grad u_app|_{L2_t Linf_v L2_h}"),
        Recipe("remainder-monotone", "remainder", "sup_h12", "decreasing", description="sup_t |R|_{H^{1/2}}"),
    ]
}


@dataclass
class SweepReport:
    recipe: str
    quantity: str
    kind: str
    eps_values: list
    values: list
    slope: float
    intercept: float
    r2: float
    expected: float | None
    tolerance: float | None
    verdict: bool
    detail: str
    failures: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_json_default)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["eps", self.quantity])
        for e, v in zip(self.eps_values, self.values):
            w.writerow([repr(float(e)), repr(float(v))])
        return buf.getvalue()

    def to_dat(self) -> str:
        lines = [f"# {self.recipe}: eps {self.quantity}  slope={self.slope!r} r2={self.r2!r}"]
        lines += [f"{float(e)!r} {float(v)!r}" for e, v in zip(self.eps_values, self.values)]
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for ext, text in (("json", self.to_json()), ("csv", self.to_csv()), ("dat", self.to_dat())):
            p = out / f"{self.recipe}.{ext}"
            p.write_text(text)
            paths.append(p)
        return paths

    def line(self) -> str:
        status = "PASS" if self.verdict else "FAIL"
        return f"{status} {self.recipe}: slope={self.slope:.4f} r2={self.r2:.5f} {self.detail}"


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serialisable: {type(o).__name__}")


def fit_loglog(eps: Sequence[float], values: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares line through ``(log eps, log value)``: slope, intercept, R^2."""
    x = np.log(np.asarray(eps, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def judge(recipe: Recipe, eps: Sequence[float], values: Sequence[float], slope: float,
          r2: float | None = None) -> tuple[bool, str]:
    order = np.argsort(eps)[::-1]
    v = np.asarray(values, dtype=float)[order]
    if recipe.kind == "slope":
        ok = abs(slope - recipe.expected) <= recipe.tolerance
        detail = f"expected {recipe.expected} +- {recipe.tolerance}"
        if recipe.min_r2 is not None:
            ok = ok and r2 is not None and r2 >= recipe.min_r2
            detail += f", r2 >= {recipe.min_r2}"
        return ok, detail
    if recipe.kind == "bounded":
        ratio = float(v.max() / v.min())
        return ratio < BOUNDED_RATIO, f"max/min={ratio:.4f} (< {BOUNDED_RATIO})"
    if recipe.kind == "le":
        worst = float(v.max())
        return worst <= recipe.expected * (1 + 1e-10), f"max={worst:.6f} (<= {recipe.expected})"
    if recipe.kind == "decreasing":
        ok = bool(np.all(np.diff(v) < 0))
        return ok, "values by decreasing eps: " + ", ".join(f"{x:.6g}" for x in v)
    if recipe.kind == "nonvanishing":
        frac = float(v[-1] / v[0])
        return frac >= NONVANISHING_FRACTION, f"smallest-eps/largest-eps={frac:.4f} (>= {NONVANISHING_FRACTION})"
    raise ValueError(f"unknown recipe kind {recipe.kind!r}")


def _check_geometric(eps: Sequence[float]):
    e = np.sort(np.asarray(eps, dtype=float))[::-1]
    if len(e) < 4:
        raise ValueError(f"a sweep needs at least 4 eps values, got {len(e)}")
    if np.any(e <= 0) or np.any(e >= 1):
        raise ValueError("eps values must lie in (0, 1)")
    r = e[1:] / e[:-1]
    if np.any(np.abs(r / r[0] - 1) > 1e-6):
        raise ValueError("eps values must be geometrically spaced")


def _run_one(args):
    rec, eps, settings = args
    try:
        m = measure(rec.pipeline, eps, settings)
        return eps, float(m[rec.key]), None, m
    except (AnisoError, FloatingPointError, ValueError) as exc:
        return eps, None, f"{type(exc).__name__}: {exc}", None


def run_sweep(recipe, eps_list: Sequence[float], settings: SweepSettings | None = None, out_dir=None, workers: int = 1) -> SweepReport:
    """Measure ``recipe`` at each eps, fit the log-log slope and apply the verdict.

    Individual failures are recorded; fewer than four surviving points raise
    :class:`SweepFailedError`.  With ``out_dir`` the per-eps measurements and the
    report files are written there.
    """
    rec = RECIPES[recipe] if isinstance(recipe, str) else recipe
    settings = settings or SweepSettings()
    eps_list = [float(e) for e in eps_list]
    _check_geometric(eps_list)
    jobs = [(rec, e, settings) for e in eps_list]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    good = [(e, v) for e, v, err, _ in results if err is None and v > 0 and math.isfinite(v)]
    failures = {repr(e): (err or f"non-positive value {v!r}") for e, v, err, _ in results if (e, v) not in good}
    if out_dir is not None:
        pdir = Path(out_dir) / rec.name
        pdir.mkdir(parents=True, exist_ok=True)
        for k, (e, v, err, m) in enumerate(results):
            payload = {"eps": e, "value": v, "error": err, "measurements": m}
            (pdir / f"eps_{k:02d}.json").write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default))
    if len(good) < 4:
        raise SweepFailedError(f"{rec.name}: only {len(good)} eps points succeeded; failures: {failures}")
    eps_ok = [e for e, _ in good]
    vals = [v for _, v in good]
    slope, intercept, r2 = fit_loglog(eps_ok, vals)
    verdict, detail = judge(rec, eps_ok, vals, slope, r2)
    report = SweepReport(rec.name, rec.key, rec.kind, eps_ok, vals, slope, intercept, r2, rec.expected, rec.tolerance,
                         verdict, detail, failures)
    if out_dir is not None:
        report.write(out_dir)
    return report


# --------------------------------------------------------------------------- inequality suite


@dataclass
class InequalityResult:
    name: str
    passed: bool
    worst_ratio: float
    checked: int
    skipped: list = field(default_factory=list)
    constant: float | None = None


def embedding_constant(s: float) -> float:
    """Sharp constant of ``|xi_1|^s |xi_2|^s <= C^2 |xi_h|^{2s}``, i.e. ``2^{-s/2}``."""
    return 2.0 ** (-s / 2.0)


def gn_ratio(u: VelocityField, s: float) -> float:
    """``|u|_{Linf_v H^s_h}^2 / (|u|_{L2_v H^s_h} |d3 u|_{L2_v H^s_h})``."""
    g = u.grid
    du = VelocityField.from_coeffs(g, 1j * g.xi[2] * u.coeffs)
    den = lqv_hsh(u, 2, s).value * lqv_hsh(du, 2, s).value
    return lqv_hsh(u, math.inf, s).value ** 2 / den if den > 0 else 0.0


def product_law_ratios(u: VelocityField) -> np.ndarray:
    """Per-slice ``|<a.grad_h b, b>_{H^{1/2}_h}| / (|grad_h a|_{L2_h} |grad_h b|_{H^{1/2}_h} |b|_{H^{1/2}_h})``.

    ``a`` is the horizontal part of ``u`` and ``b = u``.
    """
    g = u.grid
    c = u.coeffs
    x1, x2, _ = g.xi
    conv = np.zeros_like(c)
    ap = [_phys(c[j], g) for j in range(2)]
    for i in range(3):
        acc = ap[0] * _phys(1j * x1 * c[i], g) + ap[1] * _phys(1j * x2 * c[i], g)
        conv[i] = fftn(acc) * g.dealias
    s_conv = ifftn(conv, axes=(-1,))
    s_b = ifftn(c, axes=(-1,))
    area = g.L1 * g.L2 / float(g.n1 * g.n2) ** 2
    kh = np.sqrt(g.xi_h2)
    pair = np.abs(area * np.real((kh * s_conv * np.conj(s_b)).sum(axis=(0, 1, 2))))
    grad_a = np.sqrt(slice_hs_squared(s_b[:2], g, 1.0))
    b_half = np.sqrt(slice_hs_squared(s_b, g, 0.5))
    grad_b_half = np.sqrt(slice_hs_squared(s_b, g, 1.5))
    den = grad_a * grad_b_half * b_half
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 1e-300, pair / den, 0.0)


def refine(u: VelocityField, factor: int = 2) -> VelocityField:
    """Zero-pad the spectrum onto a grid with ``factor`` times more points per axis."""
    g = u.grid
    fine = Grid(g.n1 * factor, g.n2 * factor, g.n3 * factor, g.L1, g.L2, g.L3)
    c = u.coeffs
    out = np.zeros((3,) + fine.shape, dtype=np.complex128)
    idx = [np.where(np.abs(g.integers(a)) != g.shape[a] // 2)[0] for a in range(3)]
    src = [g.integers(a).astype(int)[idx[a]] for a in range(3)]
    dst = [s % n for s, n in zip(src, fine.shape)]
    out[:, dst[0][:, None, None], dst[1][None, :, None], dst[2][None, None, :]] = c[
        :, idx[0][:, None, None], idx[1][None, :, None], idx[2][None, None, :]
    ]
    return VelocityField.from_coeffs(fine, out * factor**3, divfree=u.divfree)


def check_inequality_suite(corpus, eps: float = 0.25, s: float = 0.25, gn_tol: float = 1e-6) -> dict[str, InequalityResult]:
    """Evaluate the four inequalities on a list of fields (or ``(field, eps)`` pairs)."""
    items = [(u, eps) if isinstance(u, VelocityField) else (u[0], u[1]) for u in corpus]
    results = {}

    worst, checked, skipped = 0.0, 0, []
    for k, (u, e) in enumerate(items):
        try:
            decompose_cones(u, e)
        except HypothesisViolationError as exc:
            skipped.append(f"field {k}: {exc}")
            continue
        worst = max(worst, aniso_ratio(u, e))
        checked += 1
    results["aniso-cone"] = InequalityResult("aniso-cone", worst <= 1 + 1e-10, worst, checked, skipped)

    C = embedding_constant(s)
    worst, checked = 0.0, 0
    for u, _ in items:
        den = aniso_hs_sigma(u, s, 0.5 - s).value
        if den > 0:
            worst = max(worst, aniso_h3(u, s / 2, s / 2, 0.5 - s).value / (C * den))
        checked += 1
    results["embedding"] = InequalityResult("embedding", worst <= 1 + 1e-10, worst, checked, constant=C)

    worst, checked, skipped = 0.0, 0, []
    for k, (u, _) in enumerate(items):
        per_slice = np.sqrt(slice_hs_squared(ifftn(u.coeffs, axes=(-1,)), u.grid, s))
        if per_slice.max() > 0 and per_slice.min() > 1e-12 * per_slice.max():
            skipped.append(f"field {k}: no vanishing horizontal slice")
            continue
        worst = max(worst, gn_ratio(u, s))
        checked += 1
    results["gagliardo-nirenberg"] = InequalityResult("gagliardo-nirenberg", worst <= 1 + gn_tol, worst, checked, skipped)

    coarse = [float(product_law_ratios(u).max()) for u, _ in items]
    fine = [float(product_law_ratios(refine(u)).max()) for u, _ in items]
    c_coarse, c_fine = max(coarse, default=0.0), max(fine, default=0.0)
    stable = c_coarse == c_fine == 0.0 or (min(c_coarse, c_fine) > 0 and max(c_coarse, c_fine) / min(c_coarse, c_fine) < 10)
    results["product-law"] = InequalityResult(
        "product-law", stable, max(c_coarse, c_fine) / min(c_coarse, c_fine) if min(c_coarse, c_fine) > 0 else 1.0,
        len(items), constant=c_coarse,
    )
    return results
