"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line detail; the terminal summary prints a PASS/FAIL
line per criterion.  The sweep-based checks are marked ``slow``.
"""

import csv
import io
import math

import numpy as np
import pytest

from anisons.cli import EXIT_OK, main
from anisons.config import DEFAULT_EPS
from anisons.datagen import decompose_horizontal, gen_cone_supported, gen_thm12_data, layered_example
from anisons.harness import (
    SweepSettings,
    aniso_ratio,
    compute_pressure_2d,
    cone_union_corpus,
    measure,
    run_sweep,
    slice_energy_defects,
)
from anisons.norms import sobolev3
from anisons.solvers import (
    SolveConfig,
    rescale_to_W,
    rest_trajectory,
    solve_ns2d_stack,
    solve_ns3d,
    solve_rescaled_W,
    solve_transport_diffusion,
)
from anisons.spectral import (
    Grid,
    VelocityField,
    fftn,
    forward_transform,
    horizontal_leray_project,
    leray_project,
)
from conftest import random_physical
from oracles import direct_dft, direct_sobolev, signed_integers, taylor_green

EPS = list(DEFAULT_EPS)
SETTINGS = SweepSettings()


def detail(request, text):
    request.node.user_properties.append(("detail", text))


def _inner(a, b, grid):
    return float(np.real(np.vdot(a, b))) * grid.parseval


@pytest.mark.criterion(1, "transforms and projectors against direct oracles")
def test_transform_and_projector_oracles(request):
    g = Grid(8, 8, 8, 2 * np.pi, 3.0, 5.0)
    worst_fft = worst_norm = 0.0
    for seed in range(3):
        phys = random_physical(g.shape, seed)
        phys -= phys.mean(axis=(1, 2, 3), keepdims=True)
        ref = direct_dft(phys[0])
        worst_fft = max(worst_fft, np.abs(fftn(phys[0]) - ref).max() / np.abs(ref).max())
        u = VelocityField.from_physical(g, phys)
        for s in (-0.5, 0.0, 0.25, 0.5, 1.0):
            ref = direct_sobolev(u.to_physical(), g.lengths, s)
            worst_norm = max(worst_norm, abs(sobolev3(u, s).value - ref) / ref)

    worst_proj = 0.0
    for seed in range(3):
        a = VelocityField.from_physical(g, random_physical(g.shape, 10 + seed))
        b = VelocityField.from_physical(g, random_physical(g.shape, 20 + seed))
        scale = np.abs(a.coeffs).max()
        na, nb = _inner(a.coeffs, a.coeffs, g), _inner(b.coeffs, b.coeffs, g)
        pa, pb = leray_project(a), leray_project(b)
        worst_proj = max(worst_proj, np.abs(leray_project(pa).coeffs - pa.coeffs).max() / scale)
        sym = abs(_inner(pa.coeffs, b.coeffs, g) - _inner(a.coeffs, pb.coeffs, g)) / math.sqrt(na * nb)
        worst_proj = max(worst_proj, sym)
        ha = horizontal_leray_project((a.u1, a.u2))
        hha = horizontal_leray_project(ha)
        worst_proj = max(worst_proj, max(np.abs(x.coeffs - y.coeffs).max() for x, y in zip(ha, hha)) / scale)
        hb = horizontal_leray_project((b.u1, b.u2))
        lhs = _inner(np.stack([x.coeffs for x in ha]), np.stack([b.u1.coeffs, b.u2.coeffs]), g)
        rhs = _inner(np.stack([a.u1.coeffs, a.u2.coeffs]), np.stack([x.coeffs for x in hb]), g)
        worst_proj = max(worst_proj, abs(lhs - rhs) / math.sqrt(na * nb))
    detail(request, f"fft {worst_fft:.1e}, norms {worst_norm:.1e} (<= 1e-12); projectors {worst_proj:.1e} (<= 1e-10)")
    assert worst_fft <= 1e-12 and worst_norm <= 1e-12 and worst_proj <= 1e-10


@pytest.mark.criterion(2, "anisotropic norm controlled by eps^(1/4) H^(1/2) on cone data")
def test_anisotropic_norm_inequality(request):
    worst = {}
    for eps in EPS:
        worst[eps] = max(aniso_ratio(u, eps) for u in cone_union_corpus(eps, 100, seed=2024))
    text = ", ".join(f"eps={e:g}: {r:.4f}" for e, r in worst.items())
    detail(request, f"worst ratio per eps {text} (<= 1 + 1e-10)")
    assert max(worst.values()) <= 1 + 1e-10


@pytest.mark.criterion(3, "horizontal decomposition certificate")
def test_decomposition_certificate(request):
    worst = {}
    for eps in EPS:
        worst[eps] = max(decompose_horizontal(gen_cone_supported(seed, eps), eps).certificate for seed in range(100))
    text = ", ".join(f"eps={e:g}: {r:.6f}" for e, r in worst.items())
    detail(request, f"worst per-mode ratio {text} (<= 1 + 1e-8)")
    assert max(worst.values()) <= 1 + 1e-8


@pytest.mark.slow
@pytest.mark.criterion(4, "oscillating data H^(1/2) slope")
def test_oscillating_half_derivative_slope(request):
    rep = run_sweep("h12-oscillating", EPS, SETTINGS)
    detail(request, f"slope {rep.slope:.4f} (-1.50 +- 0.10), r2 {rep.r2:.5f} (>= 0.999)")
    assert abs(rep.slope + 1.5) <= 0.1 and rep.r2 >= 0.999


@pytest.mark.slow
@pytest.mark.criterion(5, "oscillating data C^-1 bi-bounded")
def test_oscillating_besov_bounded(request):
    rep = run_sweep("c1-oscillating", EPS, SETTINGS)
    ratio = max(rep.values) / min(rep.values)
    detail(request, f"max/min {ratio:.4f} (< 3)")
    assert ratio < 3


@pytest.mark.slow
@pytest.mark.criterion(6, "per-slice 2D energy identity")
def test_slice_energy_identity(request):
    base = Grid(32, 32, 16)
    v0h, w0 = layered_example(base, zero_slice=False)
    worst = {}
    for eps in EPS:
        dec = decompose_horizontal(gen_thm12_data(v0h, w0, eps), eps)
        traj = solve_ns2d_stack(dec.part_a, SolveConfig(dt=1e-3, t_end=1.0, stride=1000))
        worst[eps] = float(slice_energy_defects(traj).max())
    text = ", ".join(f"eps={e:g}: {d:.2e}" for e, d in worst.items())
    detail(request, f"worst slice defect {text} (<= 1e-4)")
    assert max(worst.values()) <= 1e-4


@pytest.mark.criterion(7, "Taylor-Green vortex and pressure")
def test_taylor_green(request):
    g = Grid(32, 32, 32)
    x1, x2, _ = g.mesh()
    u1, u2, p0 = taylor_green(x1, x2, 0.0)
    u0 = VelocityField.from_physical(g, [u1, u2, 0 * x1], divfree=True)
    cfg = SolveConfig(dt=0.01, t_end=0.1)
    e1, e2, _ = taylor_green(x1, x2, 0.1)
    exact = np.stack([e1, e2, 0 * x1])
    err3 = float(np.abs(solve_ns3d(u0, cfg).physical(-1) - exact).max())
    err2 = float(np.abs(solve_ns2d_stack(u0, cfg).physical(-1) - exact).max())
    p = compute_pressure_2d((forward_transform(u1, g), forward_transform(u2, g))).to_physical()
    errp = float(np.abs(p - p0).max())
    detail(request, f"ns3d {err3:.2e}, stack {err2:.2e} (<= 1e-4); pressure {errp:.2e} (<= 1e-10)")
    assert err3 <= 1e-4 and err2 <= 1e-4 and errp <= 1e-10


@pytest.mark.slow
@pytest.mark.criterion(8, "vertical derivatives of the slice solution")
def test_stack_vertical_derivatives(request):
    a = run_sweep("dv3-stack", EPS, SETTINGS)
    b = run_sweep("d33v-stack", EPS, SETTINGS)
    detail(request, f"d3 slope {a.slope:.4f} (1.0 +- 0.15), d3^2 slope {b.slope:.4f} (2.0 +- 0.2)")
    assert abs(a.slope - 1.0) <= 0.15 and abs(b.slope - 2.0) <= 0.2


@pytest.mark.slow
@pytest.mark.criterion(9, "transport solution components")
def test_transport_components(request):
    a = run_sweep("wh-transport", EPS, SETTINGS)
    b = run_sweep("w3-transport", EPS, SETTINGS)
    ratio = max(b.values) / min(b.values)
    detail(request, f"w^h slope {a.slope:.4f} (1.0 +- 0.2), w^3 max/min {ratio:.4f} (< 3)")
    assert abs(a.slope - 1.0) <= 0.2 and ratio < 3


@pytest.mark.slow
@pytest.mark.criterion(10, "forcing term and zero-slice vertical derivative")
def test_forcing(request):
    a = run_sweep("G-forcing", EPS, SETTINGS)
    b = run_sweep("d33w3-slice", EPS, SETTINGS)
    detail(request, f"G slope {a.slope:.4f} (0.5 +- 0.2), d3^2 w^3 slope {b.slope:.4f} (2.0 +- 0.3)")
    assert abs(a.slope - 0.5) <= 0.2 and abs(b.slope - 2.0) <= 0.3


@pytest.mark.slow
@pytest.mark.criterion(11, "remainder decreases and starts at zero")
def test_remainder(request):
    eps = [1 / 2, 1 / 4, 1 / 8, 1 / 16]
    rep = run_sweep("remainder-monotone", eps, SETTINGS)
    order = np.argsort(rep.eps_values)[::-1]
    values = np.asarray(rep.values)[order]
    r0 = max(measure("remainder", e, SETTINGS)["r0"] for e in eps)
    detail(request, "sup H^1/2 by decreasing eps " + ", ".join(f"{v:.4f}" for v in values) + f"; max |R(0)| = {r0}")
    assert len(values) == 4 and np.all(np.diff(values) < 0) and r0 == 0.0


@pytest.mark.slow
@pytest.mark.criterion(12, "rescaled system consistency and anisotropic heat decay")
def test_rescaled_consistency(request):
    base = Grid(32, 32, 16)
    v0h, w0 = layered_example(base)
    cfg = SolveConfig(dt=0.01, t_end=1.0, stride=10)
    worst_w = 0.0
    for eps in EPS:
        dec = decompose_horizontal(gen_thm12_data(v0h, w0, eps, zero_slice=True), eps)
        vbar = solve_ns2d_stack(dec.part_a, SolveConfig(dt=0.01, t_end=1.0, stride=1))
        w = solve_transport_diffusion(dec.part_b, vbar, cfg)
        W = solve_rescaled_W(rescale_to_W(dec.part_b, eps, base), vbar, eps, cfg)
        scale = max(np.abs(W.coeffs(i)).max() for i in range(len(W)))
        for i in range(len(w)):
            diff = rescale_to_W(w.field(i), eps, base).coeffs - W.coeffs(i)
            worst_w = max(worst_w, float(np.abs(diff).max() / scale))
    W0 = rescale_to_W(decompose_horizontal(gen_thm12_data(v0h, w0, 0.25, zero_slice=True), 0.25).part_b, 0.25, base)
    ks = [2 * np.pi * signed_integers(n) / L for n, L in zip(base.shape, base.lengths)]
    worst_heat = 0.0
    for eps in EPS:
        sym = ks[0][:, None, None] ** 2 + ks[1][None, :, None] ** 2 + eps**2 * ks[2][None, None, :] ** 2
        heat = solve_rescaled_W(W0, rest_trajectory(base, 0.5), eps, SolveConfig(dt=0.05, t_end=0.5, stride=1))
        for i, t in enumerate(heat.times):
            exact = W0.coeffs * np.exp(-sym * t)
            worst_heat = max(worst_heat, float(np.abs(heat.coeffs(i) - exact).max() / np.abs(W0.coeffs).max()))
    detail(request, f"W vs rescaled transport {worst_w:.2e} (<= 1e-3); heat decay {worst_heat:.2e} (<= 1e-12)")
    assert worst_w <= 1e-3 and worst_heat <= 1e-12


@pytest.mark.slow
@pytest.mark.criterion(13, "bit-identical reruns of every command")
def test_determinism(request, tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[run]\nseed = 11\n[solver]\ndt = 0.05\nt_end = 0.2\n[sweep]\ncorpus_size = 2\ncone_n = 8\n")
    out = tmp_path / "out"
    common = ["--config", str(cfg), "--out", str(out)]
    families = ["oscillating", "slow-varying", "cone", "cone-union", "layered", "taylor-green"]

    def session():
        codes, stdout = [], []
        for fam in families:
            codes.append(main(["gen", fam, "--eps", "1/8", *common]))
        tg = str(out / "taylor-green-eps0.125.anf1")
        lay = str(out / "layered-eps0.125.anf1")
        codes.append(main(["solve", "ns3d", tg, *common]))
        codes.append(main(["solve", "ns2d-stack", tg, *common]))
        codes.append(main(["solve", "transport", tg, tg, *common]))
        codes.append(main(["solve", "rescaled", tg, "--eps", "1/8", *common]))
        capsys.readouterr()
        for spec in ("H3:0.5", "Haniso:0.25,0.25", "LqvHsh:inf,0.25", "Besov:Cminus1"):
            codes.append(main(["norm", lay, spec]))
            stdout.append(capsys.readouterr().out)
        codes.append(main(["sweep", "thm11-aniso-norm", "cone-l2v", "--eps", "1/4,1/8,1/16,1/32", "--workers", "2",
                           *common]))
        measure.cache_clear()
        snapshot = {p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}
        return codes, stdout, snapshot

    codes1, out1, snap1 = session()
    codes2, out2, snap2 = session()
    differing = [k for k in snap1 if snap1[k] != snap2.get(k)]
    rows = [next(csv.reader(io.StringIO(s))) for s in out1]
    detail(request, f"{len(snap1)} files and {len(rows)} norm rows compared, {len(differing)} differ")
    assert all(c == EXIT_OK for c in codes1 + codes2)
    assert set(snap1) == set(snap2) and not differing and out1 == out2
