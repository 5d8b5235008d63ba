import json
import math

import numpy as np
import pytest

from anisons import harness
from anisons.datagen import decompose_horizontal, gen_cone_union, gen_thm12_data, layered_example
from anisons.exceptions import SweepFailedError, TrajectoryError
from anisons.harness import (
    RECIPES,
    Recipe,
    SweepSettings,
    assemble_forcing,
    boundary_slice_report,
    check_inequality_suite,
    compute_pressure_2d,
    embedding_constant,
    fit_loglog,
    judge,
    localized_taylor_green,
    refine,
    run_sweep,
    slice_energy_defects,
)
from anisons.solvers import SolveConfig, rest_trajectory, solve_ns2d_stack, solve_ns3d, solve_transport_diffusion
from anisons.spectral import Grid, SpectralField, VelocityField, forward_transform
from oracles import signed_integers, taylor_green


def planar(grid, fn):
    x1, x2, x3 = grid.mesh()
    return forward_transform(fn(x1, x2, x3), grid)


# --------------------------------------------------------------------------- pressure


def test_taylor_green_pressure_closed_form():
    g = Grid(32, 32, 4)
    x1, x2, _ = g.mesh()
    u1, u2, p = taylor_green(x1, x2, 0.0, 1.7)
    out = compute_pressure_2d((forward_transform(u1, g), forward_transform(u2, g)))
    assert np.abs(out.to_physical() - p).max() <= 1e-10


def test_pressure_solves_its_poisson_problem():
    g = Grid(24, 24, 8)
    # trigonometric polynomials below the 2/3 cutoff so the products are exact
    a = planar(g, lambda x1, x2, x3: np.cos(x1 + 2 * x2) * (1 + np.sin(x3)) + 0.3 * np.sin(3 * x2))
    b = planar(g, lambda x1, x2, x3: -0.5 * np.cos(x1 + 2 * x2) * (1 + np.sin(x3)) + np.cos(2 * x1))
    p = compute_pressure_2d((a, b)).to_physical()
    va, vb = a.to_physical(), b.to_physical()
    n1, n2 = g.n1, g.n2
    k1 = signed_integers(n1)[:, None, None].astype(float)
    k2 = signed_integers(n2)[None, :, None].astype(float)

    def hat(f):
        return np.fft.fft2(f, axes=(0, 1))

    rhs = -(k1**2 * hat(va * va) + 2 * k1 * k2 * hat(va * vb) + k2**2 * hat(vb * vb))
    lhs = (k1**2 + k2**2) * hat(p)
    rhs[0, 0] = 0.0
    assert np.abs(lhs - rhs).max() <= 1e-10 * np.abs(rhs).max()


def test_pressure_of_rest_is_zero():
    g = Grid.cube(8)
    z = SpectralField.zeros(g)
    assert np.abs(compute_pressure_2d((z, z)).coeffs).max() == 0.0


# --------------------------------------------------------------------------- forcing


def small_pipeline(eps=0.25, t_end=0.2, amplitude=1.0, with_u=False):
    base = Grid(16, 16, 8)
    (a, b), w0 = layered_example(base, zero_slice=False, amplitude=amplitude)
    v = gen_thm12_data((a, b), w0, eps)
    dec = decompose_horizontal(v, eps)
    cfg = SolveConfig(dt=0.02, t_end=t_end)
    vbar = solve_ns2d_stack(dec.part_a, cfg)
    w = solve_transport_diffusion(dec.part_b, vbar, cfg)
    u = solve_ns3d(localized_taylor_green(v.grid, 0.2, 2.0), cfg) if with_u else None
    return vbar, w, u


def test_forcing_of_rest_is_zero():
    g = Grid.cube(8)
    cfg = SolveConfig(dt=0.1, t_end=0.2)
    zero = solve_ns3d(VelocityField.zeros(g), cfg)
    split = assemble_forcing(zero, zero, zero)
    assert all(v == 0.0 for v in split.norms.values())
    assert all(np.abs(f.coeffs).max() == 0 for f in split.G1 + split.G2 + split.G3 + split.H)


def test_forcing_parts_reconstruct_the_defect():
    vbar, w, u = small_pipeline(with_u=True)
    split = assemble_forcing(u, vbar, w)
    assert split.reconstruction_defect <= 1e-12
    g = vbar.grid
    k3 = 2 * np.pi * signed_integers(g.n3) / g.L3
    vb = vbar.coeffs(1)
    # Nyquist planes are not retained modes
    keep = [np.abs(signed_integers(n)) != n // 2 for n in g.shape]
    keep = keep[0][:, None, None] & keep[1][None, :, None] & keep[2][None, None, :]
    diff = (split.G1[1].coeffs[:2] + k3**2 * vb[:2]) * keep
    assert np.abs(diff).max() <= 1e-14 * np.abs(vb).max() * k3.max() ** 2
    assert np.abs(split.G1[1].coeffs[2]).max() == 0.0
    assert np.abs(split.G2[1].coeffs[:2]).max() == 0.0


def test_forcing_without_u_has_no_H_part():
    vbar, w, _ = small_pipeline()
    split = assemble_forcing(None, vbar, w, keep_fields=False)
    assert split.norms["H"] == 0.0 and split.G1 is None
    assert split.norms["F"] == pytest.approx(split.norms["G"], rel=1e-12)


def test_coupling_term_shrinks_with_the_slice_amplitude():
    vb1, w1, u1 = small_pipeline(amplitude=1.0, with_u=True)
    vb4, w4, u4 = small_pipeline(amplitude=0.25, with_u=True)
    h1 = assemble_forcing(u1, vb1, w1, keep_fields=False).norms["H"]
    h4 = assemble_forcing(u4, vb4, w4, keep_fields=False).norms["H"]
    assert 0 < h4 < h1


def test_forcing_needs_aligned_trajectories():
    vbar, w, _ = small_pipeline()
    other = solve_ns2d_stack(VelocityField.zeros(vbar.grid), SolveConfig(dt=0.02, t_end=0.1))
    with pytest.raises(TrajectoryError):
        assemble_forcing(None, vbar, other)


# --------------------------------------------------------------------------- boundary slice


def test_boundary_slice_of_heat_flow_by_hand():
    g = Grid.cube(16)
    x1, x2, x3 = g.mesh()
    w0 = VelocityField.from_physical(
        g, np.stack([np.sin(x2) * (1 + np.cos(x3)), np.sin(x1) * np.sin(x3), 0 * x1]), divfree=True
    )
    cfg = SolveConfig(dt=0.05, t_end=0.2)
    rest = rest_trajectory(g, 0.2)
    w = solve_transport_diffusion(w0, rest, cfg)
    zero = solve_ns2d_stack(VelocityField.zeros(g), cfg)
    rep = boundary_slice_report(zero, w)
    # the slice x3 = 0 holds (2 sin x2, 0); its L2 norm decays, so the sup is at t = 0
    assert rep.app_slice_linf_l2 == pytest.approx(2 * math.sqrt(2 * np.pi**2), rel=1e-12)
    assert rep.d33w3 == 0.0 and rep.T_eps == 0.0
    assert rep.slice_energy_defect == 0.0
    assert [k for k, _ in rep.rows()][0] == "app_slice_linf_l2"


def test_zero_slice_stays_at_rest():
    base = Grid(16, 16, 8)
    (a, b), w0 = layered_example(base)
    v = gen_thm12_data((a, b), w0, 0.25, zero_slice=True)
    dec = decompose_horizontal(v, 0.25)
    cfg = SolveConfig(dt=0.01, t_end=0.2)
    vbar = solve_ns2d_stack(dec.part_a, cfg)
    w = solve_transport_diffusion(dec.part_b, vbar, cfg)
    rep = boundary_slice_report(vbar, w)
    assert rep.slice_energy_defect <= 1e-10
    assert np.abs(vbar.slice_energy[:, 0]).max() <= 1e-28 * vbar.slice_energy.max()
    assert slice_energy_defects(vbar).max() <= 1e-5


def test_slice_defects_need_stack_diagnostics():
    g = Grid.cube(8)
    with pytest.raises(TrajectoryError):
        slice_energy_defects(rest_trajectory(g, 1.0))


# --------------------------------------------------------------------------- fitting and verdicts


def test_fit_recovers_an_exact_power_law():
    eps = [1 / 4, 1 / 8, 1 / 16, 1 / 32]
    slope, intercept, r2 = fit_loglog(eps, [3 * e**1.5 for e in eps])
    assert slope == pytest.approx(1.5, abs=1e-12)
    assert intercept == pytest.approx(math.log(3), abs=1e-12)
    assert r2 == pytest.approx(1.0, abs=1e-12)


def test_verdict_rules():
    eps = [1 / 4, 1 / 8, 1 / 16, 1 / 32]
    slope_rec = Recipe("t", "p", "k", "slope", 1.0, 0.1)
    assert judge(slope_rec, eps, [1, 1, 1, 1], 1.05)[0]
    assert not judge(slope_rec, eps, [1, 1, 1, 1], 1.2)[0]
    strict = Recipe("t", "p", "k", "slope", 1.0, 0.1, min_r2=0.999)
    assert not judge(strict, eps, [1, 1, 1, 1], 1.0, 0.99)[0]
    assert judge(strict, eps, [1, 1, 1, 1], 1.0, 0.9995)[0]
    bounded = Recipe("t", "p", "k", "bounded")
    assert judge(bounded, eps, [1, 2, 2.9, 1.5], 0)[0]
    assert not judge(bounded, eps, [1, 2, 3.0, 1.5], 0)[0]
    le = Recipe("t", "p", "k", "le", 1.0)
    assert judge(le, eps, [0.5, 1.0, 0.9, 0.1], 0)[0]
    assert not judge(le, eps, [0.5, 1.001, 0.9, 0.1], 0)[0]
    dec = Recipe("t", "p", "k", "decreasing")
    assert judge(dec, eps, [4, 3, 2, 1], 0)[0]
    assert judge(dec, eps[::-1], [1, 2, 3, 4], 0)[0]
    assert not judge(dec, eps, [4, 3, 3, 1], 0)[0]
    nv = Recipe("t", "p", "k", "nonvanishing")
    assert judge(nv, eps, [1, 0.9, 0.7, 0.5], 0)[0]
    assert not judge(nv, eps, [1, 0.9, 0.7, 0.3], 0)[0]
    with pytest.raises(ValueError):
        judge(Recipe("t", "p", "k", "bogus"), eps, [1] * 4, 0)


@pytest.mark.parametrize(
    "eps", [[1 / 4, 1 / 8, 1 / 16], [1 / 4, 1 / 8, 1 / 16, 1 / 30], [1, 1 / 2, 1 / 4, 1 / 8], [0.5, 0.25, 0.125, -1]]
)
def test_sweeps_need_four_geometric_eps_values(eps):
    with pytest.raises(ValueError):
        run_sweep("thm11-aniso-norm", eps)


def test_recipe_table_covers_every_pipeline():
    assert set(r.pipeline for r in RECIPES.values()) == set(harness.PIPELINES)
    for r in RECIPES.values():
        if r.kind == "slope":
            assert r.expected is not None and r.tolerance is not None


# --------------------------------------------------------------------------- sweeps with a synthetic pipeline


@pytest.fixture
def fake_pipeline(monkeypatch):
    def pipeline(eps, st):
        if eps < 1 / 40 and st.seed == 1:
            raise ValueError("synthetic failure")
        return {"q": 2.0 * eps**2}

    monkeypatch.setitem(harness.PIPELINES, "synthetic", pipeline)
    harness.measure.cache_clear()
    yield Recipe("synthetic-square", "synthetic", "q", "slope", 2.0, 0.01)
    harness.measure.cache_clear()


EPS5 = [1 / 4, 1 / 8, 1 / 16, 1 / 32, 1 / 64]


def test_sweep_fits_and_reports(fake_pipeline, tmp_path):
    rep = run_sweep(fake_pipeline, EPS5, out_dir=tmp_path)
    assert rep.verdict and rep.slope == pytest.approx(2.0, abs=1e-12)
    assert rep.line().startswith("PASS synthetic-square")
    data = json.loads((tmp_path / "synthetic-square.json").read_text())
    assert data["eps_values"] == EPS5
    assert len(list((tmp_path / "synthetic-square").glob("eps_*.json"))) == 5
    assert (tmp_path / "synthetic-square.csv").read_text().splitlines()[0] == "eps,q"


def test_failed_points_are_recorded(fake_pipeline):
    rep = run_sweep(fake_pipeline, EPS5, settings=SweepSettings(seed=1))
    assert len(rep.eps_values) == 4 and repr(1 / 64) in rep.failures
    with pytest.raises(SweepFailedError):
        run_sweep(fake_pipeline, EPS5[1:], settings=SweepSettings(seed=1))


def test_report_files_are_deterministic(fake_pipeline, tmp_path):
    run_sweep(fake_pipeline, EPS5, out_dir=tmp_path / "a")
    harness.measure.cache_clear()
    run_sweep(fake_pipeline, EPS5, out_dir=tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


# --------------------------------------------------------------------------- inequality suite


def test_embedding_constant_values():
    assert embedding_constant(0.0) == 1.0
    assert embedding_constant(0.5) == pytest.approx(2**-0.25)


def test_refinement_preserves_samples():
    g = Grid.cube(8)
    u = localized_taylor_green(g, 1.0, 1.5)
    fine = refine(u)
    assert fine.grid.shape == (16, 16, 16)
    assert np.abs(fine.to_physical()[:, ::2, ::2, ::2] - u.to_physical()).max() <= 1e-13


def test_suite_on_the_zero_field():
    res = check_inequality_suite([VelocityField.zeros(Grid.cube(8))])
    assert all(r.passed for r in res.values())


def test_suite_on_a_mixed_corpus():
    eps = 0.25
    g = Grid.cube(16).scaled_vertically(eps)
    corpus = [gen_cone_union(k, eps, g) for k in range(4)]
    x1, x2, x3 = Grid.cube(8).mesh()
    k3 = 1.0
    layered = np.stack([np.sin(x2) * (1 - np.cos(k3 * x3)), np.sin(x1) * (1 - np.cos(k3 * x3)), 0 * x1])
    corpus.append((VelocityField.from_physical(Grid.cube(8), layered), eps))
    res = check_inequality_suite(corpus, eps=eps)
    assert all(r.passed for r in res.values()), {k: (r.worst_ratio, r.skipped) for k, r in res.items()}
    assert res["gagliardo-nirenberg"].checked == 1
    assert res["aniso-cone"].checked == 4 and len(res["aniso-cone"].skipped) == 1
    assert res["embedding"].constant == embedding_constant(0.25)
