from __future__ import annotations

import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gamma

from fracinv.forward import (
    SourceTime,
    TimeGrid,
    caputo_derivative,
    caputo_l1_matrix,
    duhamel_final,
    duhamel_solve,
    neumann_trace,
    pde_residual,
    rl_integral,
    s0_apply,
    s1_apply,
)
from fracinv.spectral import BoxDomain, boundary_quadrature, build_basis, synthesize
from fracinv.specfun import mlf

SQUARE = BoxDomain.cube(2)
BASIS = build_basis(SQUARE, 6)
LAM1 = BASIS.lambdas[0]


def test_source_time():
    g = SourceTime.exponential(2.0, 3.0)
    assert g(np.array([0.0]))[0] == 3.0
    assert g.laplace_at(1.0) == pytest.approx(1.0)
    assert g.check_c0([0.1, 1.0]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        SourceTime.exponential(2.0, 3.0, c0=1.5).check_c0([0.1, 1.0])
    l1, sup = g.check_integrable(60.0)
    assert l1 == pytest.approx(1.5, rel=1e-4) and sup == 3.0
    with pytest.raises(ValueError):
        SourceTime.exponential(-1.0)
    with pytest.raises(ValueError):
        SourceTime(lambda t: t).laplace_at(1.0)


def test_time_grid_validation():
    with pytest.raises(ValueError):
        TimeGrid(np.array([0.1, 0.2]))
    with pytest.raises(ValueError):
        TimeGrid(np.array([0.0, 0.2, 0.2]))
    g = TimeGrid.graded(2.0, 10, 4.0)
    assert g.nodes[0] == 0.0 and g.T == 2.0 and len(g) == 11
    r = g.refine(3)
    assert len(r) == 31 and np.all(np.isin(g.nodes, r.nodes))
    gg = TimeGrid.graded_geometric(2.0, 10, 100.0, 5, 2.0)
    assert gg.T == pytest.approx(100.0) and len(gg) == 16


@pytest.mark.parametrize("beta", [0.3, 0.5, 1.0])
def test_rl_integral_constant(beta):
    assert rl_integral(lambda s: np.ones_like(s), beta, 1.7) == pytest.approx(
        1.7**beta / gamma(beta + 1), rel=1e-13)


def test_rl_integral_examples():
    assert rl_integral(lambda s: s, 1.0, 2.0) == pytest.approx(2.0, rel=1e-13)
    ref = math.sqrt(math.pi) / 2
    assert rl_integral(np.sqrt, 0.5, 1.0) == pytest.approx(ref, rel=1e-6)
    with pytest.raises(ValueError):
        rl_integral(np.sqrt, 0.0, 1.0)
    with pytest.raises(ValueError):
        rl_integral(np.sqrt, -0.5, 1.0)


def test_rl_integral_samples():
    t = np.linspace(0, 1, 101)
    assert rl_integral(2 * t, 0.5, 1.0, nodes=t) == pytest.approx(2 / gamma(2.5), rel=1e-13)


def test_caputo_examples():
    t = TimeGrid.graded(1.0, 400, 1.0).nodes
    for a in (0.2, 0.5, 0.9):
        assert np.max(np.abs(caputo_derivative(np.full_like(t, 3.0), t, a))) == 0.0
        # the L1 scheme is exact on linear functions
        assert caputo_derivative(t, t, a, index=len(t) - 1) == pytest.approx(1 / gamma(2 - a), rel=1e-12)
    fine = TimeGrid.graded(1.0, 2000, 1.0).nodes
    oracle = rl_integral(lambda s: 2 * s, 0.5, 1.0)
    assert oracle == pytest.approx(1.5045, abs=1e-4)
    assert caputo_derivative(fine**2, fine, 0.5, index=len(fine) - 1) == pytest.approx(oracle, rel=5e-5)


def test_caputo_rejects_bad_grid():
    with pytest.raises(ValueError):
        caputo_derivative([0, 1, 2], [0.0, 0.5, 0.4], 0.5)
    with pytest.raises(ValueError):
        caputo_l1_matrix([0.0, 0.5, 0.5], 0.5)


def test_caputo_matrix_matches_pointwise():
    t = TimeGrid.graded(1.0, 50, 3.0).nodes
    v = np.sin(t) + t**0.4
    D = caputo_l1_matrix(t, 0.4)
    for n in (1, 7, 50):
        assert D[n] @ v == pytest.approx(caputo_derivative(v, t, 0.4, index=n), rel=1e-12)


def test_s0_examples(misc_oracle):
    u0 = BASIS.field([1.0, -2.0, 0.5, 0, 0, 3.0])
    assert np.array_equal(s0_apply(0.0, u0, 0.5).coeffs, u0.coeffs)
    e1 = BASIS.unit(0)
    assert s0_apply(0.3, e1, 1.0).coeffs[0] == pytest.approx(math.exp(-LAM1 * 0.3), rel=1e-12)
    ref = next(r["value"] for r in _oracle_rows() if (r["beta1"], r["beta2"]) == (0.5, 1.0))
    assert s0_apply(1.0, e1, 0.5).coeffs[0] == pytest.approx(ref, rel=1e-10)


def _oracle_rows():
    import json
    from pathlib import Path
    rows = json.loads((Path(__file__).parent / "oracles" / "ml_values.json").read_text())
    return [r for r in rows if abs(r["tau"] + 2 * math.pi**2) < 1e-12]


def test_s1_examples():
    e1 = BASIS.unit(0)
    assert s1_apply(0.3, e1, 1.0).coeffs[0] == pytest.approx(math.exp(-LAM1 * 0.3), rel=1e-12)
    ref = next(r["value"] for r in _oracle_rows() if (r["beta1"], r["beta2"]) == (0.5, 0.5))
    assert s1_apply(1.0, e1, 0.5).coeffs[0] == pytest.approx(ref, rel=1e-10)
    with pytest.raises(ValueError):
        s1_apply(0.0, e1, 0.5)


def test_s1_large_time_slope():
    t = np.geomspace(1e4, 1e6, 5)
    v = [s1_apply(x, BASIS.unit(0), 0.5).coeffs[0] for x in t]
    slope = np.polyfit(np.log(t), np.log(v), 1)[0]
    assert slope == pytest.approx(-1.5, rel=0.05)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=6, max_size=6).filter(lambda c: max(map(abs, c)) > 0.1),
       st.sampled_from([0.3, 0.6, 0.9]))
def test_s0_graph_norm_decay(c, a):
    # sup_t ||S0(t) u0||_{D(A)} (1 + t^a) / ||u0||_{D(A)} settles: windows [0, T] agree within 2x
    u0 = BASIS.field(c)
    graph = lambda v: np.sqrt(np.sum((BASIS.lambdas * v.coeffs) ** 2))  # noqa: E731
    t = np.concatenate([[0.0], np.geomspace(1e-6, 1e4, 200)])
    fitted = np.array([graph(s0_apply(x, u0, a)) * (1 + x**a) for x in t]) / graph(u0)
    C = [fitted[t <= T].max() for T in (1.0, 1e2, 1e4)]
    assert np.isfinite(C).all()
    assert max(C) / min(C) <= 2.0


def test_s1_small_time_slope():
    # operator norm of S1(t) from L2 to D(A^{7/8}) ~ t^{a/8 - 1} as t -> 0
    basis = build_basis(SQUARE, 6000)
    a = 0.5
    t = np.geomspace(1e-6, 1e-2, 6)
    lam = basis.lambdas
    norms = [np.max(lam ** 0.875 * x ** (a - 1) * mlf(a, a, -lam * x**a)) for x in t]
    slope = np.polyfit(np.log(t), np.log(norms), 1)[0]
    assert slope == pytest.approx(a / 8 - 1, rel=0.10)


def test_duhamel_without_source_is_s0():
    u0 = BASIS.field([1.0, 0.5, 0, 0, -0.2, 0])
    grid = TimeGrid.graded(2.0, 60, 4.0)
    sol = duhamel_solve(u0, BASIS.unit(1), SourceTime.zero(), grid, 0.5)
    for n in (0, 10, 60):
        assert np.allclose(sol.at(n).coeffs, s0_apply(grid.nodes[n], u0, 0.5).coeffs, rtol=1e-12, atol=0)


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.8])
def test_duhamel_matches_oracles(misc_oracle, alpha):
    g = SourceTime.exponential()
    for row in misc_oracle["duhamel_exp_source"]:
        if row["alpha"] != alpha:
            continue
        grid = TimeGrid.graded(row["t"], 2000, 2 / alpha)
        got = duhamel_solve(BASIS.zero(), BASIS.unit(0), g, grid, alpha).coeffs[-1, 0]
        assert got == pytest.approx(row["value"], rel=1e-6)
        fine = duhamel_final(BASIS.zero(), BASIS.unit(0), g, grid.refine(10), alpha).coeffs[0]
        assert got == pytest.approx(fine, rel=1e-6)


def test_duhamel_final_matches_full():
    g = SourceTime.exponential(0.7)
    grid = TimeGrid.graded(3.0, 120, 2.5)
    u0, f = BASIS.field([0.2, 0, 1, 0, 0, 0]), BASIS.field([1, 2, 0, 0, -1, 0])
    full = duhamel_solve(u0, f, g, grid, 0.8).at(len(grid) - 1).coeffs
    assert np.allclose(duhamel_final(u0, f, g, grid, 0.8).coeffs, full, rtol=1e-13, atol=1e-300)


def test_heat_closed_form():
    g = SourceTime.exponential()
    grid = TimeGrid.graded(1.5, 2000, 1.0)
    f = BASIS.field([1.0, 0.5, 0, 0, 0, 0])
    u0 = BASIS.field([0.0, 0.0, 0.7, 0, 0, 0])
    sol = duhamel_solve(u0, f, g, grid, 1.0)
    t = grid.nodes
    lam = BASIS.lambdas
    for k in range(3):
        exact = (f.coeffs[k] * (np.exp(-t) - np.exp(-lam[k] * t)) / (lam[k] - 1)
                 + u0.coeffs[k] * np.exp(-lam[k] * t))
        assert np.max(np.abs(sol.mode(k) - exact)) <= 1e-8


@settings(max_examples=10, deadline=None)
@given(st.floats(-5, 5).filter(lambda c: abs(c) > 1e-3), st.sampled_from([0.3, 0.6, 0.9]))
def test_duhamel_linearity(c, alpha):
    grid = TimeGrid.graded(1.0, 80, 2 / alpha)
    g = SourceTime.exponential()
    u0, f = BASIS.field([1, 0, 0.5, 0, 0, 0]), BASIS.field([0, 1, 0, 0, 2, 0])
    base = duhamel_solve(u0, f, g, grid, alpha).coeffs
    scaled = duhamel_solve(c * u0, c * f, g, grid, alpha).coeffs
    assert np.allclose(scaled, c * base, rtol=1e-13, atol=1e-15 * abs(c))


def test_duhamel_threads_identical():
    grid = TimeGrid.graded(1.0, 150, 4.0)
    f = BASIS.field(np.arange(1.0, 7.0))
    a = duhamel_solve(BASIS.zero(), f, SourceTime.exponential(), grid, 0.5, threads=1).coeffs
    b = duhamel_solve(BASIS.zero(), f, SourceTime.exponential(), grid, 0.5, threads=3).coeffs
    assert np.array_equal(a, b)


def test_duhamel_input_checks():
    grid = TimeGrid.graded(1.0, 10, 1.0)
    with pytest.raises(ValueError):
        duhamel_solve(BASIS.zero(), build_basis(SQUARE, 3).zero(), SourceTime.zero(), grid, 0.5)
    with pytest.raises(ValueError):
        duhamel_solve(BASIS.zero(), BASIS.zero(), SourceTime.zero(), grid, 1.5)


def test_neumann_examples():
    q = boundary_quadrature(SQUARE, 5)
    assert np.all(neumann_trace(BASIS.zero(), q.points) == 0.0)
    assert neumann_trace(BASIS.unit(0), [[0.5, 0.0]])[0] == pytest.approx(-2 * math.pi, rel=1e-14)
    with pytest.raises(ValueError):
        neumann_trace(BASIS.unit(0), [[0.5 - 1e-6, 0.0]])


def test_neumann_matches_finite_differences():
    field = BASIS.field([1.0, -0.4, 0.3, 0.2, 0.0, 0.1])
    q = boundary_quadrature(SQUARE, 4)
    h = 1e-5
    # one-sided second-order stencil pointing into the domain
    p0 = q.points
    inward = -q.normals
    v0 = synthesize(field, p0)
    v1 = synthesize(field, p0 + h * inward)
    v2 = synthesize(field, p0 + 2 * h * inward)
    fd = -(-3 * v0 + 4 * v1 - v2) / (2 * h)
    assert np.max(np.abs(neumann_trace(field, p0) - fd)) <= 1e-6


def test_pde_residual_zero_data():
    grid = TimeGrid.graded(1.0, 40, 2.0)
    sol = duhamel_solve(BASIS.zero(), BASIS.zero(), SourceTime.zero(), grid, 0.5)
    assert pde_residual(sol, BASIS.zero(), SourceTime.zero()) == 0.0


def test_pde_residual_manufactured():
    # u = t^2 e1 solves the equation with f = e1 and g = D^a t^2 + lam1 t^2
    from fracinv.forward import ForwardSolution
    a = 0.5
    grid = TimeGrid.graded(1.0, 4000, 1.0)
    t = grid.nodes
    coeffs = np.outer(t**2, BASIS.unit(0).coeffs)
    sol = ForwardSolution(grid, BASIS, coeffs, a)
    g = SourceTime(lambda s: 2 * s ** (2 - a) / gamma(3 - a) + LAM1 * s**2)
    assert pde_residual(sol, BASIS.unit(0), g) <= 1e-6


def test_pde_residual_single_mode_convergence():
    a = 0.5
    res = []
    ns = [100, 200, 400]
    for n in ns:
        grid = TimeGrid.graded(1.0, n, 2 / a)
        sol = duhamel_solve(BASIS.unit(0), BASIS.zero(), SourceTime.zero(), grid, a)
        res.append(pde_residual(sol, BASIS.zero(), SourceTime.zero()))
    slope = np.polyfit(np.log(ns), np.log(res), 1)[0]
    assert -slope >= (2 - a) - 0.2


def test_forward_csv(tmp_path):
    grid = TimeGrid.graded(1.0, 3, 1.0)
    sol = duhamel_solve(BASIS.unit(0), BASIS.zero(), SourceTime.zero(), grid, 0.5)
    path = tmp_path / "u.csv"
    sol.write_csv(path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["t", "mode", "m1", "m2", "coefficient"]
    assert len(rows) == 1 + 4 * len(BASIS)
    assert float(rows[1][-1]) == 1.0
