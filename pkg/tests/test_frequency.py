from __future__ import annotations

import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracinv.forward import SourceTime, TimeGrid
from fracinv.frequency import (
    CertificationError,
    ContinuationContext,
    Probe,
    TailError,
    TraceData,
    certify,
    continuation_context,
    directions,
    eval_F,
    harmonic_measure,
    laplace_boundary,
    moment_identity_residual,
    moment_lhs,
    probe_sweep,
    quadrant_grid,
    resolvent_solve,
    standard_probes,
    two_constants_margin,
    write_probe_csv,
)
from fracinv.inverse import SOURCE, INITIAL_STATE, SolverConfig, synthesize_trace
from fracinv.spectral import BoxDomain, boundary_quadrature, build_basis, field_fourier, l1_norm, project
from fracinv.specfun import mlf

SQUARE = BoxDomain.cube(2)
BASIS = build_basis(SQUARE, 10)
QUAD = boundary_quadrature(SQUARE, 3)


def _trace(times, profile, tail_exponent, alpha=0.5):
    w = np.linspace(1.0, 2.0, len(QUAD))
    return TraceData(times, QUAD, np.outer(profile, w), alpha, tail_exponent), w


def test_probe_invariants():
    pr = Probe(3.0, (0.6, 0.8), 0.5)
    assert pr.p == pytest.approx(81.0)
    assert np.allclose(pr.zeta, [1.8j, 2.4j])
    with pytest.raises(ValueError):
        Probe(0.0, (1.0, 0.0), 0.5)
    with pytest.raises(ValueError):
        Probe(1.0, (1.0, 1e-6), 0.5)
    for d in (2, 3):
        xi = directions(d, 8)
        assert np.max(np.abs(np.linalg.norm(xi, axis=1) - 1)) <= 1e-14
        for pr in standard_probes(d, 0.5):
            assert abs(math.hypot(*pr.xi) - 1) <= 1e-14
    with pytest.raises(ValueError):
        directions(4, 3)


def test_laplace_exponential_trace():
    t = TimeGrid.graded_geometric(1.0, 3000, 60.0, 3000, 1.0).nodes
    tr, w = _trace(t, np.exp(-t), 1.0)
    for p in (0.1, 1.0, 7.0, 50.0):
        assert np.allclose(laplace_boundary(tr, p), w / (1 + p), rtol=1e-6, atol=0)


def test_laplace_large_p_rate():
    t = TimeGrid.graded(30.0, 20000, 3.0).nodes
    tr, w = _trace(t, np.exp(-t), 1.0)
    vals = [np.max(np.abs(laplace_boundary(tr, p))) for p in (1e2, 1e3, 1e4)]
    assert vals[0] > vals[1] > vals[2]
    assert np.allclose(np.array(vals) * np.array([1e2, 1e3, 1e4]), w.max(), rtol=2e-2)


@pytest.mark.parametrize("alpha", [0.5, 0.8])
def test_laplace_mittag_leffler_traces(alpha):
    lam = 2 * math.pi**2
    t = TimeGrid.graded_geometric(2.0, 4000, 1e4, 3000, 2 / alpha).nodes
    # S0 trace transforms to p^{a-1}/(p^a+lam)
    tr0, w = _trace(t, mlf(alpha, 1.0, -lam * t**alpha), alpha, alpha)
    # the S1 trace is sampled through its primitive: int_0^t S1 = t^a E_{a,a+1}
    # and L[S1](p) = p L[K](p)
    trk, _ = _trace(t, t**alpha * mlf(alpha, alpha + 1, -lam * t**alpha), alpha, alpha)
    for p in np.geomspace(0.1, 100, 7):
        ref0 = p ** (alpha - 1) / (p**alpha + lam)
        assert np.allclose(laplace_boundary(tr0, p), w * ref0, rtol=1e-6, atol=0)
        assert np.allclose(p * laplace_boundary(trk, p), w / (p**alpha + lam), rtol=1e-6, atol=0)


def test_laplace_tail_guard():
    t = np.linspace(0.0, 2.0, 200)
    tr, _ = _trace(t, 1 / (1 + t), 1.0)
    with pytest.raises(TailError):
        laplace_boundary(tr, 0.01)
    with pytest.raises(ValueError):
        laplace_boundary(tr, 0.0)
    with pytest.raises(ValueError):
        laplace_boundary(TraceData(t, QUAD, tr.values, 0.5, None), 1.0)


def test_trace_norm_needs_tail():
    t = np.linspace(0.0, 2.0, 20)
    tr, _ = _trace(t, np.ones_like(t), None)
    with pytest.raises(ValueError):
        tr.norm()
    tr, w = _trace(t, np.ones_like(t), 2.0)
    ref = math.sqrt(w**2 @ QUAD.weights) * (2.0 + 2.0 / 7.0) ** 0.25
    assert tr.norm() == pytest.approx(ref, rel=1e-13)
    assert tr.scaled(3.0).norm() == pytest.approx(3 * tr.norm(), rel=1e-14)


def test_resolvent_examples():
    e1 = BASIS.unit(0)
    assert resolvent_solve(2.0, e1).coeffs[0] == pytest.approx(1 / (BASIS.lambdas[0] + 4))
    rhs = BASIS.field(np.linspace(-1, 1, 10))
    assert np.allclose(resolvent_solve(0.0, rhs).coeffs, rhs.coeffs / BASIS.lambdas, rtol=1e-15)
    U = resolvent_solve(1.7, rhs)
    back = (BASIS.lambdas + 1.7**2) * U.coeffs
    assert np.linalg.norm(back - rhs.coeffs) <= 1e-12


def test_moment_identity_trivial():
    g = SourceTime.exponential()
    pr = Probe(1.0, (1.0, 0.0), 0.5)
    assert moment_identity_residual(pr, BASIS.zero(), BASIS.zero(), g) == 0.0


def test_moment_identity_example():
    g = SourceTime.exponential()
    pr = Probe(3.0, (1.0, 0.0), 0.5)
    assert moment_identity_residual(pr, BASIS.unit(0), BASIS.zero(), g) <= 1e-10


@pytest.mark.parametrize("alpha", [0.5, 0.9])
def test_moment_identity_all_modes(alpha):
    g = SourceTime.exponential()
    worst = 0.0
    for pr in standard_probes(2, alpha):
        for k in range(10):
            worst = max(worst, moment_identity_residual(pr, BASIS.unit(k), BASIS.zero(), g))
            worst = max(worst, moment_identity_residual(pr, BASIS.zero(), BASIS.unit(k), g))
    assert worst <= 1e-10


def test_moment_identity_cube():
    basis = build_basis(BoxDomain.cube(3), 6)
    g = SourceTime.exponential(2.0)
    for pr in standard_probes(3, 0.6, n_dirs=4):
        assert moment_identity_residual(pr, basis.unit(5), basis.unit(2), g) <= 1e-10


def test_moment_identity_wrong_sign_fails():
    # guards the orientation of the boundary integral
    g = SourceTime.exponential()
    pr = Probe(1.0, (1.0, 0.0), 0.5)
    _, lhs, rhs = moment_identity_residual(pr, BASIS.unit(0), BASIS.zero(), g, details=True)
    assert abs(lhs + rhs) > 0.5 * abs(lhs)


def test_moment_identity_overflow_guard():
    pr = Probe(2000.0, (1.0, 0.0), 0.5)
    with pytest.raises(OverflowError):
        moment_lhs(pr, BASIS.unit(0), BASIS.zero(), SourceTime.exponential())


@pytest.mark.parametrize("target", [SOURCE, INITIAL_STATE])
def test_moment_identity_from_trace(target):
    alpha = 0.5
    g = SourceTime.exponential()
    unknown = BASIS.field([1.0, 0.5, 0, 0.3, 0, 0, 0, 0, 0, 0])
    trace = synthesize_trace(unknown, g, alpha, target, SolverConfig())
    f, u0 = (unknown, BASIS.zero()) if target == SOURCE else (BASIS.zero(), unknown)
    for pr in standard_probes(2, alpha, n_dirs=4):
        assert moment_identity_residual(pr, f, u0, g, source=trace) <= 1e-3


def test_probe_csv(tmp_path):
    probes = standard_probes(2, 0.5, omegas=(1.0,), n_dirs=3)
    recs = probe_sweep(probes, BASIS.unit(0), BASIS.zero(), SourceTime.exponential(), n_dirs=3)
    path = tmp_path / "probes.csv"
    write_probe_csv(recs, path)
    rows = list(csv.DictReader(path.open()))
    assert list(rows[0]) == ["omega", "xi_id", "lhs_re", "lhs_im", "rhs_re", "rhs_im", "residual"]
    assert [r["xi_id"] for r in rows] == ["0", "1", "2"]


# {{{ continuation


def test_harmonic_measure_examples():
    for t in (-0.999, 0.0, 3.0, 1e4):
        assert harmonic_measure(t) == 1.0
    for t in (1e-3, 1.0, 50.0):
        assert harmonic_measure(-1 - 1j * t) == pytest.approx(0.0, abs=1e-15)
    assert harmonic_measure(-1j) == pytest.approx(0.5, abs=1e-15)
    for t in (0.2, 3.0):
        assert harmonic_measure(-1j * t) == pytest.approx(2 / math.pi * math.atan(1 / t), rel=1e-14)
    with pytest.raises(ValueError):
        harmonic_measure(-1 + 0j)


def test_harmonic_measure_range_and_laplacian():
    Z = quadrant_grid(60, 1e-3, 10.0)
    W = harmonic_measure(np.nan_to_num(Z, nan=0.0))
    assert np.all((W >= 0) & (W <= 1))
    h = 1e-3
    x, y = np.meshgrid(np.linspace(-0.9, 5, 40), np.linspace(-5, -0.1, 40))
    z = x + 1j * y
    lap = (harmonic_measure(z + h) + harmonic_measure(z - h) + harmonic_measure(z + 1j * h)
           + harmonic_measure(z - 1j * h) - 4 * harmonic_measure(z)) / h**2
    assert np.max(np.abs(lap)) <= 1e-6 / h**2


def _ctx(phi, s=5, xi=(1.0, 0.0)):
    return continuation_context(phi, s, xi)


def test_F_examples():
    ctx = _ctx(BASIS.unit(0))
    assert eval_F(ctx, 0.0) == 0
    bound = math.exp(2 * SQUARE.kappa) * l1_norm(BASIS.unit(0)) / (2 * math.pi)
    Z = quadrant_grid(40, 1e-3, 1e2).ravel()
    Z = Z[~np.isnan(Z)]
    assert np.max(np.abs(eval_F(ctx, Z))) <= bound
    xi = np.array(ctx.xi)
    for t in (0.5, 2.0, 9.0):
        ref = (t / math.sqrt(4 + t * t)) ** ctx.s * abs(field_fourier(ctx.phi, t * xi))
        assert abs(eval_F(ctx, -1j * t)) == pytest.approx(ref, rel=1e-12)
    with pytest.raises(ValueError):
        eval_F(ctx, -1.5)


def test_continuation_constants():
    phi = BASIS.unit(0)
    ctx = _ctx(phi)
    assert ctx.M == pytest.approx(1 + math.exp(2 * SQUARE.kappa) * l1_norm(phi) / (2 * math.pi))
    t = np.linspace(-1, 50, 3001)
    assert np.max(np.abs(eval_F(ctx, t))) <= ctx.m


def test_margin_examples():
    ctx = _ctx(BASIS.unit(0))
    for t in (-0.5, 0.0, 2.0, 40.0):
        assert two_constants_margin(ctx, t) >= (ctx.M - 1) * ctx.m - 1e-15
    for t in (0.1, 1.0, 10.0):
        assert two_constants_margin(ctx, -1 - 1j * t) >= 0.0
    assert two_constants_margin(ctx, -0.5 - 0.5j) >= 0.0
    zero = ContinuationContext(BASIS.unit(0), 5, (1.0, 0.0), SQUARE.kappa, 2.0, 0.0)
    with pytest.raises(CertificationError):
        two_constants_margin(zero, -0.5 - 0.5j)


@settings(max_examples=8, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=10, max_size=10).filter(lambda c: max(map(abs, c)) > 0.05),
       st.floats(0, 2 * math.pi), st.sampled_from([3, 5]))
def test_certification_random_fields(c, theta, s):
    ctx = _ctx(BASIS.field(c), s, (math.cos(theta), math.sin(theta)))
    assert certify(ctx, n=60).passed


def test_certification_bump():
    bump = project(lambda p: np.exp(-20.0 * np.sum(p**2, axis=1)), BASIS, 64)
    rep = certify(_ctx(bump, 3, (0.6, 0.8)), n=100)
    assert rep.passed
    data = rep.to_json()
    assert set(data) >= {"grid", "min_margin", "argmin", "M", "m", "s", "xi"}


# }}}
