"""Laplace-domain side: boundary moments, resolvents, and the continuation bound.

With ``p = omega^{2/alpha}`` the Laplace transform ``U`` of the solution solves

    (-Laplace + omega^2) U = g~(p) f + omega^{2 - 2/alpha} u0,    U = 0 on the boundary,

and testing against the harmonic exponential ``exp(omega x . xi)`` gives

    g~(p) f^(i omega xi) + omega^{2-2/alpha} u0^(i omega xi)
        = -(2 pi)^{-d/2} int_{boundary} d_nu U(x) exp(omega x . xi) dsigma(x).

The sign comes from Green's formula with the outward normal.
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass

import mpmath
import numpy as np
from scipy.optimize import minimize_scalar

from . import spectral
from .forward import ForwardSolution, SourceTime
from .spectral import BoundaryQuadrature, EigenBasis, SpectralField

LOG_OVERFLOW = 700.0


class TailError(RuntimeError):
    """The analytic tail of a time integral is too large to trust the window."""


class CertificationError(RuntimeError):
    """A numerically certified inequality failed."""


# {{{ probes


@dataclass(frozen=True)
class Probe:
    omega: float
    xi: tuple[float, ...]
    alpha: float

    def __post_init__(self) -> None:
        xi = tuple(float(v) for v in self.xi)
        object.__setattr__(self, "xi", xi)
        if not self.omega > 0:
            raise ValueError("omega must be positive")
        if abs(math.sqrt(sum(v * v for v in xi)) - 1.0) > 1e-14:
            raise ValueError("xi must be a unit vector")

    @property
    def p(self) -> float:
        return self.omega ** (2.0 / self.alpha)

    @property
    def zeta(self) -> np.ndarray:
        """The complex wavevector i omega xi."""
        return 1j * self.omega * np.array(self.xi)


def directions(d: int, count: int) -> np.ndarray:
    """Equi-angular unit vectors on the circle (d=2) or a Fibonacci sphere (d=3)."""
    if d == 2:
        th = 2 * np.pi * np.arange(count) / count
        xi = np.stack([np.cos(th), np.sin(th)], axis=1)
    elif d == 3:
        k = np.arange(count) + 0.5
        z = 1 - 2 * k / count
        phi = np.pi * (1 + math.sqrt(5)) * k
        r = np.sqrt(1 - z * z)
        xi = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    else:
        raise ValueError("d must be 2 or 3")
    return xi / np.linalg.norm(xi, axis=1, keepdims=True)


STANDARD_OMEGAS = (0.5, 1.0, 3.0, 10.0)


def standard_probes(d: int, alpha: float, omegas=STANDARD_OMEGAS, n_dirs: int = 8) -> list[Probe]:
    return [Probe(float(w), tuple(x), alpha) for w in omegas for x in directions(d, n_dirs)]


# }}}


# {{{ boundary traces


@dataclass(frozen=True, eq=False)
class TraceData:
    """Normal derivative samples ``values[n, q]`` at time ``times[n]`` and boundary node q.

    ``tail_exponent`` declares the decay ``trace(t) ~ trace(T) (T/t)^gamma``
    beyond the last time; both the Laplace transform and the time norm use it.
    """

    times: np.ndarray
    quad: BoundaryQuadrature
    values: np.ndarray
    alpha: float
    tail_exponent: float | None = None

    def scaled(self, c: float) -> TraceData:
        return TraceData(self.times, self.quad, c * self.values, self.alpha, self.tail_exponent)

    def spatial_norms(self) -> np.ndarray:
        return np.sqrt(np.abs(self.values) ** 2 @ self.quad.weights)

    def norm(self) -> float:
        """L^{2/alpha} in time of the L2(boundary) norm, over the half line."""
        if self.tail_exponent is None:
            raise ValueError("the time norm needs a declared tail model")
        q = 2.0 / self.alpha
        gam = self.tail_exponent
        if q * gam <= 1:
            raise ValueError("tail decays too slowly for an L^{2/alpha} norm")
        n = self.spatial_norms()
        T = self.times[-1]
        window = np.trapezoid(n**q, self.times)
        tail = n[-1] ** q * T / (q * gam - 1)
        return float((window + tail) ** (1.0 / q))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "boundary_point_id", "value"])
            for n, t in enumerate(self.times):
                for q, v in enumerate(self.values[n]):
                    w.writerow([f"{t:.17g}", q, f"{v:.17g}"])


@functools.lru_cache(maxsize=32)
def _quadrature(domain: spectral.BoxDomain, order: int) -> BoundaryQuadrature:
    return spectral.boundary_quadrature(domain, order)


def measure_trace(solution: ForwardSolution, quad: BoundaryQuadrature,
                  tail_exponent: float | None) -> TraceData:
    """Neumann trace of a forward solution at the nodes of a boundary quadrature."""
    dn = spectral.mode_normal_derivatives(solution.basis, quad.points, quad.normals)
    return TraceData(solution.grid.nodes, quad, solution.coeffs @ dn.T, solution.alpha,
                     tail_exponent)


def add_noise(trace: TraceData, level: float, rng: np.random.Generator) -> TraceData:
    """Additive Gaussian noise with standard deviation ``level`` times the rms of the trace."""
    rms = math.sqrt(float(np.mean(trace.values**2)))
    noisy = trace.values + level * rms * rng.standard_normal(trace.values.shape)
    return TraceData(trace.times, trace.quad, noisy, trace.alpha, trace.tail_exponent)


def _phi_pair(q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """int_0^1 exp(-q s) (1-s) ds and int_0^1 exp(-q s) s ds."""
    q = np.asarray(q, dtype=float)
    pa = np.empty_like(q)
    pb = np.empty_like(q)
    small = q < 0.05
    qs = q[small]
    sa = np.zeros_like(qs)
    sb = np.zeros_like(qs)
    term = np.ones_like(qs)
    for k in range(12):
        sa += term / ((k + 1) * (k + 2))
        sb += term / (k + 2)
        term = term * (-qs) / (k + 1)
    pa[small], pb[small] = sa, sb
    ql = q[~small]
    em = np.exp(-ql)
    pa[~small] = (ql + np.expm1(-ql)) / ql**2
    pb[~small] = (1 - (1 + ql) * em) / ql**2
    return pa, pb


def laplace_weights(times: np.ndarray, p: float, tail_exponent: float | None):
    """Weights ``w`` with ``int_0^inf exp(-p t) v(t) dt ~ w @ v`` for piecewise-linear v.

    Returns ``(window_weights, tail_weight)``; the tail weight multiplies
    ``v(T)`` under the power-law model ``v(T) (T/t)^gamma``.
    """
    t = np.asarray(times, dtype=float)
    h = np.diff(t)
    pa, pb = _phi_pair(p * h)
    decay = np.exp(-p * t[:-1]) * h
    w = np.zeros(len(t))
    w[:-1] += decay * pa
    w[1:] += decay * pb
    if tail_exponent is None:
        return w, 0.0
    T = t[-1]
    tail = float(T * mpmath.expint(tail_exponent, p * T))
    return w, tail


def laplace_boundary(trace: TraceData, p: float, tail_tol: float = 0.01,
                     with_tail: bool = False):
    """Laplace transform of the trace at every boundary node.

    Raises :class:`TailError` when the analytic tail exceeds ``tail_tol`` of
    the window integral (in the boundary L2 norm).
    """
    if not p > 0:
        raise ValueError("p must be positive")
    if trace.tail_exponent is None:
        raise ValueError("the Laplace transform needs a declared tail model")
    w, tw = laplace_weights(trace.times, p, trace.tail_exponent)
    window = w @ trace.values
    tail = tw * trace.values[-1]
    wq = trace.quad.weights
    tail_norm = math.sqrt(float(wq @ tail**2))
    win_norm = math.sqrt(float(wq @ window**2))
    if tail_norm > tail_tol * win_norm:
        raise TailError(f"tail {tail_norm:.3e} exceeds {tail_tol:g} of window {win_norm:.3e} "
                        f"at p = {p:g}")
    out = window + tail
    return (out, tail_norm) if with_tail else out


# }}}


# {{{ resolvent and moment identity


def resolvent_solve(omega: float, rhs: SpectralField) -> SpectralField:
    """``(-Laplace + omega^2)^{-1} rhs`` with Dirichlet conditions."""
    if omega < 0:
        raise ValueError("omega must be nonnegative")
    return SpectralField(rhs.basis, rhs.coeffs / (rhs.basis.lambdas + omega**2))


def elliptic_rhs(probe: Probe, f: SpectralField, u0: SpectralField, g: SourceTime) -> SpectralField:
    gp = complex(np.asarray(g.laplace_at(probe.p))) if np.any(f.coeffs) else 0.0
    w = probe.omega ** (2.0 - 2.0 / probe.alpha)
    c = gp * f.coeffs + w * u0.coeffs
    return SpectralField(f.basis, c.real if np.isrealobj(c) or not np.any(c.imag) else c)


def _check_exponent(probe: Probe, kappa: float) -> None:
    if probe.omega * kappa > LOG_OVERFLOW:
        raise OverflowError(f"omega * kappa = {probe.omega * kappa:.1f} overflows exp")


def boundary_moment(dn_values: np.ndarray, quad: BoundaryQuadrature, probe: Probe) -> complex:
    """``-(2 pi)^{-d/2} int d_nu U exp(omega x . xi) dsigma`` from nodal normal derivatives."""
    d = quad.points.shape[1]
    expo = probe.omega * quad.points @ np.array(probe.xi)
    shift = float(expo.max())
    if shift > LOG_OVERFLOW:
        raise OverflowError(f"exponent {shift:.1f} overflows exp")
    val = np.sum(quad.weights * dn_values * np.exp(expo - shift))
    return complex(-val * math.exp(shift) / (2 * math.pi) ** (d / 2))


def moment_lhs(probe: Probe, f: SpectralField, u0: SpectralField, g: SourceTime) -> complex:
    basis = f.basis
    _check_exponent(probe, basis.domain.kappa)
    rhs = elliptic_rhs(probe, f, u0, g)
    mant, scale = spectral.mode_fourier_scaled(basis, probe.zeta[None, :])
    return complex((mant[0] @ rhs.coeffs) * math.exp(scale[0]))


def moment_rhs_analytic(probe: Probe, f: SpectralField, u0: SpectralField, g: SourceTime,
                        tol: float = 1e-12, max_order: int = 512) -> complex:
    """Boundary side from closed-form normal derivatives of U; face order doubled to ``tol``."""
    basis = f.basis
    _check_exponent(probe, basis.domain.kappa)
    U = resolvent_solve(probe.omega, elliptic_rhs(probe, f, u0, g))
    order = 16 + 2 * int(basis.indices.max())
    prev = None
    while order <= max_order:
        quad = _quadrature(basis.domain, order)
        dn = spectral.mode_normal_derivatives(basis, quad.points, quad.normals) @ U.coeffs
        val = boundary_moment(dn, quad, probe)
        if prev is not None and abs(val - prev) <= tol * max(1.0, abs(val)):
            return val
        prev = val
        order *= 2
    raise spectral.QuadratureError("boundary quadrature did not settle")


def moment_rhs_from_trace(probe: Probe, trace: TraceData, tail_tol: float = 0.01) -> complex:
    dn = laplace_boundary(trace, probe.p, tail_tol)
    return boundary_moment(dn, trace.quad, probe)


def moment_identity_residual(probe: Probe, f: SpectralField, u0: SpectralField, g: SourceTime,
                             source="analytic", details: bool = False):
    """``|LHS - RHS| / (1 + |LHS|)`` for the moment identity.

    ``source`` is ``"analytic"`` or a :class:`TraceData` measured from the
    forward problem with these ``f``, ``u0`` and ``g``.
    """
    lhs = moment_lhs(probe, f, u0, g)
    if isinstance(source, str):
        if source != "analytic":
            raise ValueError(f"unknown source {source!r}")
        rhs = moment_rhs_analytic(probe, f, u0, g)
    else:
        rhs = moment_rhs_from_trace(probe, source)
    res = abs(lhs - rhs) / (1.0 + abs(lhs))
    return (res, lhs, rhs) if details else res


@dataclass(frozen=True)
class ProbeRecord:
    omega: float
    xi_id: int
    lhs: complex
    rhs: complex
    residual: float


def probe_sweep(probes, f: SpectralField, u0: SpectralField, g: SourceTime, source="analytic",
                n_dirs: int | None = None) -> list[ProbeRecord]:
    out = []
    for i, pr in enumerate(probes):
        res, lhs, rhs = moment_identity_residual(pr, f, u0, g, source, details=True)
        xi_id = i % n_dirs if n_dirs else i
        out.append(ProbeRecord(pr.omega, xi_id, lhs, rhs, res))
    return out


def write_probe_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["omega", "xi_id", "lhs_re", "lhs_im", "rhs_re", "rhs_im", "residual"])
        for r in records:
            w.writerow([f"{r.omega:.17g}", r.xi_id, f"{r.lhs.real:.17g}", f"{r.lhs.imag:.17g}",
                        f"{r.rhs.real:.17g}", f"{r.rhs.imag:.17g}", f"{r.residual:.17g}"])


# }}}


# {{{ continuation into the quadrant


def harmonic_measure(z):
    """``(2/pi)(pi/2 + arg(z + 1))`` on ``Re z >= -1, Im z <= 0``, ``z != -1``."""
    z = np.asarray(z, dtype=complex)
    if np.any(z == -1):
        raise ValueError("harmonic measure is undefined at z = -1")
    w = (2 / np.pi) * (np.pi / 2 + np.angle(z + 1))
    w = np.clip(w, 0.0, 1.0)
    return float(w) if w.ndim == 0 else w


def _F_scaled(phi: SpectralField, s: int, xi: np.ndarray, kappa: float, z: np.ndarray):
    """F(z) as (mantissa, log scale) to keep e^{-kappa z} and phi^ in range together."""
    zeta = 1j * z[:, None] * xi[None, :]
    mant, scale = spectral.field_fourier_scaled(phi, zeta)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = (z / (2 + z)) ** s
    mant = ratio * mant * np.exp(-1j * kappa * z.imag)
    return mant, scale - kappa * z.real


@dataclass(frozen=True, eq=False)
class ContinuationContext:
    phi: SpectralField
    s: int
    xi: tuple[float, ...]
    kappa: float
    M: float
    m: float


def _F_abs(phi, s, xi, kappa, t: np.ndarray) -> np.ndarray:
    mant, scale = _F_scaled(phi, s, xi, kappa, t.astype(complex))
    return np.abs(mant) * np.exp(scale)


def sup_on_real_side(phi: SpectralField, s: int, xi, kappa: float,
                     t_max: float = 1e4) -> float:
    """``sup |F(t)|`` over ``t >= -1``: dense sampling, local polishing, and a tail allowance.

    Beyond ``t_max`` the supremum is taken as twice the maximum over the last
    half of the window.
    """
    xi = np.asarray(xi, dtype=float)
    t = np.unique(np.concatenate([
        np.linspace(-1.0, 10.0, 4001),
        np.geomspace(10.0, t_max, 4001),
    ]))
    vals = _F_abs(phi, s, xi, kappa, t)
    i = int(np.argmax(vals))
    best = float(vals[i])
    lo, hi = t[max(i - 1, 0)], t[min(i + 1, len(t) - 1)]
    if hi > lo:
        r = minimize_scalar(lambda x: -_F_abs(phi, s, xi, kappa, np.array([x]))[0],
                            bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
        best = max(best, -float(r.fun))
    tail = 2.0 * float(vals[t >= 0.5 * t_max].max())
    return max(best, tail)


def continuation_context(phi: SpectralField, s: int, xi, l1: float | None = None) -> ContinuationContext:
    """Assemble M and m for F; ``l1`` overrides the quadrature L1 norm of phi."""
    d = phi.basis.domain.dim
    kappa = phi.basis.domain.kappa
    if l1 is None:
        l1 = spectral.l1_norm(phi)
    M = 1.0 + (2 * math.pi) ** (-d / 2) * math.exp(2 * kappa) * l1
    xi = tuple(float(v) for v in xi)
    m = sup_on_real_side(phi, s, xi, kappa)
    return ContinuationContext(phi, s, xi, kappa, M, m)


def eval_F(ctx: ContinuationContext, z):
    """``(z/(2+z))^s exp(-kappa z) phi^(i z xi)`` for ``Re z >= -1``."""
    za = np.atleast_1d(np.asarray(z, dtype=complex))
    if np.any(za.real < -1 - 1e-14):
        raise ValueError("F is only used on Re z >= -1")
    mant, scale = _F_scaled(ctx.phi, ctx.s, np.asarray(ctx.xi), ctx.kappa, za)
    out = mant * np.exp(scale)
    return complex(out[0]) if np.ndim(z) == 0 else out


def two_constants_margin(ctx: ContinuationContext, z):
    """``M m^{w(z)} - |F(z)|``; nonnegative wherever the two-constants bound holds."""
    F = np.abs(np.atleast_1d(eval_F(ctx, z)))
    w = np.atleast_1d(harmonic_measure(z))
    if ctx.m == 0 and np.any(F > 0):
        raise CertificationError("m = 0 but F does not vanish")
    margin = ctx.M * ctx.m**w - F
    return float(margin[0]) if np.ndim(z) == 0 else margin


def quadrant_grid(n: int = 200, lo: float = 1e-4, hi: float = 1e2) -> np.ndarray:
    """``n x n`` grid on the closed quadrant, log-spaced away from the corner -1.

    Includes the real side (Im z = 0) and the vertical side (Re z = -1),
    minus the corner itself.
    """
    r = np.concatenate([[0.0], np.geomspace(lo, hi, n - 1)])
    X, Y = np.meshgrid(-1.0 + r, -r, indexing="ij")
    Z = X + 1j * Y
    Z[0, 0] = np.nan
    return Z


@dataclass(frozen=True)
class CertificationReport:
    n: int
    lo: float
    hi: float
    min_margin: float
    argmin: complex
    M: float
    m: float
    s: int
    xi: tuple[float, ...]
    tol: float = 1e-12

    @property
    def passed(self) -> bool:
        return self.min_margin >= -self.tol

    def to_json(self) -> dict:
        return {
            "grid": {"n": self.n, "lo": self.lo, "hi": self.hi, "kind": "log-spaced quadrant"},
            "min_margin": self.min_margin,
            "argmin": [self.argmin.real, self.argmin.imag],
            "M": self.M,
            "m": self.m,
            "s": self.s,
            "xi": list(self.xi),
            "passed": self.passed,
        }


def certify(ctx: ContinuationContext, n: int = 200, lo: float = 1e-4, hi: float = 1e2) -> CertificationReport:
    Z = quadrant_grid(n, lo, hi)
    pts = Z.ravel()
    pts = pts[~np.isnan(pts)]
    margins = two_constants_margin(ctx, pts)
    i = int(np.argmin(margins))
    return CertificationReport(n, lo, hi, float(margins[i]), complex(pts[i]), ctx.M, ctx.m,
                               ctx.s, ctx.xi)


# }}}
