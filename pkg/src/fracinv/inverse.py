"""Logarithmic stability bounds and regularized recovery of f or u0.

The bound calculus follows the chain

    boundary data  ->  eps  ->  |F| <= M eps^{w}  ->  |f^| on an annulus
                   ->  truncation (delta, R)  ->  ||f|| <= C ||f||_{H^k} (-ln eps)^{-q}.

All constants are explicit; see :class:`StabilityContext` for their
definitions. Reconstruction inverts the moment identity along probe lines
and fits eigen-coefficients by Tikhonov-regularized least squares.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import frequency, spectral
from .forward import SourceTime, TimeGrid, duhamel_solve
from .frequency import Probe, TraceData
from .spectral import BoxDomain, EigenBasis, SpectralField

SOURCE = "source"
INITIAL_STATE = "initial_state"
TARGETS = (SOURCE, INITIAL_STATE)


class RankDeficientError(np.linalg.LinAlgError):
    pass


def s_from_alpha(alpha: float) -> int:
    return 1 + math.floor(2.0 / alpha)


def sphere_measure(d: int) -> float:
    """Surface measure of the unit sphere in R^d."""
    return 2 * math.pi ** (d / 2) / math.gamma(d / 2)


def annulus_constant(d: int) -> float:
    """``C_d = sqrt(|S^{d-1}| / d)``: the L2 norm of 1 over B_R \\ B_1 is at most C_d R^{d/2} <= C_d R^d."""
    return math.sqrt(sphere_measure(d) / d)


@dataclass(frozen=True)
class StabilityContext:
    alpha: float
    d: int
    k: int
    theta: float
    kappa: float
    boundary_measure: float
    volume: float
    lambda1: float
    c0: float
    Cd: float
    M: float = 1.0

    def __post_init__(self) -> None:
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.d not in (2, 3):
            raise ValueError("d must be 2 or 3")
        if self.k < 1:
            raise ValueError("k must be a positive integer")
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        for name in ("kappa", "boundary_measure", "volume", "lambda1", "c0", "Cd"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.M < 1:
            raise ValueError("M must be >= 1")

    @property
    def s(self) -> int:
        return s_from_alpha(self.alpha)

    @classmethod
    def for_domain(cls, domain: BoxDomain, alpha: float, k: int, theta: float, c0: float = 1.0,
                   M: float = 1.0) -> StabilityContext:
        lam1 = float(np.sum((np.pi / domain.lengths) ** 2))
        return cls(alpha, domain.dim, k, theta, domain.kappa, domain.boundary_measure,
                   domain.volume, lam1, c0, annulus_constant(domain.dim), M)

    def with_unknown(self, phi: SpectralField, l1: float | None = None) -> StabilityContext:
        """Copy with ``M = 1 + (2 pi)^{-d/2} e^{2 kappa} ||phi||_{L1}``."""
        if l1 is None:
            l1 = spectral.l1_norm(phi)
        M = 1.0 + (2 * math.pi) ** (-self.d / 2) * math.exp(2 * self.kappa) * l1
        return dataclasses.replace(self, M=M)

    def case_tag(self) -> str:
        s, d = self.s, self.d
        return "s<d" if s < d else ("s=d" if s == d else "s>d")

    def branch(self) -> tuple[int, float]:
        """(branch number, exponent q) of the final log-rate."""
        s, d, k = self.s, self.d, self.k
        if s <= d + d * d / (2 * k):
            return 1, k / (1 + self.theta)
        return 2, d * d / (2 * (s - d) * (1 + self.theta))

    def low_frequency_constant(self) -> float:
        """C with ||f^||_{L2(B_delta)} <= C delta^{d/2} ||f||_{H^k}.

        Uses |f^| <= (2 pi)^{-d/2} |Omega|^{1/2} ||f||_{L2} and
        ||f||_{L2} <= lambda_1^{-k/2} ||f||_{H^k} for the spectral norm.
        """
        d = self.d
        ball = sphere_measure(d) / d
        return ((2 * math.pi) ** (-d / 2) * math.sqrt(self.volume) * math.sqrt(ball)
                * self.lambda1 ** (-self.k / 2))

    def rate_constant(self) -> float:
        """Constant in front of ``||f||_{H^k} (-ln eps)^{-q}`` once the first term is absorbed.

        It bounds ``C_low delta^{d/2} + R^{-k}`` by ``(C_low c + 1) R^{-q}``;
        c = 1 except for s = d where ``exp(-d R^d / 2) R^k`` is maximized over R >= 1.
        """
        c = 1.0
        if self.s == self.d:
            d, k = self.d, self.k
            r_star = (2 * k / d**2) ** (1 / d)
            if r_star > 1:
                c = math.exp(-k / d) * r_star**k
        return self.low_frequency_constant() * c + 1.0


# {{{ bound calculus


def epsilon_from_trace(trace: TraceData, ctx: StabilityContext) -> float:
    """``3^s c0^{-1} (2 pi)^{-d/2} e^{2 kappa} |boundary|^{1/2} ||trace||``."""
    norm = trace.norm()
    return (3.0**ctx.s / ctx.c0 * (2 * math.pi) ** (-ctx.d / 2) * math.exp(2 * ctx.kappa)
            * math.sqrt(ctx.boundary_measure) * norm)


@dataclass(frozen=True)
class TruncationPlan:
    case_tag: str
    R: float
    delta: float

    def __post_init__(self) -> None:
        if self.case_tag not in ("s<d", "s=d", "s>d"):
            raise ValueError(f"unknown case {self.case_tag!r}")
        if not (0 < self.delta < 1 < self.R):
            raise ValueError("need 0 < delta < 1 < R")


def choose_truncation(ctx: StabilityContext, R: float) -> TruncationPlan:
    if not R > 1:
        raise ValueError("R must exceed 1")
    s, d, k = ctx.s, ctx.d, ctx.k
    tag = ctx.case_tag()
    if tag == "s<d":
        delta = R ** (-2 * k / d)
    elif tag == "s=d":
        delta = math.exp(-(R**d))
    else:
        delta = R ** (-d / (s - d))
    return TruncationPlan(tag, R, delta)


def k_s(plan: TruncationPlan, ctx: StabilityContext) -> float:
    s, d = ctx.s, ctx.d
    if plan.case_tag == "s<d":
        return plan.R**d
    if plan.case_tag == "s=d":
        return -math.log(plan.delta) + plan.R**d
    return plan.delta ** (-(s - d)) + plan.R**d


def hs_bound(plan: TruncationPlan, ctx: StabilityContext, eps: float) -> float:
    """``5^{s/2} C_d M eps^{(2/pi) arctan(1/R)} k_s(delta, R)``."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    power = (2 / math.pi) * math.atan(1 / plan.R)
    return 5 ** (ctx.s / 2) * ctx.Cd * ctx.M * eps**power * k_s(plan, ctx)


def radius_for(eps: float, ctx: StabilityContext) -> float:
    return (-math.log(eps)) ** (1 / (1 + ctx.theta))


def stability_rhs(eps: float, ctx: StabilityContext, hk_norm: float) -> tuple[float, int]:
    """``(C ||f||_{H^k} (-ln eps)^{-q}, branch)`` with q from the branch rule."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    branch, q = ctx.branch()
    return ctx.rate_constant() * hk_norm * (-math.log(eps)) ** (-q), branch


def _log_first_term(L: float, ctx: StabilityContext) -> float:
    """log of ``5^{s/2} C_d M k_s(delta, R) eps^{(2/pi) arctan(1/R)}`` at ``eps = e^{-L}``.

    With the case rule for delta, ``k_s = R^d`` (s < d) or ``2 R^d`` (s >= d);
    written in logs because the interesting L are far beyond double range for eps.
    """
    R = L ** (1 / (1 + ctx.theta))
    kfac = 1.0 if ctx.s < ctx.d else 2.0
    return (0.5 * ctx.s * math.log(5) + math.log(ctx.Cd * ctx.M * kfac) + ctx.d * math.log(R)
            - (2 / math.pi) * L * math.atan(1 / R))


def full_bound(eps: float, ctx: StabilityContext, hk_norm: float, log_eps: float | None = None):
    """(first term, second term) of the bound before absorbing the first term.

    First term: h_s at the chosen (delta, R) with ``R = (-ln eps)^{1/(1+theta)}``;
    second: ``(C_low delta^{d/2} + R^{-k}) ||f||_{H^k}``. Pass ``log_eps``
    instead of ``eps`` when eps underflows.
    """
    L = -math.log(eps) if log_eps is None else -log_eps
    R = L ** (1 / (1 + ctx.theta))
    if R <= 1:
        raise ValueError("eps must be below 1/e so that R > 1")
    s, d = ctx.s, ctx.d
    if s < d:
        log_delta = -(2 * ctx.k / d) * math.log(R)
    elif s == d:
        log_delta = -(R**d)
    else:
        log_delta = -(d / (s - d)) * math.log(R)
    first = math.exp(_log_first_term(L, ctx))
    second = (ctx.low_frequency_constant() * math.exp(0.5 * d * log_delta) + R ** (-ctx.k)) * hk_norm
    return first, second


def empirical_log_eps0(ctx: StabilityContext, hk_norm: float, L_max: float = 1e15) -> float:
    """``L0 = -ln eps0``: beyond it the first term stays below ``C ||f||_{H^k} L^{-q}``.

    Then ``||f||_{L2} <= 2 C ||f||_{H^k} (-ln eps)^{-q}`` for eps < e^{-L0}. The
    first term decays only like ``exp(-L^{theta/(1+theta)} / pi)``, so L0 is
    typically huge; it is returned in log form for that reason.
    """
    _, q = ctx.branch()
    log_target = math.log(ctx.rate_constant() * hk_norm)
    excess = lambda L: _log_first_term(L, ctx) - (log_target - q * math.log(L))  # noqa: E731
    Ls = np.geomspace(1.0 + 1e-9, L_max, 2000)
    bad = [L for L in Ls if excess(L) > 0]
    if not bad:
        return 1.0
    lo = bad[-1]
    if lo >= Ls[-1]:
        raise ArithmeticError("first term does not fall below the second on the scanned range")
    hi = Ls[np.searchsorted(Ls, lo) + 1]
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if excess(mid) > 0:
            lo = mid
        else:
            hi = mid
    return float(hi)


def empirical_eps0(ctx: StabilityContext, hk_norm: float) -> float:
    """``exp(-L0)``; underflows to 0.0 when L0 exceeds about 745."""
    return math.exp(-empirical_log_eps0(ctx, hk_norm))


# }}}


# {{{ reconstruction


def reconstruction_probes(d: int, alpha: float, omega_max: float, n_omega: int, n_dirs: int,
                          omega_min: float = 0.5) -> list[Probe]:
    """Log-spaced omega in [omega_min, omega_max] times equi-angular directions."""
    oms = np.geomspace(omega_min, omega_max, n_omega)
    return [Probe(float(w), tuple(x), alpha) for w in oms for x in frequency.directions(d, n_dirs)]


def _probe_factor(probe: Probe, g: SourceTime | None, ctx: StabilityContext | None, target: str):
    if target == SOURCE:
        gp = complex(np.asarray(g.laplace_at(probe.p)))
        c0 = ctx.c0 if ctx is not None else 0.0
        if abs(gp) < c0 / 2:
            raise ValueError(f"|g~({probe.p:g})| = {abs(gp):.3e} < c0/2; data inconsistent with c0")
        if gp == 0:
            raise ZeroDivisionError("g~ vanishes at the probe")
        return 1.0 / gp
    if target == INITIAL_STATE:
        return probe.omega ** (2.0 / probe.alpha - 2.0)
    raise ValueError(f"unknown target {target!r}")


def reconstruct_fourier_line(trace: TraceData, g: SourceTime | None, ctx: StabilityContext | None,
                             probes, target: str = SOURCE, tail_tol: float = 0.01) -> np.ndarray:
    """Estimates of ``f^(i omega xi)`` or ``u0^(i omega xi)`` at each probe."""
    out = np.empty(len(probes), dtype=complex)
    for i, pr in enumerate(probes):
        rhs = frequency.moment_rhs_from_trace(pr, trace, tail_tol)
        out[i] = _probe_factor(pr, g, ctx, target) * rhs
    return out


def moment_noise_std(trace: TraceData, probes, g: SourceTime | None, sigma: float,
                     target: str = SOURCE) -> np.ndarray:
    """Standard deviation of each moment under i.i.d. N(0, sigma^2) noise on the trace samples.

    The moments are linear in the samples, so this is exact for that noise model.
    """
    out = np.empty(len(probes))
    pts = trace.quad.points
    d = pts.shape[1]
    for i, pr in enumerate(probes):
        w, tw = frequency.laplace_weights(trace.times, pr.p, trace.tail_exponent)
        w = w.copy()
        w[-1] += tw
        space = trace.quad.weights * np.exp(pr.omega * pts @ np.array(pr.xi))
        fac = abs(_probe_factor(pr, g, None, target)) * (2 * math.pi) ** (-d / 2)
        out[i] = sigma * fac * np.linalg.norm(w) * np.linalg.norm(space)
    return out


def moment_matrix(probes, basis: EigenBasis) -> np.ndarray:
    Z = np.array([pr.zeta for pr in probes])
    mant, scale = spectral.mode_fourier_scaled(basis, Z)
    return mant * np.exp(scale)[:, None]


def _tikhonov_solve(A: np.ndarray, b: np.ndarray, pen: np.ndarray, reg: float) -> np.ndarray:
    Ar = np.vstack([A.real, A.imag])
    br = np.concatenate([b.real, b.imag])
    N = Ar.T @ Ar + reg * np.diag(pen)
    try:
        cf = sla.cho_factor(N)
    except np.linalg.LinAlgError as exc:
        raise RankDeficientError("normal matrix is not positive definite") from exc
    return sla.cho_solve(cf, Ar.T @ br)


def tikhonov_reconstruct(moments, probes, basis: EigenBasis, reg: float, k: int = 1,
                         weights=None) -> SpectralField:
    """Minimize ``sum_p |w_p (A c - m)_p|^2 + reg sum_j lambda_j^k c_j^2``.

    ``A[p, j]`` is the Fourier transform of mode j at ``i omega_p xi_p``; the
    optional row weights ``w_p`` default to 1.
    """
    if reg < 0:
        raise ValueError("reg must be nonnegative")
    A = moment_matrix(probes, basis)
    m = np.asarray(moments, dtype=complex)
    if weights is not None:
        A = A * np.asarray(weights)[:, None]
        m = m * np.asarray(weights)
    if reg == 0 and len(probes) < len(basis):
        raise RankDeficientError(f"{len(probes)} probes cannot determine {len(basis)} modes")
    c = _tikhonov_solve(A, m, basis.lambdas**k, reg)
    return SpectralField(basis, c)


def discrepancy_reconstruct(moments, probes, basis: EigenBasis, noise_std, k: int = 1,
                            tau: float = 1.1, regs=None) -> tuple[SpectralField, float]:
    """Morozov choice: the largest reg whose whitened residual is at most ``tau sqrt(P)``.

    Rows are whitened by ``noise_std`` so every moment carries unit noise.
    """
    w = 1.0 / np.asarray(noise_std)
    A = moment_matrix(probes, basis) * w[:, None]
    m = np.asarray(moments, dtype=complex) * w
    pen = basis.lambdas**k
    target = tau * math.sqrt(len(probes))
    if regs is None:
        regs = np.geomspace(1e-14, 1e6, 121)
    best = None
    for reg in sorted(regs, reverse=True):
        try:
            c = _tikhonov_solve(A, m, pen, reg)
        except RankDeficientError:
            continue
        if np.linalg.norm(A @ c - m) <= target:
            best = (SpectralField(basis, c), float(reg))
            break
    if best is None:
        reg = float(min(regs))
        best = (SpectralField(basis, _tikhonov_solve(A, m, pen, reg)), reg)
    return best


# }}}


# {{{ stability sweep


@dataclass(frozen=True)
class SolverConfig:
    t_split: float = 2.0
    n_graded: int = 600
    T: float = 400.0
    n_geom: int = 900
    quad_order: int = 24
    threads: int = 1

    def grid(self, alpha: float) -> TimeGrid:
        return TimeGrid.graded_geometric(self.t_split, self.n_graded, self.T, self.n_geom,
                                         2.0 / alpha)


def synthesize_trace(unknown: SpectralField, g: SourceTime, alpha: float, target: str,
                     solver: SolverConfig) -> TraceData:
    """Forward-solve with the unknown in the role given by ``target`` and measure the trace."""
    basis = unknown.basis
    zero = basis.zero()
    if target == SOURCE:
        sol = duhamel_solve(zero, unknown, g, solver.grid(alpha), alpha, solver.threads)
        tail = alpha + 1.0
    elif target == INITIAL_STATE:
        sol = duhamel_solve(unknown, zero, SourceTime.zero(), solver.grid(alpha), alpha,
                            solver.threads)
        tail = alpha
    else:
        raise ValueError(f"unknown target {target!r}")
    quad = frequency._quadrature(basis.domain, solver.quad_order)
    return frequency.measure_trace(sol, quad, tail)


@dataclass(frozen=True)
class SweepRecord:
    label: str
    l2_norm: float
    hk_norm: float
    epsilon: float
    branch: int
    exponent: float
    ratio: float
    flag: str = ""


def _sweep_member(phi: SpectralField, label: str, g: SourceTime, ctx: StabilityContext,
                  solver: SolverConfig, target: str) -> SweepRecord:
    branch, q = ctx.branch()
    l2 = phi.l2_norm()
    hk = spectral.sobolev_norm(phi, ctx.k)
    if phi.is_zero():
        return SweepRecord(label, l2, hk, 0.0, branch, q, math.nan, "zero data")
    try:
        trace = synthesize_trace(phi, g, ctx.alpha, target, solver)
        eps = epsilon_from_trace(trace, ctx)
    except Exception as exc:  # keep sweeping; the record carries the failure
        return SweepRecord(label, l2, hk, math.nan, branch, q, math.nan, f"error: {exc}")
    if not eps < 1:
        return SweepRecord(label, l2, hk, eps, branch, q, math.nan, "eps >= 1")
    ratio = l2 / (hk * (-math.log(eps)) ** (-q))
    return SweepRecord(label, l2, hk, eps, branch, q, ratio)


def stability_sweep(family, g: SourceTime, ctx: StabilityContext, solver: SolverConfig | None = None,
                    target: str = SOURCE) -> list[SweepRecord]:
    """One record per ``(field, label)``; output order follows the input order."""
    solver = solver or SolverConfig()
    family = list(family)
    if family:
        b0 = family[0][0].basis
        if any(not phi.basis.same_as(b0) for phi, _ in family):
            raise ValueError("family members must share the basis")
    if target == INITIAL_STATE and ctx.c0 != 1.0:
        ctx = dataclasses.replace(ctx, c0=1.0)

    def work(item):
        phi, label = item
        return _sweep_member(phi, label, g, ctx, solver, target)

    if solver.threads > 1:
        n = solver.threads
        solver = dataclasses.replace(solver, threads=1)  # members run in parallel instead
        with ThreadPoolExecutor(n) as pool:
            return list(pool.map(work, family))
    return [work(item) for item in family]


def sweep_summary(records) -> dict:
    ratios = [r.ratio for r in records if not r.flag and math.isfinite(r.ratio)]
    if not ratios:
        return {"count": 0, "max_ratio": math.nan, "min_ratio": math.nan, "spread": math.nan}
    return {
        "count": len(ratios),
        "max_ratio": max(ratios),
        "min_ratio": min(ratios),
        "spread": max(ratios) / min(ratios),
    }


def write_sweep_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "l2_norm", "hk_norm", "epsilon", "branch", "exponent", "ratio", "flag"])
        for r in records:
            w.writerow([r.label, f"{r.l2_norm:.17g}", f"{r.hk_norm:.17g}", f"{r.epsilon:.17g}",
                        r.branch, f"{r.exponent:.17g}", f"{r.ratio:.17g}", r.flag])


# }}}
