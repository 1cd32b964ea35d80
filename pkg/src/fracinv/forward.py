"""Time-fractional diffusion forward solver on an eigenbasis.

The solution of ``D_t^alpha u - Laplace u = g(t) f`` with ``u(0) = u0`` is
assembled mode by mode from

    u_k(t) = E_{a,1}(-lam_k t^a) u0_k + f_k int_0^t S_k(t - s) g(s) ds,
    S_k(t) = t^{a-1} E_{a,a}(-lam_k t^a),

with the convolution done by product integration: ``g`` is replaced by its
piecewise-linear interpolant and the kernel is integrated exactly through
its primitives

    K(t)  = t^a     E_{a,a+1}(-lam t^a),   K' = S,
    K2(t) = t^{a+1} E_{a,a+2}(-lam t^a),   K2' = K.

The L1 Caputo scheme and a product-integration Riemann-Liouville integral
are kept separate so that residual checks do not reuse the solver.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import gamma

from . import spectral
from .spectral import SpectralField
from .specfun import MLParams, ml_bulk_log, mittag_leffler


# {{{ time data


@dataclass(frozen=True)
class SourceTime:
    """Temporal factor ``g`` of the source, with optional closed-form Laplace transform.

    ``c0`` is a declared lower bound for ``|g~(p)|``. A function in
    L1 and L-infinity has ``g~(p) -> 0`` as ``p -> infinity``, so the bound can
    only hold on a bounded range of ``p``; :meth:`check_c0` validates it on the
    range actually probed.
    """

    g: Callable[[np.ndarray], np.ndarray]
    laplace: Callable[[np.ndarray], np.ndarray] | None = None
    c0: float | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __call__(self, t):
        return np.asarray(self.g(np.asarray(t, dtype=float)), dtype=float)

    @classmethod
    def exponential(cls, rate: float = 1.0, amplitude: float = 1.0, c0=None) -> SourceTime:
        if rate <= 0:
            raise ValueError("rate must be positive")
        return cls(
            lambda t: amplitude * np.exp(-rate * t),
            lambda p: amplitude / (rate + np.asarray(p, dtype=float)),
            c0,
            "exponential",
            {"rate": rate, "amplitude": amplitude},
        )

    @classmethod
    def zero(cls) -> SourceTime:
        return cls(lambda t: np.zeros_like(t), lambda p: np.zeros_like(np.asarray(p, float)),
                   None, "zero", {})

    def laplace_at(self, p):
        if self.laplace is None:
            raise ValueError(f"source {self.name!r} has no closed-form Laplace transform")
        return self.laplace(p)

    def check_c0(self, p_values) -> float:
        """Smallest ``|g~(p)|`` over ``p_values``; raises if below the declared c0."""
        vals = np.abs(np.asarray(self.laplace_at(np.asarray(p_values, dtype=float))))
        low = float(vals.min())
        if self.c0 is not None and low < self.c0:
            raise ValueError(f"|g~(p)| drops to {low:.3e} < c0 = {self.c0:.3e} on the probed range")
        return low

    def check_integrable(self, t_max: float, n: int = 20001) -> tuple[float, float]:
        """(L1 norm, sup) on [0, t_max] by trapezoid on a geometric grid."""
        t = np.concatenate([[0.0], np.geomspace(1e-8 * max(t_max, 1.0), t_max, n - 1)])
        v = np.abs(self(t))
        if not np.all(np.isfinite(v)):
            raise ValueError("g is not finite on the sampled range")
        return float(np.trapezoid(v, t)), float(v.max())


@dataclass(frozen=True, eq=False)
class TimeGrid:
    nodes: np.ndarray
    grading: float = 1.0

    def __post_init__(self) -> None:
        t = np.asarray(self.nodes, dtype=float)
        if t.ndim != 1 or len(t) < 2:
            raise ValueError("need at least two nodes")
        if t[0] != 0.0:
            raise ValueError("first node must be 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("nodes must be strictly increasing")
        object.__setattr__(self, "nodes", t)

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def T(self) -> float:
        return float(self.nodes[-1])

    @classmethod
    def graded(cls, T: float, n: int, grading: float) -> TimeGrid:
        """``t_j = T (j/n)^grading``, j = 0..n."""
        j = np.arange(n + 1) / n
        return cls(T * j**grading, grading)

    @classmethod
    def graded_geometric(cls, t_split: float, n_graded: int, T: float, n_geom: int,
                         grading: float) -> TimeGrid:
        """Graded mesh on [0, t_split], then geometric steps out to T."""
        head = t_split * (np.arange(n_graded + 1) / n_graded) ** grading
        if T <= t_split or n_geom == 0:
            return cls(head, grading)
        tail = np.geomspace(t_split, T, n_geom + 1)[1:]
        return cls(np.concatenate([head, tail]), grading)

    def refine(self, factor: int) -> TimeGrid:
        """Insert ``factor - 1`` equispaced points into every interval."""
        t = self.nodes
        frac = np.arange(factor) / factor
        fine = (t[:-1, None] + np.diff(t)[:, None] * frac).ravel()
        return TimeGrid(np.append(fine, t[-1]), self.grading)


# }}}


# {{{ fractional calculus


def _product_weights(nodes: np.ndarray, Ka: np.ndarray, Kb: np.ndarray,
                     K2a: np.ndarray, K2b: np.ndarray) -> np.ndarray:
    """Node weights for int k(t - s) h(s) ds with h piecewise linear.

    ``Ka``/``Kb`` hold the kernel primitive at ``t - t_j`` and ``t - t_{j+1}``
    for each interval j, ``K2a``/``K2b`` the second primitive.
    """
    h = np.diff(nodes)
    lin = (K2a - K2b - h * Kb) / h  # weight of the slope term, per unit jump
    w = np.zeros(len(nodes))
    w[:-1] += Ka - Kb - lin
    w[1:] += lin
    return w


def rl_integral(h, beta: float, t: float, n: int = 2000, nodes=None) -> float:
    """Riemann-Liouville integral ``I^beta h (t)``.

    ``h`` is either a vectorized callable, sampled on a grid graded towards
    both endpoints with ``n`` intervals, or an array of samples at ``nodes``.
    The quadrature is exact for piecewise-linear ``h``.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    if t <= 0:
        raise ValueError("t must be positive")
    if nodes is None:
        # grade both ends: singular behavior of h at 0 and of the kernel at t
        u = np.arange(n + 1) / n
        nodes = t * 0.5 * (1 - np.cos(np.pi * u))
        vals = np.asarray(h(nodes), dtype=float)
    else:
        nodes = np.asarray(nodes, dtype=float)
        vals = np.asarray(h, dtype=float)
        nodes, vals = nodes[nodes <= t], vals[nodes <= t]
        if nodes[-1] < t:
            raise ValueError("samples do not reach t")
    a = t - nodes[:-1]
    b = t - nodes[1:]
    K = lambda s: s**beta / gamma(beta + 1)  # noqa: E731
    K2 = lambda s: s ** (beta + 1) / gamma(beta + 2)  # noqa: E731
    return float(_product_weights(nodes, K(a), K(b), K2(a), K2(b)) @ vals)


def _l1_weights(t_n, t_j, h, alpha: float):
    """``((t_n - t_j)^{1-a} - (t_n - t_j - h)^{1-a}) / (h Gamma(2-a))``, zero when t_j >= t_n.

    Written through expm1/log1p: on graded meshes h can be 1e-19 next to
    t_n - t_j = 1, where the plain difference of powers cancels completely.
    """
    x = t_n - t_j
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.minimum(h / x, 1.0)
        diff = -(x ** (1 - alpha)) * np.expm1((1 - alpha) * np.log1p(-r))
        w = np.where(x > 0, diff / (h * gamma(2 - alpha)), 0.0)
    return w


def _l1_difference_matrix(t: np.ndarray, alpha: float) -> np.ndarray:
    """B with ``B @ diff(h)`` the L1 Caputo derivative at every node."""
    if np.any(np.diff(t) <= 0):
        raise ValueError("grid must be strictly increasing")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    # B[n, j] = ((t_n - t_j)^{1-a} - (t_n - t_{j+1})^{1-a}) / (h_j Gamma(2-a))
    return _l1_weights(t[:, None], t[None, :-1], np.diff(t)[None, :], alpha)


def caputo_l1_matrix(nodes, alpha: float) -> np.ndarray:
    """Matrix D with ``(D @ h)[n]`` the L1 approximation of ``D_t^alpha h(t_n)``."""
    t = np.asarray(nodes, dtype=float)
    B = _l1_difference_matrix(t, alpha)
    D = np.zeros((len(t), len(t)))
    D[:, 1:] += B
    D[:, :-1] -= B
    return D


def caputo_derivative(values, nodes, alpha: float, index: int | None = None):
    """L1-scheme Caputo derivative of samples ``values`` at ``nodes``.

    Returns the value at ``nodes[index]`` or, with ``index=None``, at every node.
    """
    t = np.asarray(nodes, dtype=float)
    v = np.asarray(values, dtype=float)
    if np.any(np.diff(t) <= 0):
        raise ValueError("grid must be strictly increasing")
    if index is None:
        return _l1_difference_matrix(t, alpha) @ np.diff(v)
    tt, vv = t[: index + 1], v[: index + 1]
    w = _l1_weights(t[index], tt[:-1], np.diff(tt), alpha)
    return float(np.sum(w * np.diff(vv)))


# }}}


# {{{ solution operators


def s0_apply(t: float, u0: SpectralField, alpha: float) -> SpectralField:
    if t < 0:
        raise ValueError("t must be nonnegative")
    lam = u0.basis.lambdas
    e = mittag_leffler(MLParams(alpha, 1.0), -lam * t**alpha)
    return SpectralField(u0.basis, np.asarray(e) * u0.coeffs)


def s1_apply(t: float, f: SpectralField, alpha: float) -> SpectralField:
    if t <= 0:
        raise ValueError("S1(t) is singular at t = 0")
    lam = f.basis.lambdas
    e = mittag_leffler(MLParams(alpha, alpha), -lam * t**alpha)
    return SpectralField(f.basis, t ** (alpha - 1) * np.asarray(e) * f.coeffs)


@dataclass(frozen=True, eq=False)
class ForwardSolution:
    grid: TimeGrid
    basis: spectral.EigenBasis
    coeffs: np.ndarray  # (n_nodes, n_modes)
    alpha: float

    def at(self, n: int) -> SpectralField:
        return SpectralField(self.basis, self.coeffs[n])

    def mode(self, k: int) -> np.ndarray:
        return self.coeffs[:, k]

    def write_csv(self, path) -> None:
        d = self.basis.domain.dim
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "mode", *[f"m{i + 1}" for i in range(d)], "coefficient"])
            for n, t in enumerate(self.grid.nodes):
                for k in range(len(self.basis)):
                    w.writerow([f"{t:.17g}", k + 1, *self.basis.indices[k].tolist(),
                                f"{self.coeffs[n, k]:.17g}"])


class _PairTable:
    """Strictly lower-triangular node pairs (n, j), j < n, shared by all modes."""

    def __init__(self, t: np.ndarray, alpha: float, gvals: np.ndarray, last_only: bool = False):
        if last_only:
            cols = np.arange(len(t) - 1)
            rows = np.full_like(cols, len(t) - 1)
        else:
            rows, cols = np.tril_indices(len(t), -1)
        diff = t[rows] - t[cols]
        self.n = len(t)
        self.rows = rows
        self.logdiff = np.log(diff)
        slope = np.diff(gvals) / np.diff(t)
        # jumps of g' at interior nodes; node 0 carries the initial slope
        jump = np.concatenate([[slope[0]], np.diff(slope), [0.0]])
        self.weights = np.exp((alpha + 1.0) * self.logdiff) * jump[cols]
        self.g0 = float(gvals[0])
        with np.errstate(divide="ignore"):
            self.logt = np.log(t)
        self.t_alpha = t**alpha


def _duhamel_mode(lam: float, alpha: float, pairs: _PairTable) -> np.ndarray:
    """int_0^{t_n} S(t_n - s) g(s) ds at every node, g piecewise linear.

    Summing the exact interval integrals by parts leaves
    ``g(0) K(t_n) + sum_j [g']_j K2(t_n - t_j)`` where ``[g']_j`` is the jump of
    the interpolant's slope at ``t_j`` (its initial slope at j = 0).
    """
    loglam = math.log(lam)
    e2 = ml_bulk_log(alpha, alpha + 2.0, alpha * pairs.logdiff + loglam)
    out = np.bincount(pairs.rows, weights=e2 * pairs.weights, minlength=pairs.n)
    if pairs.g0 != 0.0:
        e1 = ml_bulk_log(alpha, alpha + 1.0, alpha * pairs.logt + loglam)
        out += pairs.g0 * pairs.t_alpha * e1
    return out


def duhamel_solve(u0: SpectralField, f: SpectralField, g: SourceTime, grid: TimeGrid,
                  alpha: float, threads: int = 1) -> ForwardSolution:
    """Mode-wise Duhamel solution on ``grid``; see the module docstring."""
    if not u0.basis.same_as(f.basis):
        raise ValueError("u0 and f live on different bases")
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    basis = u0.basis
    t = grid.nodes
    lam = basis.lambdas
    out = np.zeros((len(t), len(basis)))
    if np.any(u0.coeffs):
        with np.errstate(divide="ignore"):
            logt = np.log(t)
        for k in np.flatnonzero(u0.coeffs):
            e = ml_bulk_log(alpha, 1.0, alpha * logt + math.log(lam[k]))
            out[:, k] += u0.coeffs[k] * e
    active = np.flatnonzero(f.coeffs)
    gvals = g(t)
    if len(active) and np.any(gvals):
        pairs = _PairTable(t, alpha, gvals)

        def work(k):
            return _duhamel_mode(lam[k], alpha, pairs)

        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                cols = list(pool.map(work, active))
        else:
            cols = [work(k) for k in active]
        for k, col in zip(active, cols):
            out[:, k] += f.coeffs[k] * col
    return ForwardSolution(grid, basis, out, alpha)


def duhamel_final(u0: SpectralField, f: SpectralField, g: SourceTime, grid: TimeGrid,
                  alpha: float) -> SpectralField:
    """Same quadrature as :func:`duhamel_solve`, evaluated at the last node only.

    Costs O(n) per mode instead of O(n^2), which makes 10x-refined reference
    solutions affordable.
    """
    if not u0.basis.same_as(f.basis):
        raise ValueError("u0 and f live on different bases")
    t = grid.nodes
    lam = u0.basis.lambdas
    out = np.asarray(mittag_leffler(MLParams(alpha, 1.0), -lam * t[-1] ** alpha)) * u0.coeffs
    gvals = g(t)
    if np.any(f.coeffs) and np.any(gvals):
        pairs = _PairTable(t, alpha, gvals, last_only=True)
        for k in np.flatnonzero(f.coeffs):
            out[k] += f.coeffs[k] * _duhamel_mode(lam[k], alpha, pairs)[-1]
    return SpectralField(u0.basis, out)


# }}}


# {{{ traces and residuals


def neumann_trace(solution_at_t: SpectralField, boundary_points, normals=None) -> np.ndarray:
    """``grad u . nu`` at boundary points (off-boundary points raise ValueError)."""
    dn = spectral.mode_normal_derivatives(solution_at_t.basis, boundary_points, normals)
    return dn @ solution_at_t.coeffs


def pde_residual(solution: ForwardSolution, f: SpectralField, g: SourceTime,
                 t_min: float | None = None) -> float:
    """Normalized max L1-scheme residual of ``D^a u + lam u - g f`` over nodes and modes.

    Nodes with ``t < t_min`` (default a tenth of the final time) are skipped:
    solutions behave like ``t^alpha`` at the origin, where the L1 scheme has an
    O(1) local error at the first steps regardless of the mesh.
    """
    t = solution.grid.nodes
    if t_min is None:
        t_min = 0.1 * t[-1]
    if solution.alpha == 1.0:
        raise ValueError("the L1 residual needs alpha < 1")
    u = solution.coeffs
    lam = solution.basis.lambdas
    src = np.outer(g(t), f.coeffs)
    res = _l1_difference_matrix(t, solution.alpha) @ np.diff(u, axis=0) + lam * u - src
    keep = t >= t_min
    scale = max(np.max(np.abs(lam * u[keep])), np.max(np.abs(src[keep])))
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(res[keep])) / scale)


# }}}
