"""Dirichlet eigenbasis of -Laplace on axis-aligned boxes containing the origin.

Mode ``m = (m_1, ..., m_d)`` on ``prod_i (a_i, b_i)`` is

    phi_m(x) = prod_i sqrt(2/L_i) sin(m_i pi (x_i - a_i) / L_i),   L_i = b_i - a_i,

with eigenvalue ``sum_i (m_i pi / L_i)^2``. Everything below (projections,
point values, normal derivatives, Fourier transforms at complex
wavevectors) is closed form or tensor Gauss-Legendre quadrature.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

SQRT_2PI = math.sqrt(2.0 * math.pi)


class QuadratureError(RuntimeError):
    """Quadrature self-check did not reach the requested tolerance."""


@dataclass(frozen=True)
class BoxDomain:
    bounds: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        bounds = tuple((float(a), float(b)) for a, b in self.bounds)
        object.__setattr__(self, "bounds", bounds)
        if len(bounds) not in (2, 3):
            raise ValueError("only d = 2 or d = 3 boxes are supported")
        for a, b in bounds:
            if not a < 0.0 < b:
                raise ValueError(f"interval ({a}, {b}) must contain the origin")

    @classmethod
    def cube(cls, d: int, half_width: float = 0.5) -> BoxDomain:
        return cls(tuple((-half_width, half_width) for _ in range(d)))

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def lengths(self) -> np.ndarray:
        return np.array([b - a for a, b in self.bounds])

    @property
    def lower(self) -> np.ndarray:
        return np.array([a for a, _ in self.bounds])

    @property
    def upper(self) -> np.ndarray:
        return np.array([b for _, b in self.bounds])

    @property
    def kappa(self) -> float:
        """sup |x| over the closure, attained at a corner."""
        return math.sqrt(sum(max(a * a, b * b) for a, b in self.bounds))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def boundary_measure(self) -> float:
        L = self.lengths
        return float(sum(2.0 * np.prod(np.delete(L, i)) for i in range(self.dim)))

    def to_json(self) -> dict:
        return {"bounds": [list(b) for b in self.bounds]}

    @classmethod
    def from_json(cls, data: dict) -> BoxDomain:
        return cls(tuple(tuple(b) for b in data["bounds"]))


@dataclass(frozen=True)
class EigenMode:
    multi_index: tuple[int, ...]
    lam: float


@dataclass(frozen=True, eq=False)
class EigenBasis:
    domain: BoxDomain
    indices: np.ndarray  # (K, d) positive ints
    lambdas: np.ndarray  # (K,)

    def __len__(self) -> int:
        return len(self.lambdas)

    def mode(self, k: int) -> EigenMode:
        return EigenMode(tuple(int(m) for m in self.indices[k]), float(self.lambdas[k]))

    def unit(self, k: int) -> SpectralField:
        """The field equal to the k-th mode (0-based; ``unit(0)`` is e_1)."""
        c = np.zeros(len(self))
        c[k] = 1.0
        return SpectralField(self, c)

    def zero(self) -> SpectralField:
        return SpectralField(self, np.zeros(len(self)))

    def field(self, coefficients) -> SpectralField:
        return SpectralField(self, np.asarray(coefficients, dtype=float))

    def same_as(self, other: EigenBasis) -> bool:
        return (
            self is other
            or self.domain == other.domain
            and np.array_equal(self.indices, other.indices)
        )


def mode_eigenvalue(domain: BoxDomain, multi_index) -> float:
    m = np.asarray(multi_index, dtype=float)
    return math.fsum((m * np.pi / domain.lengths) ** 2)


def _eigenvalues(grid: np.ndarray, L: np.ndarray) -> np.ndarray:
    # correctly rounded sums, so permuted indices on equal sides tie exactly
    return np.array([math.fsum(r) for r in (grid * np.pi / L) ** 2])


def build_basis(domain: BoxDomain, count: int) -> EigenBasis:
    """The ``count`` lowest modes, ties broken by lexicographic multi-index."""
    if count < 1:
        raise ValueError("count must be >= 1")
    L = domain.lengths
    d = domain.dim
    # grow a per-axis cap until the count-th eigenvalue is provably enclosed
    cap = max(2, math.ceil(count ** (1.0 / d)) + 1)
    while True:
        grid = np.array(list(itertools.product(range(1, cap + 1), repeat=d)))
        lam = _eigenvalues(grid, L)
        # any mode with some m_i > cap has lambda above this bound
        bound = float(np.min((np.pi / L) ** 2 * ((cap + 1) ** 2 - 1)) + np.sum((np.pi / L) ** 2))
        inside = lam < bound
        if inside.sum() >= count:
            break
        cap *= 2
    keys = [(v, tuple(int(m) for m in row)) for v, row in zip(lam.tolist(), grid)]
    order = sorted(range(len(keys)), key=keys.__getitem__)[:count]
    idx = grid[order]
    return EigenBasis(domain, idx, lam[order])


def count_modes_below(domain: BoxDomain, lam_max: float) -> int:
    """Number of modes with eigenvalue <= lam_max."""
    L = domain.lengths
    caps = [int(math.floor(math.sqrt(lam_max) * Li / math.pi)) for Li in L]
    if min(caps) < 1:
        return 0
    grid = np.array(list(itertools.product(*(range(1, c + 1) for c in caps))))
    lam = _eigenvalues(grid, L)
    return int(np.sum(lam <= lam_max * (1 + 1e-14)))


# {{{ fields


@dataclass(frozen=True, eq=False)
class SpectralField:
    basis: EigenBasis
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        c = np.asarray(self.coeffs)
        if c.shape != (len(self.basis),):
            raise ValueError(f"expected {len(self.basis)} coefficients, got {c.shape}")
        object.__setattr__(self, "coeffs", c)

    def __add__(self, other: SpectralField) -> SpectralField:
        _check_same(self, other)
        return SpectralField(self.basis, self.coeffs + other.coeffs)

    def __sub__(self, other: SpectralField) -> SpectralField:
        _check_same(self, other)
        return SpectralField(self.basis, self.coeffs - other.coeffs)

    def __mul__(self, scalar) -> SpectralField:
        return SpectralField(self.basis, self.coeffs * scalar)

    __rmul__ = __mul__

    def l2_norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def is_zero(self) -> bool:
        return not np.any(self.coeffs)

    def to_json(self) -> dict:
        data = {
            "domain": self.basis.domain.to_json(),
            "modes": self.basis.indices.tolist(),
        }
        if np.iscomplexobj(self.coeffs):
            data["coefficients"] = self.coeffs.real.tolist()
            data["coefficients_imag"] = self.coeffs.imag.tolist()
        else:
            data["coefficients"] = self.coeffs.tolist()
        return data

    @classmethod
    def from_json(cls, data: dict) -> SpectralField:
        domain = BoxDomain.from_json(data["domain"])
        idx = np.array(data["modes"], dtype=int)
        lam = np.array([mode_eigenvalue(domain, m) for m in idx])
        c = np.array(data["coefficients"], dtype=float)
        if "coefficients_imag" in data:
            c = c + 1j * np.array(data["coefficients_imag"], dtype=float)
        return cls(EigenBasis(domain, idx, lam), c)


def _check_same(u: SpectralField, v: SpectralField) -> None:
    if not u.basis.same_as(v.basis):
        raise ValueError("fields live on different bases")


def sobolev_norm(field: SpectralField, k: int) -> float:
    """``(sum_j lambda_j^k |c_j|^2)^{1/2}``, the D(A^{k/2}) norm."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    lam = field.basis.lambdas
    return float(np.sqrt(np.sum(lam**k * np.abs(field.coeffs) ** 2)))


# }}}


# {{{ point evaluation


def _axis_sines(domain: BoxDomain, axis: int, m: np.ndarray, x: np.ndarray) -> np.ndarray:
    a, b = domain.bounds[axis]
    L = b - a
    return math.sqrt(2.0 / L) * np.sin(np.multiply.outer(x - a, m) * (np.pi / L))


def _axis_sine_derivs(domain: BoxDomain, axis: int, m: np.ndarray, x: np.ndarray) -> np.ndarray:
    a, b = domain.bounds[axis]
    L = b - a
    k = m * (np.pi / L)
    return math.sqrt(2.0 / L) * k * np.cos(np.multiply.outer(x - a, m) * (np.pi / L))


def mode_values(basis: EigenBasis, points) -> np.ndarray:
    """phi_k at points, shape (P, K)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.ones((pts.shape[0], len(basis)))
    for i in range(basis.domain.dim):
        out *= _axis_sines(basis.domain, i, basis.indices[:, i], pts[:, i])
    return out


def mode_gradients(basis: EigenBasis, points) -> np.ndarray:
    """grad phi_k at points, shape (P, K, d)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = basis.domain.dim
    s = [_axis_sines(basis.domain, i, basis.indices[:, i], pts[:, i]) for i in range(d)]
    ds = [_axis_sine_derivs(basis.domain, i, basis.indices[:, i], pts[:, i]) for i in range(d)]
    grads = []
    for i in range(d):
        g = ds[i].copy()
        for j in range(d):
            if j != i:
                g *= s[j]
        grads.append(g)
    return np.stack(grads, axis=-1)


def synthesize(field: SpectralField, x):
    """sum_k c_k phi_k(x) at one point (shape (d,)) or many (shape (P, d))."""
    pts = np.asarray(x, dtype=float)
    vals = mode_values(field.basis, pts) @ field.coeffs
    return vals if pts.ndim > 1 else vals[0]


# }}}


# {{{ boundary


@dataclass(frozen=True, eq=False)
class BoundaryQuadrature:
    points: np.ndarray  # (P, d)
    weights: np.ndarray  # (P,)
    normals: np.ndarray  # (P, d)
    order: int

    def __len__(self) -> int:
        return len(self.weights)


def boundary_quadrature(domain: BoxDomain, order: int) -> BoundaryQuadrature:
    """Tensor Gauss-Legendre of the given order on every face."""
    xg, wg = np.polynomial.legendre.leggauss(order)
    d = domain.dim
    pts, wts, nrm = [], [], []
    for axis in range(d):
        others = [j for j in range(d) if j != axis]
        nodes, weights = [], []
        for j in others:
            a, b = domain.bounds[j]
            nodes.append(0.5 * (b - a) * xg + 0.5 * (a + b))
            weights.append(0.5 * (b - a) * wg)
        mesh = np.meshgrid(*nodes, indexing="ij")
        wmesh = np.meshgrid(*weights, indexing="ij")
        face_w = np.prod([w.ravel() for w in wmesh], axis=0)
        for side, value in ((-1.0, domain.bounds[axis][0]), (1.0, domain.bounds[axis][1])):
            p = np.empty((face_w.size, d))
            p[:, axis] = value
            for j, m in zip(others, mesh):
                p[:, j] = m.ravel()
            n = np.zeros((face_w.size, d))
            n[:, axis] = side
            pts.append(p)
            wts.append(face_w)
            nrm.append(n)
    return BoundaryQuadrature(np.vstack(pts), np.concatenate(wts), np.vstack(nrm), order)


def boundary_normals(domain: BoxDomain, points, tol: float = 1e-12) -> np.ndarray:
    """Outward unit normals at boundary points; raises for points off the boundary.

    Points on an edge or corner take the normal of the first matching face.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    lo, hi = domain.lower, domain.upper
    scale = np.maximum(1.0, np.abs(np.concatenate([lo, hi])).max())
    normals = np.zeros_like(pts)
    found = np.zeros(len(pts), dtype=bool)
    inside = np.all((pts >= lo - tol * scale) & (pts <= hi + tol * scale), axis=1)
    for i in range(domain.dim):
        for side, wall in ((-1.0, lo[i]), (1.0, hi[i])):
            hit = ~found & inside & (np.abs(pts[:, i] - wall) <= tol * scale)
            normals[hit, i] = side
            found |= hit
    if not np.all(found):
        bad = pts[~found][0]
        raise ValueError(f"point {bad.tolist()} is not on the boundary (tol {tol})")
    return normals


def mode_normal_derivatives(basis: EigenBasis, points, normals=None) -> np.ndarray:
    """d phi_k / d nu at boundary points, shape (P, K)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if normals is None:
        normals = boundary_normals(basis.domain, pts)
    return np.einsum("pkd,pd->pk", mode_gradients(basis, pts), normals)


# }}}


# {{{ projection


def _gauss_grid(domain: BoxDomain, order: int, cells: int = 1):
    xg, wg = np.polynomial.legendre.leggauss(order)
    nodes, weights = [], []
    for a, b in domain.bounds:
        edges = np.linspace(a, b, cells + 1)
        h = np.diff(edges)
        x = (0.5 * h[:, None] * xg + 0.5 * (edges[:-1] + edges[1:])[:, None]).ravel()
        w = (0.5 * h[:, None] * wg).ravel()
        nodes.append(x)
        weights.append(w)
    return nodes, weights


def _project_once(h, basis: EigenBasis, order: int) -> np.ndarray:
    domain = basis.domain
    nodes, weights = _gauss_grid(domain, order)
    mesh = np.meshgrid(*nodes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    vals = np.asarray(h(pts), dtype=float).reshape(mesh[0].shape)
    wmesh = np.meshgrid(*weights, indexing="ij")
    vals = vals * np.prod(wmesh, axis=0)
    # contract one axis at a time against the per-axis sine tables
    mmax = basis.indices.max(axis=0)
    tables = [
        _axis_sines(domain, i, np.arange(1, mmax[i] + 1), nodes[i]) for i in range(domain.dim)
    ]
    t = vals
    for i in range(domain.dim):
        t = np.tensordot(t, tables[i], axes=([0], [0]))  # moves axis i to the end
    idx = tuple((basis.indices[:, i] - 1) for i in range(domain.dim))
    return t[idx]


def project(h, basis: EigenBasis, order: int = 64, tol: float = 1e-10) -> SpectralField:
    """L2 projection of a vectorized function ``h(points (P, d)) -> (P,)``.

    Uses tensor Gauss-Legendre of ``order`` points per axis and checks the
    result against ``2 * order``; raises :class:`QuadratureError` when the two
    differ by more than ``tol`` (absolute, per coefficient, scaled by
    ``max(1, ||c||)``).
    """
    coarse = _project_once(h, basis, order)
    fine = _project_once(h, basis, 2 * order)
    scale = max(1.0, float(np.linalg.norm(fine)))
    err = float(np.max(np.abs(coarse - fine))) / scale
    if err > tol:
        raise QuadratureError(
            f"projection with order {order} differs from order {2 * order} by {err:.3e}"
        )
    return SpectralField(basis, fine)


def l2_norm_by_quadrature(field: SpectralField, order: int = 64) -> float:
    nodes, weights = _gauss_grid(field.basis.domain, order)
    mesh = np.meshgrid(*nodes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    w = np.prod(np.meshgrid(*weights, indexing="ij"), axis=0).ravel()
    v = synthesize(field, pts)
    return float(np.sqrt(np.sum(w * np.abs(v) ** 2)))


def l1_norm(field: SpectralField, order: int = 16, cells: int = 16) -> float:
    """||field||_{L1} by composite tensor Gauss-Legendre."""
    nodes, weights = _gauss_grid(field.basis.domain, order, cells)
    domain = field.basis.domain
    # separable evaluation: phi_k = prod_i s_i, so reuse per-axis tables
    tables = [
        _axis_sines(domain, i, field.basis.indices[:, i], nodes[i]) for i in range(domain.dim)
    ]
    if domain.dim == 2:
        vals = np.einsum("ak,bk,k->ab", tables[0], tables[1], field.coeffs)
        w = np.multiply.outer(weights[0], weights[1])
    else:
        vals = np.einsum("ak,bk,ck,k->abc", tables[0], tables[1], tables[2], field.coeffs)
        w = np.multiply.outer(np.multiply.outer(weights[0], weights[1]), weights[2])
    return float(np.sum(w * np.abs(vals)))


# }}}


# {{{ Fourier transforms at complex wavevectors


def _expm1_ratio(w: np.ndarray) -> np.ndarray:
    """(exp(w) - 1) / w, entire, stable near 0."""
    w = np.asarray(w, dtype=complex)
    out = np.empty_like(w)
    small = np.abs(w) < 0.5
    ws = w[small]
    acc = np.full_like(ws, 1.0 / math.factorial(18))
    for k in range(17, 0, -1):
        acc = acc * ws + 1.0 / math.factorial(k)
    out[small] = acc
    wl = w[~small]
    out[~small] = np.expm1(wl) / wl
    return out


def _axis_transform(a: float, b: float, m: np.ndarray, zeta: np.ndarray):
    """int_a^b sqrt(2/L) sin(m pi (x-a)/L) exp(-i x zeta) dx as mantissa * exp(shift).

    ``m`` has shape (K,), ``zeta`` shape (P,); returns ((P, K), (P,)). The
    formula has no removable singularities: with zeta0 the nearer of
    +-m pi / L, the integral equals a bounded expression in zeta - zeta0.
    """
    L = b - a
    kap = m * (np.pi / L)  # (K,)
    z = zeta[:, None]
    ca = -1j * zeta * a
    cb = -1j * zeta * b
    sign = np.where(np.real(zeta) >= 0.0, 1.0, -1.0)[:, None]
    z0 = sign * kap[None, :]
    delta = z - z0
    denom = delta + 2.0 * z0
    left = (np.real(ca) >= np.real(cb))[:, None]
    parity = np.where(m % 2 == 0, 1.0, -1.0)[None, :]
    # pick the branch whose exponent has nonpositive real part
    core = _expm1_ratio(np.where(left, -1j, 1j) * delta * L)
    core = np.where(left, core, parity * core)
    phase = np.where(left, np.exp(1j * np.imag(ca))[:, None], np.exp(1j * np.imag(cb))[:, None])
    shift = np.maximum(np.real(ca), np.real(cb))
    mant = math.sqrt(2.0 / L) * kap[None, :] * (-1j * L) * core / denom * phase
    return mant, shift


def mode_fourier_scaled(basis: EigenBasis, zeta):
    """Fourier transforms of every mode at wavevectors ``zeta`` (P, d) complex.

    Returns ``(mantissa (P, K), log_scale (P,))`` with
    ``phi_hat_k(zeta_p) = mantissa[p, k] * exp(log_scale[p])`` and

        phi_hat(zeta) = (2 pi)^{-d/2} int phi(x) exp(-i x . zeta) dx.
    """
    Z = np.atleast_2d(np.asarray(zeta, dtype=complex))
    domain = basis.domain
    mant = np.full((Z.shape[0], len(basis)), 1.0 + 0j)
    scale = np.zeros(Z.shape[0])
    for i, (a, b) in enumerate(domain.bounds):
        m = basis.indices[:, i]
        uniq, inv = np.unique(m, return_inverse=True)
        mi, si = _axis_transform(a, b, uniq, Z[:, i])
        mant *= mi[:, inv] / SQRT_2PI
        scale += si
    return mant, scale


def mode_fourier(basis: EigenBasis, k: int, zeta) -> complex:
    """Fourier transform of mode k at a single complex wavevector."""
    mant, scale = mode_fourier_scaled(basis, np.asarray(zeta, dtype=complex)[None, :])
    return complex(mant[0, k] * np.exp(scale[0]))


def field_fourier_scaled(field: SpectralField, zeta):
    mant, scale = mode_fourier_scaled(field.basis, zeta)
    return mant @ field.coeffs, scale


def field_fourier(field: SpectralField, zeta):
    """phi_hat at one wavevector (shape (d,)) or many (shape (P, d))."""
    Z = np.asarray(zeta, dtype=complex)
    mant, scale = field_fourier_scaled(field, Z)
    out = mant * np.exp(scale)
    return out if Z.ndim > 1 else complex(out[0])


# }}}
