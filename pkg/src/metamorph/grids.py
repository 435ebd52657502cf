"""Nested uniform grids on the unit square.

Two function spaces live here: vector-valued tensor-product cubic B-splines
on the coarse mesh (deformations, mesh size ``H = 2**-N``) and piecewise
bilinear, globally continuous finite elements on the fine mesh (images,
mesh size ``h = 2**-M`` with ``M > N``).  The module also provides the
tensor Gauss quadrature used for every integral in the package and the
grid transfer operators of the multilevel scheme.

Conventions
-----------
* Spline basis functions are the cardinal cubic B-splines ``N_i`` with
  uniform knots at multiples of ``H``; basis index ``i = -3 .. n-1`` for
  ``n = 2**N`` cells maps to array index ``a = i + 3``, giving a
  ``(n+3, n+3)`` control grid with one ghost ring per side.
* A :class:`Deformation` stores the *displacement* control points of the
  full grid.  The identity map on the boundary is enforced through a
  constrained parameterization: the outermost control layer is a fixed
  linear combination of the two adjacent layers such that the boundary
  trace of the displacement vanishes identically.  The remaining
  ``(2**N + 1)**2`` control points per component are the free degrees of
  freedom.
* Image nodal values are stored as ``values[ix, iy]`` for the node at
  ``(ix * h, iy * h)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DomainError

_DOMAIN_TOL = 1e-12


def mesh_size(level: int) -> float:
    """Mesh size 2**-level of the uniform grid at the given refinement level."""
    return 2.0 ** (-level)


def num_cells(level: int) -> int:
    return 2 ** level


@dataclass(frozen=True)
class GridSpec:
    """Refinement levels of the spline mesh (N) and the image mesh (M)."""

    spline_level: int
    image_level: int = -1

    def __post_init__(self):
        if self.image_level < 0:
            object.__setattr__(self, "image_level", self.spline_level + 1)
        if self.image_level <= self.spline_level:
            raise ValueError("image level M must exceed spline level N")

    @property
    def spline_mesh_size(self) -> float:
        return mesh_size(self.spline_level)

    @property
    def image_mesh_size(self) -> float:
        return mesh_size(self.image_level)


# ---------------------------------------------------------------------------
# images


@dataclass(frozen=True)
class Image:
    """Piecewise bilinear, globally continuous function on the unit square."""

    level: int
    values: np.ndarray

    def __post_init__(self):
        n = num_cells(self.level)
        if self.values.shape != (n + 1, n + 1):
            raise ValueError(
                f"image at level {self.level} needs {(n + 1, n + 1)} nodal "
                f"values, got {self.values.shape}"
            )

    @classmethod
    def constant(cls, level: int, value: float) -> "Image":
        n = num_cells(level)
        return cls(level, np.full((n + 1, n + 1), float(value)))

    @classmethod
    def from_function(cls, level: int, fn) -> "Image":
        """Sample ``fn(x1, x2)`` (vectorized) at the grid nodes."""
        n = num_cells(level)
        x = np.linspace(0.0, 1.0, n + 1)
        xx, yy = np.meshgrid(x, x, indexing="ij")
        return cls(level, np.asarray(fn(xx, yy), dtype=float))

    def nodes(self) -> np.ndarray:
        """All grid nodes as an (count, 2) array, row-major in (ix, iy)."""
        n = num_cells(self.level)
        x = np.linspace(0.0, 1.0, n + 1)
        xx, yy = np.meshgrid(x, x, indexing="ij")
        return np.stack([xx.ravel(), yy.ravel()], axis=-1)


def _check_domain(pts: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if pts.shape[-1] != 2:
        raise ValueError("points must have shape (..., 2)")
    if np.any(pts < -_DOMAIN_TOL) or np.any(pts > 1.0 + _DOMAIN_TOL):
        bad = pts[np.any((pts < -_DOMAIN_TOL) | (pts > 1.0 + _DOMAIN_TOL), axis=-1)]
        raise DomainError(f"point outside the unit square: {bad[0]}")
    return np.clip(pts, 0.0, 1.0)


def _image_cells(u: Image, pts: np.ndarray):
    """Containing cell per point, lower-left convention on edges."""
    n = num_cells(u.level)
    h = mesh_size(u.level)
    c = np.ceil(pts / h).astype(np.int64) - 1
    np.clip(c, 0, n - 1, out=c)
    local = pts / h - c
    return c, local


def eval_image(u: Image, x) -> np.ndarray | float:
    """Evaluate the bilinear interpolant at one point or a batch of points."""
    single = np.asarray(x).ndim == 1
    pts = _check_domain(x)
    c, s = _image_cells(u, pts)
    v = u.values
    cx, cy = c[:, 0], c[:, 1]
    sx, sy = s[:, 0], s[:, 1]
    val = (
        v[cx, cy] * (1 - sx) * (1 - sy)
        + v[cx + 1, cy] * sx * (1 - sy)
        + v[cx, cy + 1] * (1 - sx) * sy
        + v[cx + 1, cy + 1] * sx * sy
    )
    return float(val[0]) if single else val


def eval_image_grad(u: Image, x) -> np.ndarray:
    """Cellwise bilinear gradient; discontinuous across cell edges."""
    single = np.asarray(x).ndim == 1
    pts = _check_domain(x)
    h = mesh_size(u.level)
    c, s = _image_cells(u, pts)
    v = u.values
    cx, cy = c[:, 0], c[:, 1]
    sx, sy = s[:, 0], s[:, 1]
    gx = (
        (v[cx + 1, cy] - v[cx, cy]) * (1 - sy)
        + (v[cx + 1, cy + 1] - v[cx, cy + 1]) * sy
    ) / h
    gy = (
        (v[cx, cy + 1] - v[cx, cy]) * (1 - sx)
        + (v[cx + 1, cy + 1] - v[cx + 1, cy]) * sx
    ) / h
    g = np.stack([gx, gy], axis=-1)
    return g[0] if single else g


# ---------------------------------------------------------------------------
# deformations


@lru_cache(maxsize=None)
def boundary_embedding(level: int) -> np.ndarray:
    """1D map from free control values to the full control line.

    The returned matrix ``E`` has shape ``(n+3, n+1)``.  For any free
    coefficient vector ``c`` the spline ``sum_i (E c)_i N_i`` has zero
    boundary trace at 0 and 1; the normal derivative stays free.
    """
    n = num_cells(level)
    E = np.zeros((n + 3, n + 1))
    E[1:n + 2] = np.eye(n + 1)
    # ghost layers chosen so that c[-3] + 4 c[-2] + c[-1] = 0 at either end
    E[0, 0] = -4.0
    E[0, 1] = -1.0
    E[n + 2, n] = -4.0
    E[n + 2, n - 1] = -1.0
    return E


@dataclass(frozen=True)
class Deformation:
    """Cubic-spline map of the unit square onto itself, stored as displacement.

    ``coeffs[a, b, comp]`` is the displacement control point of the tensor
    basis function ``N_{a-3} N_{b-3}``.  The map itself is
    ``Phi(x) = x + sum coeffs[a, b] N(x)``.
    """

    level: int
    coeffs: np.ndarray

    def __post_init__(self):
        n = num_cells(self.level)
        if self.coeffs.shape != (n + 3, n + 3, 2):
            raise ValueError(
                f"deformation at level {self.level} needs control grid "
                f"{(n + 3, n + 3, 2)}, got {self.coeffs.shape}"
            )

    @classmethod
    def identity(cls, level: int) -> "Deformation":
        n = num_cells(level)
        return cls(level, np.zeros((n + 3, n + 3, 2)))

    @classmethod
    def from_reduced(cls, level: int, reduced: np.ndarray) -> "Deformation":
        """Build from the free (boundary-conforming) control grid."""
        n = num_cells(level)
        if reduced.shape != (n + 1, n + 1, 2):
            raise ValueError(f"reduced grid must be {(n + 1, n + 1, 2)}")
        E = boundary_embedding(level)
        full = np.tensordot(
            E, np.tensordot(reduced, E, axes=(1, 1)), axes=(1, 0))
        return cls(level, full.transpose(0, 2, 1))

    def reduced(self) -> np.ndarray:
        """Free control grid, shape (2**N + 1, 2**N + 1, 2)."""
        return self.coeffs[1:-1, 1:-1, :].copy()

    def displacement_sup_norm(self) -> float:
        return float(np.max(np.abs(self.coeffs)))


def reduce_dual(level: int, full: np.ndarray) -> np.ndarray:
    """Pull a functional on the full control grid back to the free DOFs."""
    E = boundary_embedding(level)
    tmp = np.tensordot(E, full, axes=(0, 0))          # (i, b, c)
    return np.tensordot(tmp, E, axes=(1, 0)).transpose(0, 2, 1)


@dataclass(frozen=True)
class JetEvaluation:
    """Spline map and its derivatives at one point or a batch of points.

    ``value`` (..., 2); ``jacobian`` (..., 2, 2) with ``jacobian[m, j] =
    d_j Phi_m``; ``hessian`` (..., 2, 2, 2) symmetric in the trailing
    indices; ``laplacian`` (..., 2); ``grad_laplacian`` (..., 2, 2) with
    ``grad_laplacian[m, j] = d_j (Delta Phi_m)``.
    """

    value: np.ndarray
    jacobian: np.ndarray | None = None
    hessian: np.ndarray | None = None
    laplacian: np.ndarray | None = None
    grad_laplacian: np.ndarray | None = None


def _cubic_weights(t: np.ndarray, max_order: int):
    """Values and derivatives of the four active B-spline pieces.

    ``t`` is the local cell coordinate in [0, 1]; returns a list of
    (P, 4) arrays, one per derivative order (in the local variable).
    The stencil order matches control indices ``c .. c+3`` of the cell.
    """
    s = 1.0 - t
    out = [np.stack(
        [s ** 3 / 6.0,
         (3 * t ** 3 - 6 * t ** 2 + 4) / 6.0,
         (-3 * t ** 3 + 3 * t ** 2 + 3 * t + 1) / 6.0,
         t ** 3 / 6.0], axis=-1)]
    if max_order >= 1:
        out.append(np.stack(
            [-s ** 2 / 2.0,
             (3 * t ** 2 - 4 * t) / 2.0,
             (-3 * t ** 2 + 2 * t + 1) / 2.0,
             t ** 2 / 2.0], axis=-1))
    if max_order >= 2:
        out.append(np.stack([s, 3 * t - 2, -3 * t + 1, t], axis=-1))
    if max_order >= 3:
        one = np.ones_like(t)
        out.append(np.stack([-one, 3 * one, -3 * one, one], axis=-1))
    return out


def _spline_cells(level: int, pts: np.ndarray):
    n = num_cells(level)
    H = mesh_size(level)
    c = np.floor(pts / H).astype(np.int64)
    np.clip(c, 0, n - 1, out=c)
    local = pts / H - c
    return c, local


def _spline_jet(d: Deformation, pts: np.ndarray, order: int) -> JetEvaluation:
    H = mesh_size(d.level)
    c, t = _spline_cells(d.level, pts)
    wx = _cubic_weights(t[:, 0], order)
    wy = _cubic_weights(t[:, 1], order)
    # scale local derivatives by 1/H per order
    for o in range(1, order + 1):
        wx[o] = wx[o] / H ** o
        wy[o] = wy[o] / H ** o
    off = np.arange(4)
    idx_x = c[:, 0, None, None] + off[None, :, None]
    idx_y = c[:, 1, None, None] + off[None, None, :]
    Cn = d.coeffs[idx_x, idx_y, :]  # (P, 4, 4, 2)

    def tp(ox, oy):
        return np.einsum("pklc,pk,pl->pc", Cn, wx[ox], wy[oy])

    value = pts + tp(0, 0)
    if order == 0:
        return JetEvaluation(value=value)

    P = pts.shape[0]
    jac = np.empty((P, 2, 2))
    jac[:, :, 0] = tp(1, 0)
    jac[:, :, 1] = tp(0, 1)
    jac[:, 0, 0] += 1.0
    jac[:, 1, 1] += 1.0
    if order == 1:
        return JetEvaluation(value=value, jacobian=jac)

    hess = np.empty((P, 2, 2, 2))
    hess[:, :, 0, 0] = tp(2, 0)
    hess[:, :, 0, 1] = hess[:, :, 1, 0] = tp(1, 1)
    hess[:, :, 1, 1] = tp(0, 2)
    lap = hess[:, :, 0, 0] + hess[:, :, 1, 1]
    if order == 2:
        return JetEvaluation(value=value, jacobian=jac, hessian=hess, laplacian=lap)

    gl = np.empty((P, 2, 2))
    gl[:, :, 0] = tp(3, 0) + tp(1, 2)
    gl[:, :, 1] = tp(2, 1) + tp(0, 3)
    return JetEvaluation(
        value=value, jacobian=jac, hessian=hess, laplacian=lap, grad_laplacian=gl
    )


def eval_spline_jet(d: Deformation, x, order: int = 3) -> JetEvaluation:
    """Exact point evaluation of the spline map and derivatives up to ``order``."""
    single = np.asarray(x).ndim == 1
    pts = _check_domain(x)
    jet = _spline_jet(d, pts, order)
    if not single:
        return jet
    pick = lambda a: None if a is None else a[0]
    return JetEvaluation(
        value=jet.value[0],
        jacobian=pick(jet.jacobian),
        hessian=pick(jet.hessian),
        laplacian=pick(jet.laplacian),
        grad_laplacian=pick(jet.grad_laplacian),
    )


def eval_deformation(d: Deformation, x) -> np.ndarray:
    """Deformed positions Phi(x); value-only fast path."""
    single = np.asarray(x).ndim == 1
    pts = _check_domain(x)
    val = _spline_jet(d, pts, 0).value
    return val[0] if single else val


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor Gauss rule, 3 points per dimension per cell, on one mesh level."""

    level: int
    points: np.ndarray   # (Q, 2), cell-major, fixed order
    weights: np.ndarray  # (Q,)


@lru_cache(maxsize=None)
def build_quadrature(level: int) -> QuadratureRule:
    """Gauss-Legendre rule exact for tensor polynomials of degree 5 per axis."""
    if level < 1:
        raise ValueError("quadrature level must be >= 1")
    n = num_cells(level)
    H = mesh_size(level)
    g, w = np.polynomial.legendre.leggauss(3)
    g = (g + 1.0) / 2.0
    w = w / 2.0
    cx, cy = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    cx = cx.ravel()[:, None]
    cy = cy.ravel()[:, None]
    gx, gy = np.meshgrid(g, g, indexing="ij")
    wx, wy = np.meshgrid(w, w, indexing="ij")
    px = (cx + gx.ravel()[None, :]) * H
    py = (cy + gy.ravel()[None, :]) * H
    pts = np.stack([px.ravel(), py.ravel()], axis=-1)
    wts = np.tile((wx * wy).ravel() * H * H, n * n)
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(level=level, points=pts, weights=wts)


# ---------------------------------------------------------------------------
# tensor-structure fast paths at quadrature points
#
# The Gauss points of ``build_quadrature`` form a tensor grid, so spline
# evaluation there factors into two small 1D collocation matrices; the
# matrices depend only on the level pair and are cached.  Results use
# the exact same floating-point abscissae as ``build_quadrature`` and
# match ``_spline_jet`` to rounding (the contraction order differs).


@lru_cache(maxsize=None)
def _quad_collocation_1d(spline_level: int, quad_level: int, max_order: int):
    """1D spline collocation matrices at the Gauss abscissae, per order."""
    nq = num_cells(quad_level)
    ns = num_cells(spline_level)
    H = mesh_size(spline_level)
    hq = mesh_size(quad_level)
    g, _ = np.polynomial.legendre.leggauss(3)
    g = (g + 1.0) / 2.0
    x = ((np.arange(nq)[:, None] + g[None, :]) * hq).ravel()
    c = np.floor(x / H).astype(np.int64)
    np.clip(c, 0, ns - 1, out=c)
    t = x / H - c
    wts = _cubic_weights(t, max_order)
    rows = np.arange(x.size)
    mats = []
    for o, w in enumerate(wts):
        B = np.zeros((x.size, ns + 3))
        for k in range(4):
            B[rows, c + k] = w[:, k] / H ** o
        B.setflags(write=False)
        mats.append(B)
    return tuple(mats)


def _to_quad_order(T: np.ndarray, quad_level: int) -> np.ndarray:
    """Reorder a (3n, 3n, ...) tensor-grid array to quadrature point order."""
    nq = num_cells(quad_level)
    trail = T.shape[2:]
    T = T.reshape((nq, 3, nq, 3) + trail)
    T = np.moveaxis(T, 2, 1)
    return T.reshape((9 * nq * nq,) + trail)


def _from_quad_order(v: np.ndarray, quad_level: int) -> np.ndarray:
    """Inverse of :func:`_to_quad_order`."""
    nq = num_cells(quad_level)
    trail = v.shape[1:]
    v = v.reshape((nq, nq, 3, 3) + trail)
    v = np.moveaxis(v, 2, 1)
    return v.reshape((3 * nq, 3 * nq) + trail)


def _jet_on_quadrature(d: Deformation, quad_level: int,
                       order: int) -> JetEvaluation:
    """Jet of the spline map at ``build_quadrature(quad_level).points``.

    Same contract and point ordering as ``_spline_jet`` at those points,
    but evaluated through the cached 1D collocation matrices.
    """
    Bs = _quad_collocation_1d(d.level, quad_level, order)
    C = d.coeffs

    def tp(ox, oy):
        tmp = np.tensordot(Bs[ox], C, axes=(1, 0))       # (a, j, comp)
        T = np.tensordot(tmp, Bs[oy], axes=(1, 1))       # (a, comp, b)
        return _to_quad_order(T.transpose(0, 2, 1), quad_level)

    value = build_quadrature(quad_level).points + tp(0, 0)
    if order == 0:
        return JetEvaluation(value=value)

    P = value.shape[0]
    jac = np.empty((P, 2, 2))
    jac[:, :, 0] = tp(1, 0)
    jac[:, :, 1] = tp(0, 1)
    jac[:, 0, 0] += 1.0
    jac[:, 1, 1] += 1.0
    if order == 1:
        return JetEvaluation(value=value, jacobian=jac)

    hess = np.empty((P, 2, 2, 2))
    hess[:, :, 0, 0] = tp(2, 0)
    hess[:, :, 0, 1] = hess[:, :, 1, 0] = tp(1, 1)
    hess[:, :, 1, 1] = tp(0, 2)
    lap = hess[:, :, 0, 0] + hess[:, :, 1, 1]
    if order == 2:
        return JetEvaluation(value=value, jacobian=jac, hessian=hess,
                             laplacian=lap)

    gl = np.empty((P, 2, 2))
    gl[:, :, 0] = tp(3, 0) + tp(1, 2)
    gl[:, :, 1] = tp(2, 1) + tp(0, 3)
    return JetEvaluation(value=value, jacobian=jac, hessian=hess,
                         laplacian=lap, grad_laplacian=gl)


def _scatter_on_quadrature(spline_level: int, quad_level: int,
                           vals: np.ndarray) -> np.ndarray:
    """Accumulate per-quadrature-point value coefficients onto the basis.

    ``vals`` has shape (Q, ...) in quadrature point order; returns the
    full control grid functional ``full[a, b, ...] = sum_q vals[q, ...]
    N_a(x_q) N_b(y_q)``.
    """
    B0 = _quad_collocation_1d(spline_level, quad_level, 0)[0]
    R = _from_quad_order(vals, quad_level)               # (3n, 3n, ...)
    tmp = np.tensordot(B0, R, axes=(0, 0))               # (a_dof, 3n, ...)
    full = np.tensordot(tmp, B0, axes=(1, 0))            # (a_dof, ..., b_dof)
    return np.moveaxis(full, -1, 1)


# ---------------------------------------------------------------------------
# grid transfer


def prolong_image(u: Image) -> Image:
    """Exact bilinear refinement to the next level."""
    v = u.values
    n = num_cells(u.level)
    out = np.empty((2 * n + 1, 2 * n + 1))
    out[::2, ::2] = v
    out[1::2, ::2] = 0.5 * (v[:-1, :] + v[1:, :])
    out[::2, 1::2] = 0.5 * (v[:, :-1] + v[:, 1:])
    out[1::2, 1::2] = 0.25 * (v[:-1, :-1] + v[1:, :-1] + v[:-1, 1:] + v[1:, 1:])
    return Image(u.level + 1, out)


def restrict_image(u: Image) -> Image:
    """Full-weighting average to the next coarser level."""
    if u.level < 1:
        raise ValueError("cannot restrict below level 0")
    v = u.values
    n = num_cells(u.level - 1)
    pad = np.pad(v, 1, mode="edge")
    st = np.array([0.25, 0.5, 0.25])
    out = np.zeros((n + 1, n + 1))
    for di in range(3):
        for dj in range(3):
            out += st[di] * st[dj] * pad[di::2, dj::2][: n + 1, : n + 1]
    return Image(u.level - 1, out)


@lru_cache(maxsize=None)
def _subdivision_matrix(level: int) -> np.ndarray:
    """Knot-insertion matrix taking level-N spline coefficients to level N+1."""
    n = num_cells(level)
    mask = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 8.0
    S = np.zeros((2 * n + 3, n + 3))
    for ai in range(n + 3):
        i = ai - 3
        for k in range(5):
            j = 2 * i + k
            aj = j + 3
            if 0 <= aj < 2 * n + 3:
                S[aj, ai] = mask[k]
    return S


def prolong_deformation(d: Deformation) -> Deformation:
    """Exact representation of the same map one level finer (knot insertion)."""
    S = _subdivision_matrix(d.level)
    fine = np.einsum("ai,ijc,bj->abc", S, d.coeffs, S)
    return Deformation(d.level + 1, fine)
