"""Discrete matching energy, its control-point gradient, and the path energy.

The matching energy of an image pair ``(u, u_tilde)`` and a deformation
``phi`` combines a thin-plate style regularizer, integrated with the
spline-mesh quadrature, and a scaled L2 mismatch of ``u_tilde . phi``
against ``u``, integrated with the image-mesh quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from . import grids
from .grids import Deformation, Image


@dataclass(frozen=True)
class EnergyParams:
    """Weights of the matching energy: regularizer gamma, mismatch 1/delta."""

    gamma: float = 1e-4
    delta: float = 1e-2

    def __post_init__(self):
        if self.gamma <= 0 or self.delta <= 0:
            raise ValueError("gamma and delta must be positive")


@dataclass(frozen=True)
class EnergyBreakdown:
    regularizer: float
    matching: float
    clamped: int = 0       # quadrature points pushed back into the unit square
    min_det: float = 1.0   # min det(D phi) over spline-mesh quadrature points

    @property
    def total(self) -> float:
        return self.regularizer + self.matching


def _clamp_count(pts: np.ndarray) -> int:
    return int(np.count_nonzero(np.any((pts < 0.0) | (pts > 1.0), axis=-1)))


@lru_cache(maxsize=None)
def _reduced_embedding_2d(level: int) -> sp.csr_matrix:
    E1 = sp.csr_matrix(grids.boundary_embedding(level))
    return sp.kron(E1, E1, format="csr")


@lru_cache(maxsize=None)
def elastic_matrix(level: int, gamma: float) -> sp.csr_matrix:
    """Galerkin matrix of (zeta, psi) -> int 2 gamma Dz.Dp + 2 grad z : grad p.

    Assembled per scalar component over the boundary-conforming control
    grid; a vector field is handled by applying it to each component.
    """
    E2 = _reduced_embedding_2d(level)
    return (E2.T @ _elastic_full(level, gamma) @ E2).tocsr()


@lru_cache(maxsize=None)
def _elastic_full(level: int, gamma: float) -> sp.csr_matrix:
    """Same bilinear form over the unconstrained full control grid."""
    n = grids.num_cells(level)
    H = grids.mesh_size(level)
    g, w = np.polynomial.legendre.leggauss(3)
    g = (g + 1.0) / 2.0
    w = w / 2.0
    wts = _cubic_weights_scaled(g, H)
    # 2D tensor basis indices (k, l); local matrix identical for every cell
    dx = np.einsum("qk,rl->qrkl", wts[1], wts[0]).reshape(9, 16)
    dy = np.einsum("qk,rl->qrkl", wts[0], wts[1]).reshape(9, 16)
    lap = (np.einsum("qk,rl->qrkl", wts[2], wts[0])
           + np.einsum("qk,rl->qrkl", wts[0], wts[2])).reshape(9, 16)
    wq = np.outer(w, w).reshape(9) * H * H
    local = np.einsum("q,qi,qj->ij", wq, dx, dx)
    local += np.einsum("q,qi,qj->ij", wq, dy, dy)
    local += gamma * np.einsum("q,qi,qj->ij", wq, lap, lap)
    local *= 2.0

    cx, cy = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    cx = cx.ravel()
    cy = cy.ravel()
    off = np.arange(4)
    ax = cx[:, None, None] + off[None, :, None]          # (cells, 4, 1)
    ay = cy[:, None, None] + off[None, None, :]          # (cells, 1, 4)
    dof = (ax * (n + 3) + ay).reshape(-1, 16)            # (cells, 16)
    rows = np.repeat(dof, 16, axis=1).ravel()
    cols = np.tile(dof, (1, 16)).ravel()
    vals = np.tile(local.ravel(), n * n)
    size = (n + 3) * (n + 3)
    return sp.coo_matrix((vals, (rows, cols)), shape=(size, size)).tocsr()


def _cubic_weights_scaled(t: np.ndarray, H: float):
    wts = grids._cubic_weights(np.asarray(t, dtype=float), 2)
    return [wts[0], wts[1] / H, wts[2] / H ** 2]


def _regularizer(phi: Deformation, p: EnergyParams):
    """Regularizer value and min det(D phi) over the spline quadrature.

    The regularizer is quadratic in the displacement control points, so
    its quadrature value is the half quadratic form of the cell-wise
    assembled Galerkin matrix -- identical floats, no point evaluation.
    """
    A = _elastic_full(phi.level, p.gamma)
    reg = 0.0
    for comp in range(2):
        c = phi.coeffs[:, :, comp].ravel()
        reg += 0.5 * float(c @ (A @ c))
    jac = grids._jet_on_quadrature(phi, phi.level, 1).jacobian
    det = (jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0])
    return reg, float(det.min())


def matching_energy(u: Image, u_tilde: Image, phi: Deformation,
                    p: EnergyParams) -> EnergyBreakdown:
    """Discrete matching energy W[u, u_tilde, phi] with its split parts."""
    if u.level != u_tilde.level:
        raise ValueError("images must share a level")
    if phi.level >= u.level:
        raise ValueError("deformation level must be coarser than image level")
    reg, min_det = _regularizer(phi, p)
    quad = grids.build_quadrature(u.level)
    y = grids._jet_on_quadrature(phi, u.level, 0).value
    clamped = _clamp_count(y)
    np.clip(y, 0.0, 1.0, out=y)
    res = grids.eval_image(u_tilde, y) - grids.eval_image(u, quad.points)
    match = float(np.dot(quad.weights, res * res)) / p.delta
    return EnergyBreakdown(regularizer=reg, matching=match,
                           clamped=clamped, min_det=min_det)


def matching_energy_grad(u: Image, u_tilde: Image, phi: Deformation,
                         p: EnergyParams) -> np.ndarray:
    """Gradient of the matching energy w.r.t. the free control displacements.

    Returns an array of shape (2**N + 1, 2**N + 1, 2).
    """
    level = phi.level
    n = grids.num_cells(level)
    # regularizer part is quadratic in the displacement
    A = elastic_matrix(level, p.gamma)
    w_red = Deformation(level, phi.coeffs).reduced()
    grad = np.empty_like(w_red)
    for comp in range(2):
        grad[:, :, comp] = (A @ w_red[:, :, comp].ravel()).reshape(n + 1, n + 1)

    quad = grids.build_quadrature(u.level)
    y = grids._jet_on_quadrature(phi, u.level, 0).value
    np.clip(y, 0.0, 1.0, out=y)
    res = grids.eval_image(u_tilde, y) - grids.eval_image(u, quad.points)
    g_im = grids.eval_image_grad(u_tilde, y)
    coef = (2.0 / p.delta) * quad.weights * res          # (Q,)
    full = grids._scatter_on_quadrature(level, u.level,
                                        coef[:, None] * g_im)
    grad += grids.reduce_dual(level, full)
    return grad


def path_energy(images, phis, p: EnergyParams) -> float:
    """K times the sum of segment matching energies along the path."""
    if len(images) != len(phis) + 1:
        raise ValueError("need exactly one deformation per image segment")
    K = len(phis)
    total = 0.0
    for k in range(K):
        total += matching_energy(images[k], images[k + 1], phis[k], p).total
    return K * total


def min_det_jacobian(phi: Deformation) -> float:
    """Smallest det(D phi) over the spline-mesh quadrature points."""
    jac = grids._jet_on_quadrature(phi, phi.level, 1).jacobian
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    return float(det.min())
