"""One implicit step of Perona-Malik-type anisotropic diffusion.

Used as a post-processing filter on the intensity-modulation field to
suppress quadrature-induced oscillations before it is propagated to the
next extrapolation step.  The filter solves

    (M + tau * S[J, lambda]) x = M J

where ``M`` is the bilinear FEM mass matrix and ``S`` the stiffness
matrix with the edge-stopping weight ``(1 + |grad J|^2 / lambda^2)^-1``
evaluated at the image-mesh quadrature points.  Natural (no-flux)
boundary conditions are implied by the plain assembly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import grids, linalg
from .grids import Image

#: default diffusion time step at extrapolation step k = 2
TAU0 = 1e-3
#: decay factor of the time-step schedule along a shot sequence
BETA = 0.8
#: default edge-sensitivity parameter
LAMBDA = 0.5


@dataclass(frozen=True)
class FilterParams:
    """Diffusion time step and edge sensitivity of the implicit filter step."""

    tau: float = TAU0
    lam: float = LAMBDA

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")
        if self.lam <= 0:
            raise ValueError("lambda must be positive")


def tau_schedule(k: int, tau0: float = TAU0, beta: float = BETA) -> float:
    """Exponentially decaying time step for the image with sequence index k."""
    return beta ** (k - 2) * tau0


def _bilinear_basis(s: np.ndarray, t: np.ndarray, h: float):
    """Values and gradients of the four nodal functions of one FEM cell.

    Node order (0,0), (1,0), (0,1), (1,1) in local (x, y) coordinates.
    """
    val = np.stack(
        [(1 - s) * (1 - t), s * (1 - t), (1 - s) * t, s * t], axis=-1)
    gx = np.stack([-(1 - t), (1 - t), -t, t], axis=-1) / h
    gy = np.stack([-(1 - s), -s, (1 - s), s], axis=-1) / h
    return val, gx, gy


def _cell_dofs(level: int) -> np.ndarray:
    """Global node index per cell and local node, shape (cells, 4)."""
    n = grids.num_cells(level)
    cx, cy = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    base = cx.ravel() * (n + 1) + cy.ravel()
    return np.stack([base, base + (n + 1), base + 1, base + n + 2], axis=-1)


def mass_matrix(level: int) -> sp.csr_matrix:
    """Bilinear FEM mass matrix assembled with the image-mesh quadrature."""
    return _assemble(level, weights=None, stiffness=False)


def stiffness_matrix(J: Image, lam: float) -> sp.csr_matrix:
    """Anisotropic stiffness matrix with edge-stopping weights from J."""
    quad = grids.build_quadrature(J.level)
    g = grids.eval_image_grad(J, quad.points)
    w = 1.0 / (1.0 + np.einsum("pi,pi->p", g, g) / lam ** 2)
    return _assemble(J.level, weights=w, stiffness=True)


def _assemble(level: int, weights, stiffness: bool) -> sp.csr_matrix:
    quad = grids.build_quadrature(level)
    h = grids.mesh_size(level)
    local = quad.points / h - np.floor(quad.points / h + 1e-12)
    # quadrature points are interior to their cells, so local is in (0, 1)
    val, gx, gy = _bilinear_basis(local[:, 0], local[:, 1], h)
    wq = quad.weights if weights is None else quad.weights * weights
    Q9 = 9  # points per cell, cell-major ordering
    cells = wq.shape[0] // Q9
    if stiffness:
        dens = (np.einsum("p,pi,pj->pij", wq, gx, gx)
                + np.einsum("p,pi,pj->pij", wq, gy, gy))
    else:
        dens = np.einsum("p,pi,pj->pij", wq, val, val)
    local_mats = dens.reshape(cells, Q9, 4, 4).sum(axis=1)
    dof = _cell_dofs(level)
    rows = np.repeat(dof, 4, axis=1).ravel()
    cols = np.tile(dof, (1, 4)).ravel()
    size = (grids.num_cells(level) + 1) ** 2
    return sp.coo_matrix(
        (local_mats.ravel(), (rows, cols)), shape=(size, size)).tocsr()


def anisotropic_smooth(J: Image, p: FilterParams) -> Image:
    """Apply one implicit diffusion step (M + tau S[J, lam])^-1 M to J."""
    M = mass_matrix(J.level)
    S = stiffness_matrix(J, p.lam)
    b = M @ J.values.ravel()
    x = linalg.solve_spd(M + p.tau * S, b)
    return Image(J.level, x.reshape(J.values.shape))
