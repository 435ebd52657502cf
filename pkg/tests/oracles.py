"""Independent reference implementations used by the test suite.

Everything here is deliberately written from first principles against the
public definitions of the quantities involved (tensor-product B-splines,
bilinear finite elements, Gauss quadrature), sharing as little code as
possible with the production paths it checks.
"""

from __future__ import annotations

import numpy as np

from metamorph import grids, linalg
from metamorph import shooting as _shooting


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

def gauss_quadrature(level: int, points_per_axis: int):
    """Tensor Gauss rule over the 2^level x 2^level cell mesh.

    Returns ``(points, weights)`` with points of shape (Q, 2).  Used both
    to cross-check the packaged 3-point rule and to integrate the
    composed integrands of the operator oracle, which converge slowly
    under the production rule.
    """
    n = grids.num_cells(level)
    h = grids.mesh_size(level)
    x, w = np.polynomial.legendre.leggauss(points_per_axis)
    x = 0.5 * (x + 1.0) * h
    w = 0.5 * w * h
    axis = (np.arange(n)[:, None] * h + x[None, :]).ravel()
    X, Y = np.meshgrid(axis, axis, indexing="ij")
    points = np.stack([X.ravel(), Y.ravel()], axis=-1)
    wa = np.tile(w, n)
    weights = np.outer(wa, wa).ravel()
    return points, weights


# ---------------------------------------------------------------------------
# direct B-spline evaluation (naive summation over all control points)
# ---------------------------------------------------------------------------

def _bspline_1d(i: int, level: int, t: np.ndarray) -> np.ndarray:
    """Cardinal cubic B-spline centered for control index i, mesh 2^-level."""
    h = grids.mesh_size(level)
    s = t / h - (i - 1)  # local coordinate: support s in (-2, 2)
    a = np.abs(s)
    out = np.zeros_like(t)
    m1 = a < 1.0
    m2 = (a >= 1.0) & (a < 2.0)
    out[m1] = (4.0 - 6.0 * a[m1] ** 2 + 3.0 * a[m1] ** 3) / 6.0
    out[m2] = (2.0 - a[m2]) ** 3 / 6.0
    return out


def eval_spline_naive(coeffs: np.ndarray, level: int,
                      points: np.ndarray) -> np.ndarray:
    """Sum over every control point; O(n^2 Q) but independent of stencils."""
    n = grids.num_cells(level)
    out = np.zeros(points.shape[:-1] + coeffs.shape[2:])
    for i in range(n + 3):
        bx = _bspline_1d(i, level, points[..., 0])
        for j in range(n + 3):
            by = _bspline_1d(j, level, points[..., 1])
            out += (bx * by)[..., None] * coeffs[i, j]
    return out


# ---------------------------------------------------------------------------
# bilinear image evaluation (direct, loop-free but index-naive)
# ---------------------------------------------------------------------------

def eval_image_naive(values: np.ndarray, level: int,
                     points: np.ndarray) -> np.ndarray:
    n = grids.num_cells(level)
    h = grids.mesh_size(level)
    t = np.clip(points, 0.0, 1.0) / h
    c = np.clip(np.floor(t).astype(int), 0, n - 1)
    f = t - c
    v00 = values[c[..., 0], c[..., 1]]
    v10 = values[c[..., 0] + 1, c[..., 1]]
    v01 = values[c[..., 0], c[..., 1] + 1]
    v11 = values[c[..., 0] + 1, c[..., 1] + 1]
    fx, fy = f[..., 0], f[..., 1]
    return ((1 - fx) * (1 - fy) * v00 + fx * (1 - fy) * v10
            + (1 - fx) * fy * v01 + fx * fy * v11)


# ---------------------------------------------------------------------------
# matching energy under a refined quadrature
# ---------------------------------------------------------------------------

def matching_energy_refined(u0, u1, phi, params, points_per_axis: int = 6):
    """Re-integrate W^D with a finer rule and naive evaluations."""
    pts, w = gauss_quadrature(phi.level, points_per_axis)
    jet = grids.eval_spline_jet(phi, pts, order=2)
    d = jet.jacobian - np.eye(2)
    reg = np.sum(w * np.einsum("qij,qij->q", d, d))
    reg += params.gamma * np.sum(w * np.einsum("qi,qi->q", jet.laplacian,
                                               jet.laplacian))
    ipts, iw = gauss_quadrature(u0.level, points_per_axis)
    y = np.clip(grids.eval_deformation(phi, ipts), 0.0, 1.0)
    res = (eval_image_naive(u1.values, u1.level, y)
           - eval_image_naive(u0.values, u0.level, ipts))
    return reg + np.sum(iw * res * res) / params.delta


# ---------------------------------------------------------------------------
# operator oracle: the substituted (pre-integration-by-parts) right-hand side
# ---------------------------------------------------------------------------

def spline_third_derivatives(d, pts: np.ndarray) -> np.ndarray:
    """Full symmetric third-derivative tensor D3[q, i, j, k, r] of the map."""
    h = grids.mesh_size(d.level)
    c, t = grids._spline_cells(d.level, pts)
    wx = grids._cubic_weights(t[:, 0], 3)
    wy = grids._cubic_weights(t[:, 1], 3)
    for o in range(1, 4):
        wx[o] = wx[o] / h ** o
        wy[o] = wy[o] / h ** o
    off = np.arange(4)
    ix = c[:, 0, None, None] + off[None, :, None]
    iy = c[:, 1, None, None] + off[None, None, :]
    local = d.coeffs[ix, iy, :]

    def tensor(a, b):
        return np.einsum("pklc,pk,pl->pc", local, wx[a], wy[b])

    by_x_count = {3: tensor(3, 0), 2: tensor(2, 1),
                  1: tensor(1, 2), 0: tensor(0, 3)}
    out = np.empty((pts.shape[0], 2, 2, 2, 2))
    for j in range(2):
        for k in range(2):
            for r in range(2):
                out[:, :, j, k, r] = by_x_count[(j == 0) + (k == 0) + (r == 0)]
    return out


def _scatter_with_hessian(level, pts, wq, vcoef, gcoef, hcoef):
    """Dual-vector scatter that also carries second-derivative stencils."""
    n = grids.num_cells(level)
    h = grids.mesh_size(level)
    c, t = grids._spline_cells(level, pts)
    wx = grids._cubic_weights(t[:, 0], 2)
    wy = grids._cubic_weights(t[:, 1], 2)
    for o in range(1, 3):
        wx[o] = wx[o] / h ** o
        wy[o] = wy[o] / h ** o
    stencils = {
        (0, 0): np.einsum("pk,pl->pkl", wx[0], wy[0]),
        (1, 0): np.einsum("pk,pl->pkl", wx[1], wy[0]),
        (0, 1): np.einsum("pk,pl->pkl", wx[0], wy[1]),
        (2, 0): np.einsum("pk,pl->pkl", wx[2], wy[0]),
        (1, 1): np.einsum("pk,pl->pkl", wx[1], wy[1]),
        (0, 2): np.einsum("pk,pl->pkl", wx[0], wy[2]),
    }
    contrib = np.einsum("p,pm,pkl->pklm", wq, vcoef, stencils[(0, 0)])
    contrib += np.einsum("p,pm,pkl->pklm", wq, gcoef[:, :, 0], stencils[(1, 0)])
    contrib += np.einsum("p,pm,pkl->pklm", wq, gcoef[:, :, 1], stencils[(0, 1)])
    contrib += np.einsum("p,pm,pkl->pklm", wq, hcoef[:, :, 0, 0],
                         stencils[(2, 0)])
    contrib += np.einsum("p,pm,pkl->pklm", wq,
                         hcoef[:, :, 0, 1] + hcoef[:, :, 1, 0],
                         stencils[(1, 1)])
    contrib += np.einsum("p,pm,pkl->pklm", wq, hcoef[:, :, 1, 1],
                         stencils[(0, 2)])
    full = np.zeros((n + 3, n + 3, 2))
    off = np.arange(4)
    ix = c[:, 0, None, None] + off[None, :, None]
    iy = c[:, 1, None, None] + off[None, None, :]
    np.add.at(full, (ix, iy), contrib)
    return grids.reduce_dual(level, full)


def apply_T_substituted(phi, phi1, u0, u1, params, points_per_axis: int = 24):
    """Right-hand side in its substituted form, before integration by parts.

    The regularizer part integrates 2*gamma*lap(phi1).lap(zeta)
    + 2*D(phi1):D(zeta) with zeta = ((D phi)^-1 Psi) o phi1 differentiated
    exactly by the chain rule (this needs third derivatives of phi).  The
    integrand has derivative discontinuities at preimages of spline cell
    edges, so a refined quadrature is required for tight agreement.
    """
    level = phi.level
    pts, wq = gauss_quadrature(level, points_per_axis)
    jet1 = grids.eval_spline_jet(phi1, pts, order=2)
    y = np.clip(jet1.value, 0.0, 1.0)
    J1 = jet1.jacobian
    lap1 = jet1.laplacian
    JJt = np.einsum("prk,psk->prs", J1, J1)
    jet = grids.eval_spline_jet(phi, y, order=2)
    Minv = linalg.inv2(jet.jacobian)
    A = jet.hessian
    D3 = spline_third_derivatives(phi, y)
    dM = -np.einsum("pli,pijr,pjm->plmr", Minv, A, Minv)
    d2M = -(np.einsum("plis,pijr,pjm->plmrs", dM, A, Minv)
            + np.einsum("pli,pijrs,pjm->plmrs", Minv, D3, Minv)
            + np.einsum("pli,pijr,pjms->plmrs", Minv, A, dM))
    g = params.gamma
    vc = 2 * g * np.einsum("pl,plmrs,prs->pm", lap1, d2M, JJt)
    vc += 2 * g * np.einsum("pl,plmr,pr->pm", lap1, dM, lap1)
    gc = 4 * g * np.einsum("pl,plms,psr->pmr", lap1, dM, JJt)
    gc += 2 * g * np.einsum("pl,plm,pr->pmr", lap1, Minv, lap1)
    hc = 2 * g * np.einsum("pl,plm,prs->pmrs", lap1, Minv, JJt)
    vc += 2 * np.einsum("plk,plmr,prk->pm", J1, dM, J1)
    gc += 2 * np.einsum("plk,plm,prk->pmr", J1, Minv, J1)
    rhs = _scatter_with_hessian(level, y, wq, vc, gc, hc)

    # matching term, identical in both reformulations
    ipts, iw = gauss_quadrature(u0.level, 3)
    jet1i = grids.eval_spline_jet(phi1, ipts, order=1)
    yi = np.clip(jet1i.value, 0.0, 1.0)
    det1 = linalg.det2(jet1i.jacobian)
    jeti = grids.eval_spline_jet(phi, yi, order=2)
    Mi = linalg.inv2(jeti.jacobian)
    res = (eval_image_naive(u1.values, u1.level, yi)
           - eval_image_naive(u0.values, u0.level, ipts))
    coef = -(res * res) / (params.delta * det1)
    trace = np.einsum("qji,qijk->qk", Mi, jeti.hessian)
    vci = np.einsum("q,qk,qkl->ql", coef, trace, Mi)
    gci = -np.einsum("q,qlm->qml", coef, Mi)
    rhs += _shooting._scatter_dual(level, yi, iw, vci, gci)
    return rhs


# ---------------------------------------------------------------------------
# dense FEM matrices on the image grid (direct assembly, nodal loops)
# ---------------------------------------------------------------------------

def dirichlet_energy(values: np.ndarray, level: int) -> float:
    """Exact Dirichlet energy of the bilinear interpolant."""
    h = grids.mesh_size(level)
    gx = np.diff(values, axis=0) / h
    gy = np.diff(values, axis=1) / h
    # exact integration of the squared gradient of a bilinear function:
    # along x the derivative is linear in y (trapezoid with 1/3 rule)
    ex = np.sum(gx[:, :-1] ** 2 + gx[:, :-1] * gx[:, 1:] + gx[:, 1:] ** 2) / 3.0
    ey = np.sum(gy[:-1, :] ** 2 + gy[:-1, :] * gy[1:, :] + gy[1:, :] ** 2) / 3.0
    return float((ex + ey) * h * h)
