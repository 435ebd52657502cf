"""Discrete geodesic shooting: the one-step extrapolation map and its iteration.

Given consecutive images ``(u0, u1)`` and the deformation ``phi1``
matching them, the next deformation ``phi2`` solves the Euler-Lagrange
equation ``R[phi2] = T[phi2]`` where ``R`` is a fixed elliptic Galerkin
operator and ``T`` a gradient-free right-hand side; the equation is
solved by the fixed-point iteration ``phi^{j+1} = R^-1 T[phi^j]``
starting from the identity.  The next image follows in closed form from
the pointwise update formula, using approximate spline inverses of the
deformations.  Iterating the step extrapolates a full image sequence
from a single initial pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from . import energy, filtering, grids, linalg, registration
from .energy import EnergyParams
from .errors import DegenerateDeformationError, InversionError, NonConvergenceError
from .grids import Deformation, Image

#: runtime diffeomorphism guard on det(D Phi) at quadrature points
MIN_DET_GUARD = 0.1


@dataclass(frozen=True)
class ShootingConfig:
    """Fixed-point stop rule and modulation-smoothing schedule."""

    threshold: float = 1e-12
    max_iterations: int = 200
    smoothing: bool = True
    tau0: float = filtering.TAU0
    beta: float = filtering.BETA
    lam: float = filtering.LAMBDA
    #: filter the modulation field after composing with phi2^-1 instead
    #: of before (the default order smooths the transported quotient)
    smooth_after_composition: bool = False

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must be in (0, 1)")


@dataclass
class StepDiagnostics:
    iterations: int
    final_diff: float
    residual: float
    min_det: float
    diffs: list = field(default_factory=list)


@dataclass
class ShootingResult:
    """Extrapolated sequence with its per-step motion decomposition.

    ``velocities[k-1]`` holds the control coefficients of
    ``V_k = K (Phi_k - Id)``; ``modulations[k-1]`` is the image
    ``I_k = U_k o Phi_k - U_{k-1}`` sampled at the FEM nodes.
    """

    images: list
    deformations: list
    velocities: list
    modulations: list
    diagnostics: list
    energies: list


def assemble_R(level: int, p: EnergyParams) -> sp.csr_matrix:
    """Galerkin matrix of (zeta, psi) -> int 2 gamma Dz.Dp + 2 grad z : grad p.

    Identical to the quadratic part of the matching energy, assembled
    over the interior spline DOFs; deformation-independent.
    """
    return energy.elastic_matrix(level, p.gamma)


@lru_cache(maxsize=None)
def _r_factorization(level: int, gamma: float) -> linalg.SpdFactorization:
    return linalg.SpdFactorization(assemble_R(level, EnergyParams(gamma=gamma)))


def _guard_det(det: np.ndarray, pts: np.ndarray, what: str) -> None:
    bad = np.flatnonzero(det < MIN_DET_GUARD)
    if bad.size:
        i = int(bad[0])
        raise DegenerateDeformationError(
            f"det(D {what}) = {det[i]:.4f} below guard {MIN_DET_GUARD}"
            f" at quadrature point {pts[i]}", point=tuple(pts[i]))


class _DualScatter:
    """Accumulates a functional over the spline basis into the free DOFs.

    For each point ``pts[q]`` with quadrature weight ``wq[q]``, the basis
    function ``Psi = e_m N`` receives
    ``wq * (vcoef[q, m] N(pts[q]) + gcoef[q, m, :] . grad N(pts[q]))``.
    The basis stencils depend only on the point set and are precomputed,
    so repeated scatters over the same points (one per fixed-point
    iteration) only pay for the coefficient contraction.
    """

    def __init__(self, level: int, pts: np.ndarray):
        self.level = level
        n = grids.num_cells(level)
        H = grids.mesh_size(level)
        c, t = grids._spline_cells(level, pts)
        wx0, wx1 = grids._cubic_weights(t[:, 0], 1)
        wy0, wy1 = grids._cubic_weights(t[:, 1], 1)
        wx1 = wx1 / H
        wy1 = wy1 / H
        self.Nv = np.einsum("pk,pl->pkl", wx0, wy0)
        self.dNx = np.einsum("pk,pl->pkl", wx1, wy0)
        self.dNy = np.einsum("pk,pl->pkl", wx0, wy1)
        off = np.arange(4)
        self.idx_x = c[:, 0, None, None] + off[None, :, None]
        self.idx_y = c[:, 1, None, None] + off[None, None, :]
        self.shape = (n + 3, n + 3, 2)

    def __call__(self, wq: np.ndarray, vcoef: np.ndarray,
                 gcoef: np.ndarray) -> np.ndarray:
        contrib = (np.einsum("p,pm,pkl->pklm", wq, vcoef, self.Nv)
                   + np.einsum("p,pm,pkl->pklm", wq, gcoef[:, :, 0], self.dNx)
                   + np.einsum("p,pm,pkl->pklm", wq, gcoef[:, :, 1], self.dNy))
        full = np.zeros(self.shape)
        np.add.at(full, (self.idx_x, self.idx_y), contrib)
        return grids.reduce_dual(self.level, full)


def _scatter_dual(level: int, pts: np.ndarray, wq: np.ndarray,
                  vcoef: np.ndarray, gcoef: np.ndarray) -> np.ndarray:
    """One-shot convenience wrapper around :class:`_DualScatter`."""
    return _DualScatter(level, pts)(wq, vcoef, gcoef)


class _RhsContext:
    """Everything in T[phi] that does not depend on the iterate ``phi``.

    Jets of ``phi1`` at both quadrature rules, the transported points,
    the matching-residual coefficient, and the scatter stencils at the
    transported points are fixed across the fixed-point iteration and
    precomputed once per solve.
    """

    def __init__(self, phi1: Deformation, u0: Image, u1: Image,
                 p: EnergyParams):
        level = phi1.level
        self.level = level
        self.p = p
        # spline-mesh part
        quad = grids.build_quadrature(level)
        jet1 = grids._jet_on_quadrature(phi1, level, 3)
        self.y = np.clip(jet1.value, 0.0, 1.0)
        self.J1 = jet1.jacobian
        _guard_det(linalg.det2(self.J1), quad.points, "phi1")
        self.G = jet1.grad_laplacian             # G[m, k] = d_k (lap phi1)_m
        self.lap1 = jet1.laplacian
        self.weights = quad.weights
        self.points = quad.points
        self.scatter = _DualScatter(level, self.y)
        # image-mesh matching part
        quad_i = grids.build_quadrature(u0.level)
        jet1i = grids._jet_on_quadrature(phi1, u0.level, 1)
        self.yi = np.clip(jet1i.value, 0.0, 1.0)
        det1 = linalg.det2(jet1i.jacobian)
        _guard_det(det1, quad_i.points, "phi1")
        res = grids.eval_image(u1, self.yi) - grids.eval_image(u0, quad_i.points)
        self.coef = -(res * res) / (p.delta * det1)
        self.weights_i = quad_i.weights
        self.points_i = quad_i.points
        self.scatter_i = _DualScatter(level, self.yi)


def _apply_rhs(phi: Deformation, ctx: _RhsContext) -> np.ndarray:
    """Evaluate T[phi] against a precomputed :class:`_RhsContext`."""
    p = ctx.p
    # --- spline-mesh part -------------------------------------------------
    jet = grids._spline_jet(phi, ctx.y, 2)
    _guard_det(linalg.det2(jet.jacobian), ctx.points, "phi")
    Minv = linalg.inv2(jet.jacobian)
    B = np.einsum("qim,qik->qmk", Minv, ctx.G)   # (D phi)^-T D(lap phi1)
    # gradient-type coefficient of the first regularizer term:
    # -2 gamma (B J1^T) grad N with D(Psi o phi1) = (D Psi o phi1) D phi1
    gcoef = -2.0 * p.gamma * np.einsum("qmk,qrk->qmr", B, ctx.J1)
    # value-type coefficients: chain-rule derivative of (D phi)^-1 o phi1
    # contracted against D(lap phi1), plus the zeroth-order term
    dMinv = -np.einsum("qmi,qijr,qjl->qmlr", Minv, jet.hessian, Minv)
    K = np.einsum("qmlr,qrk->qmlk", dMinv, ctx.J1)
    vcoef = -2.0 * p.gamma * np.einsum("qmk,qmlk->ql", ctx.G, K)
    vcoef -= 2.0 * np.einsum("qml,qm->ql", Minv, ctx.lap1)
    rhs = ctx.scatter(ctx.weights, vcoef, gcoef)

    # --- image-mesh matching part -----------------------------------------
    jeti = grids._spline_jet(phi, ctx.yi, 2)
    _guard_det(linalg.det2(jeti.jacobian), ctx.points_i, "phi")
    Mi = linalg.inv2(jeti.jacobian)
    W = np.einsum("qji,qijk->qk", Mi, jeti.hessian)   # (D phi)^-T : d_k(D phi)
    vci = np.einsum("q,qk,qkl->ql", ctx.coef, W, Mi)
    gci = -np.einsum("q,qlm->qml", ctx.coef, Mi)      # -(D phi)^-T grad N
    rhs += ctx.scatter_i(ctx.weights_i, vci, gci)
    return rhs


def apply_T_tilde(phi: Deformation, phi1: Deformation, u0: Image, u1: Image,
                  p: EnergyParams) -> np.ndarray:
    """Right-hand side T[phi](Psi) for every interior spline basis function.

    The two terms derived from the regularizer are integrated with the
    spline-mesh quadrature, the matching term with the image-mesh
    quadrature.  No image gradients are evaluated anywhere; the basis
    functions are composed with ``phi1`` exactly via spline jets and the
    chain rule.  Returns the dual vector as a (2**N+1, 2**N+1, 2) array.
    """
    return _apply_rhs(phi, _RhsContext(phi1, u0, u1, p))


def fixed_point_solve(phi1: Deformation, u0: Image, u1: Image,
                      p: EnergyParams, cfg: ShootingConfig):
    """Solve R[phi2] = T[phi2] by fixed-point iteration from the identity.

    Returns ``(phi2, StepDiagnostics)``; raises ``NonConvergenceError``
    (carrying the last iterate) when the iteration cap is hit, which
    signals a too-large initial variation.
    """
    level = phi1.level
    n = grids.num_cells(level)
    fact = _r_factorization(level, p.gamma)
    ctx = _RhsContext(phi1, u0, u1, p)
    phi = Deformation.identity(level)
    red = np.zeros((n + 1, n + 1, 2))
    diffs = []
    converged = False
    for _ in range(cfg.max_iterations):
        rhs = _apply_rhs(phi, ctx)
        new = np.empty_like(red)
        for comp in range(2):
            new[:, :, comp] = fact.solve(rhs[:, :, comp].ravel()).reshape(n + 1, n + 1)
        diff = float(np.max(np.abs(new - red)))
        diffs.append(diff)
        red = new
        phi = Deformation.from_reduced(level, red)
        if diff < cfg.threshold:
            converged = True
            break
    if not converged:
        raise NonConvergenceError(
            f"fixed-point iteration did not converge in {cfg.max_iterations} "
            f"iterations (last difference {diffs[-1]:.3e}); "
            "the initial image variation may be too large",
            last_diff=diffs[-1], partial=phi)
    A = assemble_R(level, p)
    rhs = _apply_rhs(phi, ctx)
    resid = 0.0
    for comp in range(2):
        r = A @ red[:, :, comp].ravel() - rhs[:, :, comp].ravel()
        resid = max(resid, float(np.max(np.abs(r))))
    diag = StepDiagnostics(
        iterations=len(diffs), final_diff=diffs[-1], residual=resid,
        min_det=energy.min_det_jacobian(phi), diffs=diffs)
    return phi, diag


# ---------------------------------------------------------------------------
# approximate deformation inversion


def _bilinear_invert(q, p00, p10, p01, p11, iters=25):
    """Newton inversion of the bilinear map of one deformed cell.

    All arguments broadcast over a leading batch axis; returns local
    coordinates (s, t) of the preimages.
    """
    d = p11 - p10 - p01 + p00
    ex = p10 - p00
    ey = p01 - p00
    s = np.full(q.shape[:-1], 0.5)
    t = np.full(q.shape[:-1], 0.5)
    for _ in range(iters):
        f = (p00 + s[..., None] * ex + t[..., None] * ey
             + (s * t)[..., None] * d - q)
        jx = ex + t[..., None] * d
        jy = ey + s[..., None] * d
        det = jx[..., 0] * jy[..., 1] - jx[..., 1] * jy[..., 0]
        det = np.where(np.abs(det) < 1e-300, 1.0, det)
        ds = (f[..., 0] * jy[..., 1] - f[..., 1] * jy[..., 0]) / det
        dt = (jx[..., 0] * f[..., 1] - jx[..., 1] * f[..., 0]) / det
        s = s - ds
        t = t - dt
    resid = (p00 + s[..., None] * ex + t[..., None] * ey
             + (s * t)[..., None] * d - q)
    return s, t, np.max(np.abs(resid), axis=-1)


def _collocation_nodes(level: int) -> np.ndarray:
    """1D interpolation abscissae for the reduced spline fit.

    Interior knots plus half-cell offsets at the ends (the boundary trace
    of the reduced space is identically zero, so end knots carry no
    information).
    """
    n = grids.num_cells(level)
    H = grids.mesh_size(level)
    s = np.arange(n + 1, dtype=float) * H
    s[0] = H / 2.0
    s[-1] = 1.0 - H / 2.0
    return s


@lru_cache(maxsize=None)
def _collocation_matrix(level: int) -> np.ndarray:
    s = _collocation_nodes(level)
    pts = np.stack([s, np.full_like(s, 0.5)], axis=-1)
    c, t = grids._spline_cells(level, pts)
    w0 = grids._cubic_weights(t[:, 0], 0)[0]
    n = grids.num_cells(level)
    P = np.zeros((n + 1, n + 3))
    for r in range(n + 1):
        P[r, c[r, 0]:c[r, 0] + 4] = w0[r]
    return P @ grids.boundary_embedding(level)


def invert_deformation(phi: Deformation) -> Deformation:
    """Spline-space approximation of the inverse map.

    The deformed positions of the spline-cell vertices define a piecewise
    bilinear approximation of ``phi``; each collocation query is assigned
    to the deformed cell containing it (ring search around the undeformed
    cell), the cell's bilinear map is inverted by Newton iteration, and
    the resulting preimage cloud is fitted by tensor-product spline
    interpolation.  The boundary stays pinned to the identity by the
    reduced representation.
    """
    level = phi.level
    n = grids.num_cells(level)
    H = grids.mesh_size(level)
    ax = np.arange(n + 1, dtype=float) * H
    vx, vy = np.meshgrid(ax, ax, indexing="ij")
    verts = np.stack([vx.ravel(), vy.ravel()], axis=-1)
    P = grids.eval_deformation(phi, verts).reshape(n + 1, n + 1, 2)

    s1 = _collocation_nodes(level)
    qx, qy = np.meshgrid(s1, s1, indexing="ij")
    q = np.stack([qx.ravel(), qy.ravel()], axis=-1)

    # few Newton steps on the true spline locate the containing cell even
    # when the displacement spans several cells of a fine mesh
    xg = q.copy()
    for _ in range(4):
        jet = grids._spline_jet(phi, np.clip(xg, 0.0, 1.0), 1)
        xg = xg - np.einsum("pij,pj->pi", linalg.inv2(jet.jacobian),
                            jet.value - q)
    guess = np.clip(np.floor(xg / H).astype(np.int64), 0, n - 1)
    tol = 1e-9
    x = np.empty_like(q)
    todo = np.arange(len(q))
    for di, dj in [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1),
                   (-1, -1), (-1, 1), (1, -1), (1, 1)]:
        if todo.size == 0:
            break
        gi = np.clip(guess[todo, 0] + di, 0, n - 1)
        gj = np.clip(guess[todo, 1] + dj, 0, n - 1)
        s, t, resid = _bilinear_invert(
            q[todo], P[gi, gj], P[gi + 1, gj], P[gi, gj + 1], P[gi + 1, gj + 1])
        ok = (resid < 1e-10) & (s > -tol) & (s < 1 + tol) & (t > -tol) & (t < 1 + tol)
        hit = todo[ok]
        x[hit, 0] = (gi[ok] + s[ok]) * H
        x[hit, 1] = (gj[ok] + t[ok]) * H
        todo = todo[~ok]
    for idx in todo:
        x[idx] = _ring_search(q[idx], P, guess[idx], n, H)

    disp = (x - q).reshape(len(s1), len(s1), 2)
    M1 = _collocation_matrix(level)
    red = np.empty((n + 1, n + 1, 2))
    for comp in range(2):
        red[:, :, comp] = np.linalg.solve(
            M1, np.linalg.solve(M1, disp[:, :, comp].T).T)
    return Deformation.from_reduced(level, red)


def _ring_search(q, P, start, n, H):
    """Find the deformed cell containing q by growing rings of cells."""
    i0, j0 = int(start[0]), int(start[1])
    tol = 1e-9
    for r in range(n + 1):
        for i in range(max(0, i0 - r), min(n, i0 + r + 1)):
            for j in range(max(0, j0 - r), min(n, j0 + r + 1)):
                if max(abs(i - i0), abs(j - j0)) != r:
                    continue
                s, t, resid = _bilinear_invert(
                    q[None], P[None, i, j], P[None, i + 1, j],
                    P[None, i, j + 1], P[None, i + 1, j + 1])
                if (resid[0] < 1e-10 and -tol < s[0] < 1 + tol
                        and -tol < t[0] < 1 + tol):
                    return np.array([(i + s[0]) * H, (j + t[0]) * H])
    raise InversionError(
        f"no deformed cell covers the point {tuple(q)} (fold-over?)")


# ---------------------------------------------------------------------------
# image update and the exponential map


def modulation_quotient(u0: Image, u1: Image, phi1: Deformation,
                        phi1_inv: Deformation | None = None) -> Image:
    """The field (U1 - U0 o phi1^-1) / (det D phi1 o phi1^-1) at the nodes."""
    if phi1_inv is None:
        phi1_inv = invert_deformation(phi1)
    nodes = u1.nodes()
    w = np.clip(grids.eval_deformation(phi1_inv, nodes), 0.0, 1.0)
    det = linalg.det2(grids._spline_jet(phi1, w, 1).jacobian)
    vals = (u1.values.ravel() - grids.eval_image(u0, w)) / det
    return Image(u1.level, vals.reshape(u1.values.shape))


def image_update(u0: Image, u1: Image, phi1: Deformation, phi2: Deformation,
                 cfg: ShootingConfig, tau: float | None = None,
                 phi1_inv: Deformation | None = None,
                 phi2_inv: Deformation | None = None) -> Image:
    """Nodal evaluation of the pointwise update formula.

    ``u2 = Q o phi2^-1 + u1 o phi2^-1`` where Q is the modulation
    quotient of the previous pair.  With smoothing enabled, Q receives
    one anisotropic-diffusion step before the final composition (or
    after it, behind the ``smooth_after_composition`` flag).
    """
    if phi2_inv is None:
        phi2_inv = invert_deformation(phi2)
    quot = modulation_quotient(u0, u1, phi1, phi1_inv)
    fp = filtering.FilterParams(tau=cfg.tau0 if tau is None else tau, lam=cfg.lam)
    if cfg.smoothing and not cfg.smooth_after_composition:
        quot = filtering.anisotropic_smooth(quot, fp)
    nodes = u1.nodes()
    z = np.clip(grids.eval_deformation(phi2_inv, nodes), 0.0, 1.0)
    shape = u1.values.shape
    moved = Image(u1.level, grids.eval_image(quot, z).reshape(shape))
    if cfg.smoothing and cfg.smooth_after_composition:
        moved = filtering.anisotropic_smooth(moved, fp)
    vals = moved.values + grids.eval_image(u1, z).reshape(shape)
    return Image(u1.level, vals)


def exp2(u0: Image, u1: Image, phi1: Deformation, p: EnergyParams,
         cfg: ShootingConfig, tau: float | None = None):
    """One extrapolation step; returns (u2, phi2, diagnostics)."""
    phi2, diag = fixed_point_solve(phi1, u0, u1, p, cfg)
    u2 = image_update(u0, u1, phi1, phi2, cfg, tau=tau)
    return u2, phi2, diag


def exp_k(u0: Image, u1: Image, K: int, p: EnergyParams,
          cfg: ShootingConfig | None = None,
          reg_cfg: registration.RegistrationConfig | None = None,
          phi1: Deformation | None = None,
          reregister: bool = False) -> ShootingResult:
    """Extrapolate a K-step sequence from the initial pair.

    ``phi1`` is registered once unless given; subsequent steps inherit
    the previous step's ``phi2`` as their matching deformation (the
    optimality condition it satisfies is exactly the next step's
    precondition).  ``reregister=True`` forces a fresh registration per
    step instead.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    if cfg is None:
        cfg = ShootingConfig()
    if phi1 is None:
        phi1 = registration.register(u0, u1, p, reg_cfg).phi
    images = [u0, u1]
    phis = [phi1]
    diags = []
    result = ShootingResult(images, phis, [], [], diags, [])
    for k in range(2, K + 1):
        tau = filtering.tau_schedule(k, cfg.tau0, cfg.beta)
        try:
            u2, phi2, d = exp2(images[-2], images[-1], phis[-1], p, cfg, tau=tau)
        except NonConvergenceError as exc:
            exc.partial = _finalize(result, K, p)
            raise
        if reregister and k < K:
            phi_next = registration.register(
                images[-1], u2, p, reg_cfg, initial=phi2).phi
        else:
            phi_next = phi2
        images.append(u2)
        phis.append(phi_next)
        diags.append(d)
    return _finalize(result, K, p)


def _finalize(result: ShootingResult, K: int, p: EnergyParams) -> ShootingResult:
    images, phis = result.images, result.deformations
    result.velocities = [K * phi.coeffs for phi in phis]
    result.modulations = []
    for k, phi in enumerate(phis, start=1):
        if k >= len(images):
            break
        nodes = images[k].nodes()
        y = np.clip(grids.eval_deformation(phi, nodes), 0.0, 1.0)
        vals = grids.eval_image(images[k], y).reshape(images[k].values.shape)
        result.modulations.append(Image(images[k].level, vals - images[k - 1].values))
    result.energies = [
        energy.matching_energy(images[k], images[k + 1], phis[k], p).total
        for k in range(len(phis)) if k + 1 < len(images)]
    return result
