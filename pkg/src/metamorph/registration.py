"""Deformation registration by multilevel Fletcher-Reeves NCG descent.

Computes ``Phi in argmin W[u0, u1, .]`` over the boundary-conforming
spline space: the preparatory step of the shooting pipeline.  The scheme
starts from the identity on a coarse spline mesh, optimizes with a
nonlinear conjugate gradient iteration under Armijo backtracking, and
prolongates the minimizer level by level up to the target mesh.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import energy, grids
from .energy import EnergyParams
from .grids import Deformation, Image

#: line-search steps with det(D Phi) below this are rejected outright
MIN_DET_GUARD = 0.1


@dataclass(frozen=True)
class RegistrationConfig:
    """Knobs of the multilevel NCG descent."""

    coarsest_level: int = 3
    max_iterations: int = 500
    armijo_slope: float = 1e-4
    backtrack: float = 0.5
    grad_tol: float = 1e-8
    restart_period: int = 20
    max_backtracks: int = 40

    def __post_init__(self):
        if not 0.0 < self.armijo_slope < 0.5:
            raise ValueError("armijo_slope must be in (0, 0.5)")
        if not 0.0 < self.backtrack < 1.0:
            raise ValueError("backtrack must be in (0, 1)")


@dataclass
class RegistrationResult:
    phi: Deformation
    energy: float
    converged: bool
    iterations: list = field(default_factory=list)  # per optimized level
    grad_norm: float = float("nan")


def _restrict_chain(u: Image, target_level: int) -> Image:
    while u.level > target_level:
        u = grids.restrict_image(u)
    return u


def _ncg_level(u0: Image, u1: Image, w0: np.ndarray, p: EnergyParams,
               cfg: RegistrationConfig):
    """Fletcher-Reeves NCG on one spline level; returns (w, f, iters, gnorm, ok)."""
    level = u0.level - 1
    w = w0.copy()
    f = energy.matching_energy(u0, u1, Deformation.from_reduced(level, w), p).total
    g = energy.matching_energy_grad(u0, u1, Deformation.from_reduced(level, w), p)
    gg = float(np.sum(g * g))
    d = -g
    step = 1.0
    ok = True
    it = 0
    while it < cfg.max_iterations:
        gnorm = float(np.max(np.abs(g)))
        if gnorm < cfg.grad_tol:
            break
        if it % cfg.restart_period == 0:
            d = -g
        slope = float(np.sum(g * d))
        if slope >= 0.0:  # FR direction lost descent; restart
            d = -g
            slope = -gg
        accepted, w_new, f_new, t = _armijo(u0, u1, w, d, f, slope, step, cfg, p)
        if not accepted and not np.array_equal(d, -g):
            d = -g
            slope = -gg
            accepted, w_new, f_new, t = _armijo(u0, u1, w, d, f, slope, step, cfg, p)
        if not accepted:
            ok = False
            break
        w, f, step = w_new, f_new, t
        g_new = energy.matching_energy_grad(
            u0, u1, Deformation.from_reduced(level, w), p)
        gg_new = float(np.sum(g_new * g_new))
        beta = gg_new / gg if gg > 0 else 0.0
        d = -g_new + beta * d
        g, gg = g_new, gg_new
        it += 1
    return w, f, it, float(np.max(np.abs(g))), ok


def _armijo(u0, u1, w, d, f, slope, step, cfg, p):
    """Backtracking line search with the diffeomorphism guard.

    Steps that drop det(D Phi) below the guard at any spline quadrature
    point are rejected exactly like insufficient-decrease steps.
    """
    level = u0.level - 1
    t = 2.0 * step
    for _ in range(cfg.max_backtracks):
        w_new = w + t * d
        bd = energy.matching_energy(
            u0, u1, Deformation.from_reduced(level, w_new), p)
        if bd.min_det >= MIN_DET_GUARD and bd.total <= f + cfg.armijo_slope * t * slope:
            return True, w_new, bd.total, t
        t *= cfg.backtrack
    return False, w, f, step


def register(u0: Image, u1: Image, p: EnergyParams,
             cfg: RegistrationConfig | None = None,
             level: int | None = None,
             initial: Deformation | None = None) -> RegistrationResult:
    """Minimize the matching energy over deformations.

    Parameters
    ----------
    level
        Target spline level N; defaults to the image level minus one.
    initial
        Warm start.  When given, the multilevel sweep is skipped and the
        descent runs at the target level only, starting from the better
        of ``initial`` and the identity.
    """
    if cfg is None:
        cfg = RegistrationConfig()
    if u0.level != u1.level:
        raise ValueError("images must share a level")
    if level is None:
        level = u0.level - 1
    if level >= u0.level:
        raise ValueError("spline level must be coarser than the image level")

    if initial is not None:
        levels = [level]
        start = initial.reduced()
    else:
        levels = list(range(min(cfg.coarsest_level, level), level + 1))
        start = np.zeros((grids.num_cells(levels[0]) + 1,) * 2 + (2,))

    result = RegistrationResult(
        phi=Deformation.identity(level), energy=np.inf, converged=True)
    w = start
    for i, L in enumerate(levels):
        uc0 = _restrict_chain(u0, L + 1)
        uc1 = _restrict_chain(u1, L + 1)
        # never start worse than the identity (keeps the identity-energy
        # bound valid after prolongation and for warm starts)
        f_start = energy.matching_energy(
            uc0, uc1, Deformation.from_reduced(L, w), p).total
        f_id = energy.matching_energy(uc0, uc1, Deformation.identity(L), p).total
        if f_id < f_start:
            w = np.zeros_like(w)
        w, f, it, gnorm, ok = _ncg_level(uc0, uc1, w, p, cfg)
        result.iterations.append(it)
        result.converged = result.converged and ok
        if L < levels[-1]:
            w = Deformation.from_reduced(L, w)
            w = grids.prolong_deformation(w).reduced()
        else:
            result.phi = Deformation.from_reduced(L, w)
            result.energy = f
            result.grad_norm = gnorm
    return result
