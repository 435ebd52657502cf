"""Synthetic images and deformations used by experiments and tests."""

from __future__ import annotations

import numpy as np

from . import grids
from .grids import Deformation, Image


def gaussian_blob(level: int, center=(0.5, 0.5), sigma: float = 0.12,
                  amplitude: float = 0.6, background: float = 0.1) -> Image:
    """Smooth radial blob; C-infinity, safely inside [0, 1] intensities."""
    cx, cy = center

    def fn(x, y):
        return background + amplitude * np.exp(
            -((x - cx) ** 2 + (y - cy) ** 2) / (2.0 * sigma ** 2))

    return Image.from_function(level, fn)


def blob_pair(level: int, shift=(0.02, 0.0), **kw):
    """A blob and its slightly translated copy (synthetic ground truth)."""
    u0 = gaussian_blob(level, **kw)
    center = kw.get("center", (0.5, 0.5))
    moved = (center[0] + shift[0], center[1] + shift[1])
    kw1 = dict(kw)
    kw1["center"] = moved
    u1 = gaussian_blob(level, **kw1)
    return u0, u1


def _ellipse(x, y, center, axes, angle, edge=0.12):
    """Smooth indicator of an ellipse; ``edge`` controls the interface width."""
    ca, sa = np.cos(angle), np.sin(angle)
    dx, dy = x - center[0], y - center[1]
    xi = (ca * dx + sa * dy) / axes[0]
    eta = (-sa * dx + ca * dy) / axes[1]
    q = xi ** 2 + eta ** 2
    return 0.5 * (1.0 + np.tanh((1.0 - q) / edge))


_ELLIPSES = (
    # center, axes, angle, intensity
    ((0.30, 0.70), (0.13, 0.08), 0.3, 0.55),
    ((0.70, 0.72), (0.10, 0.06), -0.5, 0.75),
    ((0.50, 0.30), (0.16, 0.09), 0.1, 0.40),
)


def three_ellipse_scene(level: int, shift=(0.0, 0.0), grow: float = 0.0,
                        spin: float = 0.0, shade: float = 0.0) -> Image:
    """Three ellipses of different intensities on a dark background.

    The optional arguments perturb the scene per ellipse: the first is
    translated by ``shift`` and expanded by ``grow``, the second rotated
    by ``spin``, the third translated by ``shift`` with its intensity
    scaled by ``1 + shade``.
    """

    def fn(x, y):
        out = np.full_like(x, 0.05)
        (c1, a1, t1, i1), (c2, a2, t2, i2), (c3, a3, t3, i3) = _ELLIPSES
        c1 = (c1[0] + shift[0], c1[1] + shift[1])
        a1 = (a1[0] * (1 + grow), a1[1] * (1 + grow))
        c3 = (c3[0] + shift[0], c3[1] + shift[1])
        out = out + i1 * _ellipse(x, y, c1, a1, t1)
        out = out + i2 * _ellipse(x, y, c2, a2, t2 + spin)
        out = out + i3 * (1 + shade) * _ellipse(x, y, c3, a3, t3)
        return np.clip(out, 0.0, 1.0)

    return Image.from_function(level, fn)


def three_ellipse_pair(level: int):
    """Scene plus a small variation: translation, growth, rotation, shading."""
    u0 = three_ellipse_scene(level)
    u1 = three_ellipse_scene(level, shift=(0.0, -0.008), grow=0.03,
                             spin=0.06, shade=0.04)
    return u0, u1


def sine_deformation(level: int, amplitude=(0.05, -0.04)) -> Deformation:
    """Smooth interior displacement (a1 sin(pi x) sin(pi y), a2 ...).

    Control points are nodal samples of the field; prolongation gives the
    identical map at a finer level, which makes the deformation suitable
    for refinement studies.
    """
    n = grids.num_cells(level)
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    base = np.sin(np.pi * X) * np.sin(np.pi * Y)
    red = np.stack([amplitude[0] * base, amplitude[1] * base], axis=-1)
    return Deformation.from_reduced(level, red)


def bump_deformation(level: int, center=(0.5, 0.5), radius: float = 0.35,
                     strength=(0.02, -0.015)) -> Deformation:
    """Compactly supported C-infinity bump displacement."""
    n = grids.num_cells(level)
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    r2 = ((X - center[0]) ** 2 + (Y - center[1]) ** 2) / radius ** 2
    prof = np.zeros_like(X)
    inside = r2 < 1.0
    prof[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
    red = np.stack([strength[0] * prof, strength[1] * prof], axis=-1)
    return Deformation.from_reduced(level, red)


def swirl_deformation(level: int, center=(0.5, 0.5), radius: float = 0.4,
                      strength: float = 0.03) -> Deformation:
    """Rotational field around ``center``, fading to zero at ``radius``."""
    n = grids.num_cells(level)
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    dx, dy = X - center[0], Y - center[1]
    r2 = (dx ** 2 + dy ** 2) / radius ** 2
    prof = np.zeros_like(X)
    inside = r2 < 1.0
    prof[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
    red = np.stack([-strength * dy * prof, strength * dx * prof], axis=-1)
    return Deformation.from_reduced(level, red)
