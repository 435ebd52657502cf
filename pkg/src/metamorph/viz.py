"""Visualization emitters: velocity color coding and modulation maps."""

from __future__ import annotations

import numpy as np

from . import grids
from .grids import Deformation, Image

_ZERO_NORM = 1e-12


def _hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Vectorized standard HSV -> RGB; hue in degrees, s and v in [0, 1]."""
    h = (h % 360.0) / 60.0
    i = np.floor(h).astype(int) % 6
    f = h - np.floor(h)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    rgb = np.empty(h.shape + (3,))
    lut = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    for idx, (r, g, b) in enumerate(lut):
        m = i == idx
        rgb[m, 0] = r[m]
        rgb[m, 1] = g[m]
        rgb[m, 2] = b[m]
    return rgb


def velocity_viz(phi: Deformation, K: int,
                 image_level: int | None = None) -> np.ndarray:
    """HSV color coding of V = K (phi - Id) on the FEM node grid.

    Hue encodes direction, value the norm relative to its maximum;
    returns an (nodes, nodes, 3) uint8 RGB array indexed like image
    nodal values.
    """
    level = phi.level + 1 if image_level is None else image_level
    n = grids.num_cells(level)
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    nodes = np.stack([X.ravel(), Y.ravel()], axis=-1)
    V = K * (grids.eval_deformation(phi, nodes) - nodes)
    norm = np.linalg.norm(V, axis=-1)
    vmax = norm.max()
    if vmax < _ZERO_NORM:
        return np.zeros((n + 1, n + 1, 3), dtype=np.uint8)
    hue = np.degrees(np.arctan2(V[:, 1], V[:, 0])) % 360.0
    val = norm / vmax
    rgb = _hsv_to_rgb(hue, np.ones_like(val), val)
    out = np.floor(rgb * 255.0 + 0.5).astype(np.uint8)
    return out.reshape(n + 1, n + 1, 3)


def rgb_to_pixels(rgb: np.ndarray) -> np.ndarray:
    """Reorder a nodal RGB array into top-to-bottom pixel rows."""
    return np.ascontiguousarray(rgb[:, ::-1].transpose(1, 0, 2))


def modulation_viz(mod: Image, bound: float | None = None):
    """Symmetric gray coding of a signed field around mid-gray.

    Returns ``(image, bound)`` where zero maps to 0.5 and the extremes
    to 0 and 1; the bound used is returned for the sidecar record.
    """
    if bound is None:
        bound = float(np.max(np.abs(mod.values)))
    if bound < _ZERO_NORM:
        return Image.constant(mod.level, 0.5), 0.0
    vals = 0.5 + 0.5 * np.clip(mod.values / bound, -1.0, 1.0)
    return Image(mod.level, vals), bound
