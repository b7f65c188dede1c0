"""Interpolation of node values on a uniform tensor grid.

Two rules are provided: multilinear, and a tensor-product monotone cubic (PCHIP,
the Fritsch-Carlson slopes used by ``scipy.interpolate.PchipInterpolator``).
Callers are responsible for keeping queries inside the box.
"""

from __future__ import annotations

import numpy as np

METHODS = ("multilinear", "pchip")


def _locate(lo, hi, shape, pts):
    """Cell index and in-cell fraction per axis, for points (Q, n)."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    shape = np.asarray(shape)
    h = (hi - lo) / (shape - 1)
    s = (pts - lo) / h
    j = np.clip(np.floor(s).astype(np.int64), 0, shape - 2)
    return j, s - j, h


def _gather(values, idx, lead=None):
    """values[idx[..., 0], idx[..., 1], ...] for an index array (..., n).

    With ``lead`` (Q,), ``values`` carries an extra leading axis selected per query.
    """
    cols = tuple(np.moveaxis(idx, -1, 0))
    if lead is None:
        return values[cols]
    lead = np.asarray(lead).reshape((-1,) + (1,) * (idx.ndim - 2))
    return values[(lead,) + cols]


def multilinear(values, lo, hi, pts, lead=None):
    values = np.asarray(values, dtype=float)
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    shape = values.shape if lead is None else values.shape[1:]
    n = len(shape)
    j, w, _ = _locate(lo, hi, shape, pts)
    out = np.zeros(len(pts))
    for corner in np.ndindex(*(2,) * n):
        c = np.array(corner)
        weight = np.prod(np.where(c == 1, w, 1.0 - w), axis=1)
        out += weight * _gather(values, j + c, lead)
    return out


def _pchip_slope_interior(a, b):
    prod = a * b
    with np.errstate(divide="ignore", invalid="ignore"):
        d = 2.0 * prod / (a + b)
    return np.where(prod > 0, d, 0.0)


def _pchip_slope_end(d0, d1):
    """Endpoint slope from the two nearest secants (d0 adjacent to the end)."""
    d = (3.0 * d0 - d1) / 2.0
    d = np.where(np.sign(d) != np.sign(d0), 0.0, d)
    clip = (np.sign(d0) != np.sign(d1)) & (np.abs(d) > 3.0 * np.abs(d0))
    return np.where(clip, 3.0 * d0, d)


def _pchip_reduce(w, frac, h, at_left, at_right, two_nodes):
    """Collapse the last axis (stencil y[j-1], y[j], y[j+1], y[j+2]) by 1-D PCHIP."""
    y0, y1, y2, y3 = w[..., 0], w[..., 1], w[..., 2], w[..., 3]
    sa, sb, sc = (y1 - y0) / h, (y2 - y1) / h, (y3 - y2) / h
    # slope at node j
    dl = np.where(at_left, _pchip_slope_end(sb, sc), _pchip_slope_interior(sa, sb))
    # slope at node j+1
    dr = np.where(at_right, _pchip_slope_end(sb, sa), _pchip_slope_interior(sb, sc))
    t = frac
    t2, t3 = t * t, t * t * t
    cubic = ((2 * t3 - 3 * t2 + 1) * y1 + (t3 - 2 * t2 + t) * h * dl
             + (-2 * t3 + 3 * t2) * y2 + (t3 - t2) * h * dr)
    return np.where(two_nodes, (1 - t) * y1 + t * y2, cubic)


def pchip(values, lo, hi, pts, lead=None):
    values = np.asarray(values, dtype=float)
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    shape = np.asarray(values.shape if lead is None else values.shape[1:])
    n = len(shape)
    j, w, h = _locate(lo, hi, shape, pts)
    offsets = np.array(list(np.ndindex(*(4,) * n))) - 1  # (4^n, n)
    idx = np.clip(j[:, None, :] + offsets[None], 0, shape - 1)
    stencil = _gather(values, idx, lead).reshape((len(pts),) + (4,) * n)
    for axis in range(n - 1, -1, -1):
        bshape = (len(pts),) + (1,) * axis
        stencil = _pchip_reduce(
            stencil,
            w[:, axis].reshape(bshape),
            h[axis],
            (j[:, axis] == 0).reshape(bshape),
            (j[:, axis] == shape[axis] - 2).reshape(bshape),
            shape[axis] == 2,
        )
    return stencil


def interpolate(values, lo, hi, pts, method="multilinear", lead=None):
    if method == "multilinear":
        return multilinear(values, lo, hi, pts, lead)
    if method == "pchip":
        return pchip(values, lo, hi, pts, lead)
    raise ValueError(f"unknown interpolation {method!r}; expected one of {METHODS}")
