"""Central finite-difference stencils on uniform chart grids.

Grid axes are always the trailing axes of an array, so component axes of
tensor fields can lead.  Periodic axes wrap; bounded axes fall back to
lower-order central stencils near the edge and to one-sided second-order
stencils on the edge node itself.
"""

import numpy as np

FIRST = {
    2: (1.0 / 2.0,),
    4: (2.0 / 3.0, -1.0 / 12.0),
    6: (3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0),
}
# weights for (f[i+k] - f[i]) + (f[i-k] - f[i]), k = 1..p
SECOND = {
    2: (1.0,),
    4: (4.0 / 3.0, -1.0 / 12.0),
    6: (3.0 / 2.0, -3.0 / 20.0, 1.0 / 90.0),
}
ORDERS = tuple(sorted(FIRST))


def check_order(order):
    if order not in FIRST:
        raise ValueError(f"finite-difference order must be one of {ORDERS}, got {order}")


def _take(f, axis, start, stop):
    index = [slice(None)] * f.ndim
    index[axis] = slice(start, stop)
    return f[tuple(index)]


def _put(out, axis, start, stop, value):
    index = [slice(None)] * out.ndim
    index[axis] = slice(start, stop)
    out[tuple(index)] = value


def _central_first(f, axis, reach, lo, hi):
    """First-derivative stencil of half-width ``reach`` on nodes lo..hi-1 (times h)."""
    acc = 0.0
    for k, w in enumerate(FIRST[2 * reach], start=1):
        acc = acc + w * (_take(f, axis, lo + k, hi + k) - _take(f, axis, lo - k, hi - k))
    return acc


def _central_second(f, axis, reach, lo, hi):
    centre = _take(f, axis, lo, hi)
    acc = 0.0
    for k, w in enumerate(SECOND[2 * reach], start=1):
        acc = acc + w * ((_take(f, axis, lo + k, hi + k) - centre)
                         + (_take(f, axis, lo - k, hi - k) - centre))
    return acc


def derivative(f, axis, h, order=4, periodic=False):
    """First derivative of ``f`` along ``axis`` with spacing ``h``."""
    check_order(order)
    f = np.asarray(f, dtype=float)
    axis = axis % f.ndim
    p = order // 2
    if periodic:
        acc = 0.0
        for k, w in enumerate(FIRST[order], start=1):
            acc = acc + w * (np.roll(f, -k, axis) - np.roll(f, k, axis))
        return acc / h
    n = f.shape[axis]
    if n < 3:
        raise ValueError("bounded axis needs at least 3 nodes")
    p = min(p, (n - 1) // 2)
    out = np.empty_like(f)
    _put(out, axis, p, n - p, _central_first(f, axis, p, p, n - p))
    for i in range(1, p):
        _put(out, axis, i, i + 1, _central_first(f, axis, i, i, i + 1))
        j = n - 1 - i
        _put(out, axis, j, j + 1, _central_first(f, axis, i, j, j + 1))
    f0, f1, f2 = (_take(f, axis, k, k + 1) for k in range(3))
    _put(out, axis, 0, 1, -1.5 * f0 + 2.0 * f1 - 0.5 * f2)
    g0, g1, g2 = (_take(f, axis, n - 1 - k, n - k) for k in range(3))
    _put(out, axis, n - 1, n, 1.5 * g0 - 2.0 * g1 + 0.5 * g2)
    return out / h


def second_derivative(f, axis, h, order=4, periodic=False):
    """Pure second derivative along ``axis``; exactly zero on constants."""
    check_order(order)
    f = np.asarray(f, dtype=float)
    axis = axis % f.ndim
    p = order // 2
    if periodic:
        acc = 0.0
        for k, w in enumerate(SECOND[order], start=1):
            acc = acc + w * ((np.roll(f, -k, axis) - f) + (np.roll(f, k, axis) - f))
        return acc / (h * h)
    n = f.shape[axis]
    if n < 4:
        raise ValueError("bounded axis needs at least 4 nodes")
    p = min(p, (n - 1) // 2)
    out = np.empty_like(f)
    _put(out, axis, p, n - p, _central_second(f, axis, p, p, n - p))
    for i in range(1, p):
        _put(out, axis, i, i + 1, _central_second(f, axis, i, i, i + 1))
        j = n - 1 - i
        _put(out, axis, j, j + 1, _central_second(f, axis, i, j, j + 1))
    f0, f1, f2, f3 = (_take(f, axis, k, k + 1) for k in range(4))
    _put(out, axis, 0, 1, 2.0 * (f0 - f1) + 3.0 * (f2 - f1) + (f2 - f3))
    g0, g1, g2, g3 = (_take(f, axis, n - 1 - k, n - k) for k in range(4))
    _put(out, axis, n - 1, n, 2.0 * (g0 - g1) + 3.0 * (g2 - g1) + (g2 - g3))
    return out / (h * h)


def gradient(f, spacing, order=4, periodic=False, ndim=None):
    """Stack of first derivatives over the trailing ``ndim`` grid axes.

    The new derivative axis is placed last among the component axes, i.e.
    directly in front of the grid axes.
    """
    f = np.asarray(f, dtype=float)
    ndim = len(spacing) if ndim is None else ndim
    parts = [derivative(f, f.ndim - ndim + d, spacing[d], order, periodic)
             for d in range(ndim)]
    return np.stack(parts, axis=f.ndim - ndim)
