"""Hot numeric loops: lidar ray casting, split-point search, wall clearance.

Each kernel has a loop-style body compiled by numba and a vectorised numpy
twin with identical results. Public entry points dispatch on
``_accel.USE_NUMBA``.
"""
import numpy as np

from . import _accel

_PAR_EPS = 1e-12


# -- ray casting ------------------------------------------------------------

def _raycast_loop(ox, oy, angles, walls, max_range):
    n = angles.shape[0]
    m = walls.shape[0]
    out = np.empty(n)
    for i in range(n):
        dx = np.cos(angles[i])
        dy = np.sin(angles[i])
        best = np.inf
        for k in range(m):
            ax = walls[k, 0]
            ay = walls[k, 1]
            ex = walls[k, 2] - ax
            ey = walls[k, 3] - ay
            den = dx * ey - dy * ex
            if abs(den) < _PAR_EPS:
                continue
            wx = ax - ox
            wy = ay - oy
            t = (wx * ey - wy * ex) / den
            s = (wx * dy - wy * dx) / den
            if t > 0.0 and 0.0 <= s <= 1.0 and t < best:
                best = t
        out[i] = best if best <= max_range else np.inf
    return out


def _raycast_numpy(ox, oy, angles, walls, max_range):
    if walls.shape[0] == 0:
        return np.full(angles.shape[0], np.inf)
    dx = np.cos(angles)[:, None]
    dy = np.sin(angles)[:, None]
    ax, ay = walls[:, 0][None, :], walls[:, 1][None, :]
    ex, ey = (walls[:, 2] - walls[:, 0])[None, :], (walls[:, 3] - walls[:, 1])[None, :]
    den = dx * ey - dy * ex
    wx, wy = ax - ox, ay - oy
    ok = np.abs(den) >= _PAR_EPS
    safe = np.where(ok, den, 1.0)
    t = (wx * ey - wy * ex) / safe
    s = (wx * dy - wy * dx) / safe
    hit = ok & (t > 0.0) & (s >= 0.0) & (s <= 1.0)
    best = np.where(hit, t, np.inf).min(axis=1)
    best[best > max_range] = np.inf
    return best


_raycast_jit = _accel.njit(_raycast_loop)


def raycast(origin, angles, walls, max_range, backend=None):
    """Range to the nearest wall along each global bearing; inf past ``max_range``.

    ``walls`` is an (M, 4) array of segments ``x1, y1, x2, y2``.
    """
    angles = np.ascontiguousarray(angles, dtype=np.float64)
    walls = np.ascontiguousarray(walls, dtype=np.float64).reshape(-1, 4)
    ox, oy = float(origin[0]), float(origin[1])
    if _use_jit(backend):
        return _raycast_jit(ox, oy, angles, walls, float(max_range))
    return _raycast_numpy(ox, oy, angles, walls, float(max_range))


# -- split step of split-and-merge --------------------------------------------

def _split_loop(pts, eps, n_min):
    n = pts.shape[0]
    out = np.empty((n, 2), dtype=np.int64)
    count = 0
    stack = np.empty((n + 1, 2), dtype=np.int64)
    top = 0
    if n > 0:
        stack[0, 0] = 0
        stack[0, 1] = n - 1
        top = 1
    while top > 0:
        top -= 1
        lo = stack[top, 0]
        hi = stack[top, 1]
        if hi - lo + 1 < n_min:
            continue
        ax = pts[lo, 0]
        ay = pts[lo, 1]
        ex = pts[hi, 0] - ax
        ey = pts[hi, 1] - ay
        norm = np.sqrt(ex * ex + ey * ey)
        d = -1.0
        arg = lo
        for i in range(lo + 1, hi):
            wx = pts[i, 0] - ax
            wy = pts[i, 1] - ay
            if norm > 0.0:
                di = abs(ex * wy - ey * wx) / norm
            else:
                di = np.sqrt(wx * wx + wy * wy)
            if di > d:
                d = di
                arg = i
        if d > eps and lo < arg < hi:
            # push right first so left pieces come out first
            stack[top, 0] = arg
            stack[top, 1] = hi
            stack[top + 1, 0] = lo
            stack[top + 1, 1] = arg
            top += 2
        else:
            out[count, 0] = lo
            out[count, 1] = hi
            count += 1
    return out[:count]


def _split_numpy(pts, eps, n_min):
    out = []
    stack = [(0, len(pts) - 1)] if len(pts) else []
    while stack:
        lo, hi = stack.pop()
        if hi - lo + 1 < n_min:
            continue
        a = pts[lo]
        e = pts[hi] - a
        w = pts[lo + 1:hi] - a
        norm = np.sqrt(e[0] * e[0] + e[1] * e[1])
        if len(w) == 0:
            out.append((lo, hi))
            continue
        if norm > 0.0:
            d = np.abs(e[0] * w[:, 1] - e[1] * w[:, 0]) / norm
        else:
            d = np.sqrt(w[:, 0] * w[:, 0] + w[:, 1] * w[:, 1])
        k = int(np.argmax(d))
        arg = lo + 1 + k
        if d[k] > eps:
            stack.append((arg, hi))
            stack.append((lo, arg))
        else:
            out.append((lo, hi))
    return np.array(out, dtype=np.int64).reshape(-1, 2)


_split_jit = _accel.njit(_split_loop)


def split_polyline(pts, eps, n_min, backend=None):
    """Recursive split of an ordered point run into (lo, hi) index pairs.

    A run is split at its farthest point from the end-to-end chord while
    that distance exceeds ``eps``. Pieces shorter than ``n_min`` points
    are dropped. Neighbouring pieces share their split point.
    """
    pts = np.ascontiguousarray(pts, dtype=np.float64).reshape(-1, 2)
    if _use_jit(backend):
        return _split_jit(pts, float(eps), int(n_min))
    return _split_numpy(pts, float(eps), int(n_min))


# -- clearance ----------------------------------------------------------------

def _clearance_loop(px, py, walls):
    best = np.inf
    for k in range(walls.shape[0]):
        ax = walls[k, 0]
        ay = walls[k, 1]
        ex = walls[k, 2] - ax
        ey = walls[k, 3] - ay
        ll = ex * ex + ey * ey
        s = 0.0
        if ll > 0.0:
            s = ((px - ax) * ex + (py - ay) * ey) / ll
            s = min(1.0, max(0.0, s))
        cx = ax + s * ex - px
        cy = ay + s * ey - py
        d = np.sqrt(cx * cx + cy * cy)
        if d < best:
            best = d
    return best


def _clearance_numpy(px, py, walls):
    if walls.shape[0] == 0:
        return np.inf
    a = walls[:, :2]
    e = walls[:, 2:] - a
    ll = (e * e).sum(axis=1)
    safe = np.where(ll > 0.0, ll, 1.0)
    s = np.where(ll > 0.0, ((px - a[:, 0]) * e[:, 0] + (py - a[:, 1]) * e[:, 1]) / safe, 0.0)
    s = np.clip(s, 0.0, 1.0)
    c = a + s[:, None] * e - np.array([px, py])
    return float(np.sqrt((c * c).sum(axis=1)).min())


_clearance_jit = _accel.njit(_clearance_loop)


def clearance(point, walls, backend=None):
    """Distance from ``point`` to the nearest wall segment."""
    walls = np.ascontiguousarray(walls, dtype=np.float64).reshape(-1, 4)
    if _use_jit(backend):
        return float(_clearance_jit(float(point[0]), float(point[1]), walls))
    return _clearance_numpy(float(point[0]), float(point[1]), walls)


def _use_jit(backend):
    if backend is None:
        return _accel.USE_NUMBA
    if backend == "numba":
        if not _accel.HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is unavailable")
        return True
    if backend == "numpy":
        return False
    raise ValueError(f"unknown backend {backend!r}")
