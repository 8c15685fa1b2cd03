"""Slow, direct re-implementations used as reference values in the tests.

None of these import the package's numerical code; they work from the
definitions with plain loops and the math module.
"""

import math

import numpy as np


def bspline_weights_1d(t):
    return [(1 - t) ** 3 / 6, (3 * t**3 - 6 * t**2 + 4) / 6, (-3 * t**3 + 3 * t**2 + 3 * t + 1) / 6, t**3 / 6]


def control_points_bruteforce(points_n, N):
    """dict flat index -> accumulated basis mass, one point and vertex at a time."""
    acc = {}
    for p in points_n:
        cells, ws = [], []
        for a in range(3):
            g = min(max(float(p[a]), 0.0), 1.0) * (N - 1)
            c = min(int(math.floor(g)), N - 1)
            cells.append(c)
            ws.append(bspline_weights_1d(g - c))
        for i in range(4):
            for j in range(4):
                for k in range(4):
                    ix = min(max(cells[0] - 1 + i, 0), N - 1)
                    iy = min(max(cells[1] - 1 + j, 0), N - 1)
                    iz = min(max(cells[2] - 1 + k, 0), N - 1)
                    key = (ix * N + iy) * N + iz
                    acc[key] = acc.get(key, 0.0) + ws[0][i] * ws[1][j] * ws[2][k]
    return acc


def spherical_histogram_bruteforce(offsets, h_r, h_t, h_p, r_min_fraction):
    """Histogram from the bin definitions, one offset at a time."""
    radii = [math.sqrt(x * x + y * y + z * z) for x, y, z in offsets]
    r_max = max(radii)
    r_min = r_min_fraction * r_max
    hist = [0] * (h_r * h_t * h_p)
    for (x, y, z), r in zip(offsets, radii):
        if r < r_min:
            rb = 0
        else:
            rb = min(max(int(math.floor(h_r * math.log(r / r_min) / math.log(r_max / r_min))), 0), h_r - 1)
        c = z / r if r > 0 else 0.0
        tb = min(max(int(math.floor(h_t * (c + 1) / 2)), 0), h_t - 1)
        pb = int(math.floor(h_p * (math.atan2(y, x) + math.pi) / (2 * math.pi))) % h_p
        hist[(rb * h_t + tb) * h_p + pb] += 1
    return hist


def ray_triangle(origin, direction, a, b, c, eps=1e-12):
    """Moller-Trumbore; returns the ray parameter t or None."""
    e1 = np.subtract(b, a)
    e2 = np.subtract(c, a)
    pvec = np.cross(direction, e2)
    det = float(np.dot(e1, pvec))
    if abs(det) < eps:
        return None
    inv = 1.0 / det
    tvec = np.subtract(origin, a)
    u = float(np.dot(tvec, pvec)) * inv
    if u < 0 or u > 1:
        return None
    qvec = np.cross(tvec, e1)
    v = float(np.dot(direction, qvec)) * inv
    if v < 0 or u + v > 1:
        return None
    return float(np.dot(e2, qvec)) * inv


def raycast_depth(tri, u, v, fx, fy, cx, cy):
    """Camera-frame depth of the triangle surface seen through pixel (u, v), or None."""
    d = np.array([(u - cx) / fx, (v - cy) / fy, 1.0])
    t = ray_triangle(np.zeros(3), d, *tri)
    return None if t is None or t <= 0 else t * d[2]


def rot_z(deg):
    a = math.radians(deg)
    return np.array([[math.cos(a), -math.sin(a), 0], [math.sin(a), math.cos(a), 0], [0, 0, 1.0]])


def add_bruteforce(verts, R1, t1, R2, t2):
    tot = 0.0
    for x in verts:
        p = R1 @ x + t1
        q = R2 @ x + t2
        tot += math.dist(p, q)
    return tot / len(verts)


def diameter_bruteforce(verts):
    best = 0.0
    for i in range(len(verts)):
        for j in range(i + 1, len(verts)):
            best = max(best, math.dist(verts[i], verts[j]))
    return best
