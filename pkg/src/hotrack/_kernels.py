"""numba kernels for the inner loops (SDF build, SDF energy, capsule distances)."""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _closest_on_triangle(px, py, pz, ax, ay, az, bx, by, bz, cx, cy, cz):
    # Ericson, Real-Time Collision Detection 5.1.5; returns squared distance
    abx, aby, abz = bx - ax, by - ay, bz - az
    acx, acy, acz = cx - ax, cy - ay, cz - az
    apx, apy, apz = px - ax, py - ay, pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        qx, qy, qz = ax, ay, az
    else:
        bpx, bpy, bpz = px - bx, py - by, pz - bz
        d3 = abx * bpx + aby * bpy + abz * bpz
        d4 = acx * bpx + acy * bpy + acz * bpz
        if d3 >= 0.0 and d4 <= d3:
            qx, qy, qz = bx, by, bz
        else:
            vc = d1 * d4 - d3 * d2
            if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
                v = d1 / (d1 - d3)
                qx, qy, qz = ax + v * abx, ay + v * aby, az + v * abz
            else:
                cpx, cpy, cpz = px - cx, py - cy, pz - cz
                d5 = abx * cpx + aby * cpy + abz * cpz
                d6 = acx * cpx + acy * cpy + acz * cpz
                if d6 >= 0.0 and d5 <= d6:
                    qx, qy, qz = cx, cy, cz
                else:
                    vb = d5 * d2 - d1 * d6
                    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
                        w = d2 / (d2 - d6)
                        qx, qy, qz = ax + w * acx, ay + w * acy, az + w * acz
                    else:
                        va = d3 * d6 - d5 * d4
                        if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
                            w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
                            qx = bx + w * (cx - bx)
                            qy = by + w * (cy - by)
                            qz = bz + w * (cz - bz)
                        else:
                            denom = 1.0 / (va + vb + vc)
                            v = vb * denom
                            w = vc * denom
                            qx = ax + abx * v + acx * w
                            qy = ay + aby * v + acy * w
                            qz = az + abz * v + acz * w
    dx, dy, dz = px - qx, py - qy, pz - qz
    return dx * dx + dy * dy + dz * dz


@njit(cache=True)
def point_triangle_dist2(p, a, b, c):
    return _closest_on_triangle(p[0], p[1], p[2], a[0], a[1], a[2], b[0], b[1], b[2], c[0], c[1], c[2])


@njit(cache=True)
def unsigned_distance_grid(origin, spacing, nx, ny, nz, V, F, block):
    """Exact unsigned distance from every cell center to the nearest triangle.

    Cells are processed in cubic blocks; a block keeps only the triangles that
    can be nearest to some cell inside it (bound from the block center).
    """
    out = np.empty((nx, ny, nz), dtype=np.float64)
    nt = F.shape[0]
    dblock = np.empty(nt)
    cand = np.empty(nt, dtype=np.int64)
    half = 0.5 * math.sqrt(3.0) * (block - 1) * spacing
    for bi in range(0, nx, block):
        for bj in range(0, ny, block):
            for bk in range(0, nz, block):
                ei = min(bi + block, nx)
                ej = min(bj + block, ny)
                ek = min(bk + block, nz)
                ccx = origin[0] + 0.5 * (bi + ei - 1) * spacing
                ccy = origin[1] + 0.5 * (bj + ej - 1) * spacing
                ccz = origin[2] + 0.5 * (bk + ek - 1) * spacing
                best = 1e300
                for t in range(nt):
                    a, b, c = F[t, 0], F[t, 1], F[t, 2]
                    d = math.sqrt(_closest_on_triangle(
                        ccx, ccy, ccz, V[a, 0], V[a, 1], V[a, 2], V[b, 0], V[b, 1], V[b, 2],
                        V[c, 0], V[c, 1], V[c, 2]))
                    dblock[t] = d
                    if d < best:
                        best = d
                limit = best + 2.0 * half
                nc = 0
                for t in range(nt):
                    if dblock[t] <= limit:
                        cand[nc] = t
                        nc += 1
                for i in range(bi, ei):
                    px = origin[0] + i * spacing
                    for j in range(bj, ej):
                        py = origin[1] + j * spacing
                        for k in range(bk, ek):
                            pz = origin[2] + k * spacing
                            m = 1e300
                            for q in range(nc):
                                t = cand[q]
                                a, b, c = F[t, 0], F[t, 1], F[t, 2]
                                d2 = _closest_on_triangle(
                                    px, py, pz, V[a, 0], V[a, 1], V[a, 2], V[b, 0], V[b, 1], V[b, 2],
                                    V[c, 0], V[c, 1], V[c, 2])
                                if d2 < m:
                                    m = d2
                            out[i, j, k] = math.sqrt(m)
    return out


@njit(cache=True)
def ray_parity_axis(origin, spacing, dims, V, F, axis, eps_a, eps_b):
    """Inside/outside parity of each cell from rays cast along +``axis``.

    Rays run through the cell-center lines shifted by ``(eps_a, eps_b)`` in the
    two transverse axes so that they avoid passing exactly through edges.
    Returns an int8 grid holding the number of crossings beyond each cell mod 2.
    """
    a1 = (axis + 1) % 3
    a2 = (axis + 2) % 3
    n0, n1, n2 = dims[axis], dims[a1], dims[a2]
    nt = F.shape[0]
    counts = np.zeros(n1 * n2, dtype=np.int64)
    # pass 1: count crossings per line, pass 2: fill
    for pas in range(2):
        if pas == 1:
            starts = np.zeros(n1 * n2 + 1, dtype=np.int64)
            for L in range(n1 * n2):
                starts[L + 1] = starts[L] + counts[L]
            hits = np.empty(starts[-1])
            fill = starts[:-1].copy()
        for t in range(nt):
            p0 = V[F[t, 0]]
            p1 = V[F[t, 1]]
            p2 = V[F[t, 2]]
            lo1 = min(p0[a1], p1[a1], p2[a1])
            hi1 = max(p0[a1], p1[a1], p2[a1])
            lo2 = min(p0[a2], p1[a2], p2[a2])
            hi2 = max(p0[a2], p1[a2], p2[a2])
            j0 = max(0, int(math.ceil((lo1 - origin[a1] - eps_a) / spacing)))
            j1 = min(n1 - 1, int(math.floor((hi1 - origin[a1] - eps_a) / spacing)))
            k0 = max(0, int(math.ceil((lo2 - origin[a2] - eps_b) / spacing)))
            k1 = min(n2 - 1, int(math.floor((hi2 - origin[a2] - eps_b) / spacing)))
            for j in range(j0, j1 + 1):
                y = origin[a1] + j * spacing + eps_a
                for k in range(k0, k1 + 1):
                    z = origin[a2] + k * spacing + eps_b
                    # 2D barycentric of (y, z) in the projected triangle
                    y0, z0 = p0[a1], p0[a2]
                    y1, z1 = p1[a1], p1[a2]
                    y2, z2 = p2[a1], p2[a2]
                    det = (y1 - y0) * (z2 - z0) - (y2 - y0) * (z1 - z0)
                    if det == 0.0:
                        continue
                    l1 = ((y - y0) * (z2 - z0) - (y2 - y0) * (z - z0)) / det
                    l2 = ((y1 - y0) * (z - z0) - (y - y0) * (z1 - z0)) / det
                    l0 = 1.0 - l1 - l2
                    if l0 < 0.0 or l1 < 0.0 or l2 < 0.0:
                        continue
                    L = j * n2 + k
                    if pas == 0:
                        counts[L] += 1
                    else:
                        hits[fill[L]] = l0 * p0[axis] + l1 * p1[axis] + l2 * p2[axis]
                        fill[L] += 1
    parity = np.zeros((n0, n1, n2), dtype=np.int8)
    for j in range(n1):
        for k in range(n2):
            L = j * n2 + k
            h = np.sort(hits[starts[L]:starts[L + 1]])
            nh = h.shape[0]
            q = 0
            for i in range(n0):
                x = origin[axis] + i * spacing
                while q < nh and h[q] <= x:
                    q += 1
                parity[i, j, k] = (nh - q) % 2
    return parity


@njit(cache=True, fastmath=True, error_model="numpy")
def _trilinear(values, ox, oy, oz, inv_h, nx, ny, nz, x, y, z):
    gx = (x - ox) * inv_h
    gy = (y - oy) * inv_h
    gz = (z - oz) * inv_h
    # clamp into the cell-center box, charging the outside distance
    cx = min(max(gx, 0.0), nx - 1.0)
    cy = min(max(gy, 0.0), ny - 1.0)
    cz = min(max(gz, 0.0), nz - 1.0)
    extra = 0.0
    if cx != gx or cy != gy or cz != gz:
        dx, dy, dz = gx - cx, gy - cy, gz - cz
        extra = math.sqrt(dx * dx + dy * dy + dz * dz) / inv_h
    i = min(int(cx), nx - 2)
    j = min(int(cy), ny - 2)
    k = min(int(cz), nz - 2)
    fx, fy, fz = cx - i, cy - j, cz - k
    c00 = values[i, j, k] * (1 - fx) + values[i + 1, j, k] * fx
    c10 = values[i, j + 1, k] * (1 - fx) + values[i + 1, j + 1, k] * fx
    c01 = values[i, j, k + 1] * (1 - fx) + values[i + 1, j, k + 1] * fx
    c11 = values[i, j + 1, k + 1] * (1 - fx) + values[i + 1, j + 1, k + 1] * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    return c0 * (1 - fz) + c1 * fz + extra


@njit(cache=True)
def trilinear_query(values, origin, spacing, points):
    nx, ny, nz = values.shape
    inv_h = 1.0 / spacing
    out = np.empty(points.shape[0])
    for n in range(points.shape[0]):
        out[n] = _trilinear(values, origin[0], origin[1], origin[2], inv_h, nx, ny, nz,
                            points[n, 0], points[n, 1], points[n, 2])
    return out


@njit(cache=True)
def rodrigues_batch(rotvecs):
    m = rotvecs.shape[0]
    out = np.empty((m, 3, 3))
    for n in range(m):
        x, y, z = rotvecs[n, 0], rotvecs[n, 1], rotvecs[n, 2]
        th = math.sqrt(x * x + y * y + z * z)
        if th < 1e-12:
            s, c1 = 1.0, 0.5
        else:
            s = math.sin(th) / th
            c1 = (1.0 - math.cos(th)) / (th * th)
        out[n, 0, 0] = 1.0 - c1 * (y * y + z * z)
        out[n, 0, 1] = -s * z + c1 * x * y
        out[n, 0, 2] = s * y + c1 * x * z
        out[n, 1, 0] = s * z + c1 * x * y
        out[n, 1, 1] = 1.0 - c1 * (x * x + z * z)
        out[n, 1, 2] = -s * x + c1 * y * z
        out[n, 2, 0] = -s * y + c1 * x * z
        out[n, 2, 1] = s * x + c1 * y * z
        out[n, 2, 2] = 1.0 - c1 * (x * x + y * y)
    return out


@njit(cache=True, fastmath=True, error_model="numpy")
def sdf_abs_mean_batch(values, origin, spacing, points, rotations, translations):
    """Mean ``|psi(R^T (x - t))|`` for each candidate pose ``(R, t)``."""
    nx, ny, nz = values.shape
    inv_h = 1.0 / spacing
    m = rotations.shape[0]
    npts = points.shape[0]
    out = np.empty(m)
    for c in range(m):
        R = rotations[c]
        tx, ty, tz = translations[c, 0], translations[c, 1], translations[c, 2]
        acc = 0.0
        for n in range(npts):
            dx = points[n, 0] - tx
            dy = points[n, 1] - ty
            dz = points[n, 2] - tz
            x = R[0, 0] * dx + R[1, 0] * dy + R[2, 0] * dz
            y = R[0, 1] * dx + R[1, 1] * dy + R[2, 1] * dz
            z = R[0, 2] * dx + R[1, 2] * dy + R[2, 2] * dz
            acc += abs(_trilinear(values, origin[0], origin[1], origin[2], inv_h, nx, ny, nz, x, y, z))
        out[c] = acc / npts
    return out


@njit(cache=True)
def segment_distances(points, seg_a, seg_b):
    """Distance from each point to each segment: ``(N, S)``."""
    n = points.shape[0]
    s = seg_a.shape[0]
    out = np.empty((n, s))
    for q in range(s):
        ax, ay, az = seg_a[q, 0], seg_a[q, 1], seg_a[q, 2]
        ux, uy, uz = seg_b[q, 0] - ax, seg_b[q, 1] - ay, seg_b[q, 2] - az
        uu = ux * ux + uy * uy + uz * uz
        for p in range(n):
            wx, wy, wz = points[p, 0] - ax, points[p, 1] - ay, points[p, 2] - az
            t = 0.0
            if uu > 0.0:
                t = (wx * ux + wy * uy + wz * uz) / uu
                t = min(max(t, 0.0), 1.0)
            dx, dy, dz = wx - t * ux, wy - t * uy, wz - t * uz
            out[p, q] = math.sqrt(dx * dx + dy * dy + dz * dz)
    return out


@njit(cache=True)
def rasterize(V, F, ids, fx, fy, cx, cy, width, height, depth, label):
    """Z-buffer rasterization of camera-space triangles into ``depth``/``label``.

    Depth at pixel ``(u, v)`` is the exact ray/plane intersection along the
    ray through the pixel coordinate, so vertices hit exactly on a pixel ray
    return their own ``z``.
    """
    for t in range(F.shape[0]):
        a, b, c = F[t, 0], F[t, 1], F[t, 2]
        za, zb, zc = V[a, 2], V[b, 2], V[c, 2]
        if za <= 1e-6 or zb <= 1e-6 or zc <= 1e-6:
            continue
        ua, va = fx * V[a, 0] / za + cx, fy * V[a, 1] / za + cy
        ub, vb = fx * V[b, 0] / zb + cx, fy * V[b, 1] / zb + cy
        uc, vc = fx * V[c, 0] / zc + cx, fy * V[c, 1] / zc + cy
        u0 = max(0, int(math.ceil(min(ua, ub, uc))))
        u1 = min(width - 1, int(math.floor(max(ua, ub, uc))))
        v0 = max(0, int(math.ceil(min(va, vb, vc))))
        v1 = min(height - 1, int(math.floor(max(va, vb, vc))))
        if u0 > u1 or v0 > v1:
            continue
        det = (ub - ua) * (vc - va) - (uc - ua) * (vb - va)
        if det == 0.0:
            continue
        # plane through the triangle: n . x = d
        e1x, e1y, e1z = V[b, 0] - V[a, 0], V[b, 1] - V[a, 1], V[b, 2] - V[a, 2]
        e2x, e2y, e2z = V[c, 0] - V[a, 0], V[c, 1] - V[a, 1], V[c, 2] - V[a, 2]
        nx_ = e1y * e2z - e1z * e2y
        ny_ = e1z * e2x - e1x * e2z
        nz_ = e1x * e2y - e1y * e2x
        dpl = nx_ * V[a, 0] + ny_ * V[a, 1] + nz_ * V[a, 2]
        for v in range(v0, v1 + 1):
            for u in range(u0, u1 + 1):
                l1 = ((u - ua) * (vc - va) - (uc - ua) * (v - va)) / det
                l2 = ((ub - ua) * (v - va) - (u - ua) * (vb - va)) / det
                l0 = 1.0 - l1 - l2
                if l0 < -1e-12 or l1 < -1e-12 or l2 < -1e-12:
                    continue
                rx = (u - cx) / fx
                ry = (v - cy) / fy
                den = nx_ * rx + ny_ * ry + nz_
                if den == 0.0:
                    continue
                z = dpl / den
                if z <= 0.0:
                    continue
                if depth[v, u] == 0.0 or z < depth[v, u]:
                    depth[v, u] = z
                    label[v, u] = ids[t]


@njit(cache=True)
def capsule_union_signed(points, seg_a, seg_b, radii):
    """Signed distance of each point to a union of capsules (one set)."""
    n = points.shape[0]
    out = np.full(n, 1e300)
    for q in range(seg_a.shape[0]):
        ax, ay, az = seg_a[q, 0], seg_a[q, 1], seg_a[q, 2]
        ux, uy, uz = seg_b[q, 0] - ax, seg_b[q, 1] - ay, seg_b[q, 2] - az
        uu = ux * ux + uy * uy + uz * uz
        for p in range(n):
            wx, wy, wz = points[p, 0] - ax, points[p, 1] - ay, points[p, 2] - az
            t = 0.0
            if uu > 0.0:
                t = min(max((wx * ux + wy * uy + wz * uz) / uu, 0.0), 1.0)
            dx, dy, dz = wx - t * ux, wy - t * uy, wz - t * uz
            d = math.sqrt(dx * dx + dy * dy + dz * dz) - radii[q]
            if d < out[p]:
                out[p] = d
    return out


@njit(cache=True)
def capsule_fit_batch(points, seg_a, seg_b, radii, base_signed):
    """Mean ``|min(base_signed, signed distance to candidate capsules)|``.

    ``seg_a``/``seg_b`` are ``(M, S, 3)``; ``base_signed`` holds each point's
    signed distance to capsules shared by every candidate.
    """
    m, s = seg_a.shape[0], seg_a.shape[1]
    n = points.shape[0]
    out = np.empty(m)
    for c in range(m):
        acc = 0.0
        for p in range(n):
            px, py, pz = points[p, 0], points[p, 1], points[p, 2]
            best = base_signed[p]
            for q in range(s):
                ax, ay, az = seg_a[c, q, 0], seg_a[c, q, 1], seg_a[c, q, 2]
                ux, uy, uz = seg_b[c, q, 0] - ax, seg_b[c, q, 1] - ay, seg_b[c, q, 2] - az
                wx, wy, wz = px - ax, py - ay, pz - az
                uu = ux * ux + uy * uy + uz * uz
                t = 0.0
                if uu > 0.0:
                    t = min(max((wx * ux + wy * uy + wz * uz) / uu, 0.0), 1.0)
                dx, dy, dz = wx - t * ux, wy - t * uy, wz - t * uz
                d = math.sqrt(dx * dx + dy * dy + dz * dz) - radii[q]
                if d < best:
                    best = d
            acc += abs(best)
        out[c] = acc / n
    return out


@njit(cache=True)
def capsule_fit_pruned(points, seg_a, seg_b, radii, mask):
    """Like :func:`capsule_fit_batch` without a base term, visiting only the
    capsules flagged in ``mask`` ``(N, S)`` for each point."""
    m, s = seg_a.shape[0], seg_a.shape[1]
    n = points.shape[0]
    out = np.empty(m)
    for c in range(m):
        acc = 0.0
        for p in range(n):
            px, py, pz = points[p, 0], points[p, 1], points[p, 2]
            best = 1e300
            for q in range(s):
                if not mask[p, q]:
                    continue
                ax, ay, az = seg_a[c, q, 0], seg_a[c, q, 1], seg_a[c, q, 2]
                ux, uy, uz = seg_b[c, q, 0] - ax, seg_b[c, q, 1] - ay, seg_b[c, q, 2] - az
                wx, wy, wz = px - ax, py - ay, pz - az
                uu = ux * ux + uy * uy + uz * uz
                t = 0.0
                if uu > 0.0:
                    t = min(max((wx * ux + wy * uy + wz * uz) / uu, 0.0), 1.0)
                dx, dy, dz = wx - t * ux, wy - t * uy, wz - t * uz
                d = math.sqrt(dx * dx + dy * dy + dz * dz) - radii[q]
                if d < best:
                    best = d
            acc += abs(best)
        out[c] = acc / n
    return out
