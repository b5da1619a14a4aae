"""Compiled per-sub-pixel kernels. Every kernel is a pure function of its
inputs so chunks can run on any thread and be concatenated in order."""

import math

import numba as nb
import numpy as np

_OPTS = dict(nogil=True, cache=True)


@nb.njit(**_OPTS)
def _push(buf, n, value):
    if n == buf.shape[0]:
        grown = np.empty(buf.shape[0] * 2, dtype=buf.dtype)
        grown[:n] = buf[:n]
        buf = grown
    buf[n] = value
    return buf


@nb.njit(**_OPTS)
def _gate(t, s, tex_nrm, tex_z, ray_dirs, depths, back_face, depth_gate, gate_dist):
    if back_face:
        facing = (tex_nrm[t, 0] * ray_dirs[s, 0] + tex_nrm[t, 1] * ray_dirs[s, 1]
                  + tex_nrm[t, 2] * ray_dirs[s, 2])
        if facing > 0:
            return False
    if depth_gate and abs(tex_z[t] - depths[s]) > gate_dist:
        return False
    return True


@nb.njit(**_OPTS)
def _sort_small(buf, n):
    for i in range(1, n):
        v = buf[i]
        j = i - 1
        while j >= 0 and buf[j] > v:
            buf[j + 1] = buf[j]
            j -= 1
        buf[j + 1] = v


@nb.njit(**_OPTS)
def select_chunk(points, radii, valid, ray_dirs, depths,
                 origin, cell_size, dims, cell_table, aabb, cells,
                 b_lo, b_size, b_dims, b_table, b_start, b_tex,
                 tex_pos, tex_nrm, tex_z, tex_ok, per_patch,
                 back_face, depth_gate, gate_dist):
    """Texel selection for a run of sub-pixels.

    Texels are found through a fine bucket grid (``b_*``, unflagged texels
    only). The closest texel among the patches of the 3x3x3 cell
    neighborhood comes from the same walk whenever it lies closer than the
    walk radius R (any closer texel was visited too); otherwise the
    neighborhood patches are scanned.

    Returns (counts (M,), indices) where indices is the concatenation of the
    sorted selections of every sub-pixel in order.
    """
    m = points.shape[0]
    counts = np.zeros(m, dtype=np.int64)
    out = np.empty(max(16, m * 4), dtype=np.int64)
    n_out = 0
    ball = np.empty(64, dtype=np.int64)
    X, Y, Z = dims[0], dims[1], dims[2]
    BX, BY, BZ = b_dims[0], b_dims[1], b_dims[2]
    for s in range(m):
        if not valid[s]:
            continue
        px, py, pz = points[s, 0], points[s, 1], points[s, 2]
        r = radii[s]
        cx = int(math.floor((px - origin[0]) / cell_size))
        cy = int(math.floor((py - origin[1]) / cell_size))
        cz = int(math.floor((pz - origin[2]) / cell_size))

        # one bucket walk out to R >= r gathers the max-norm ball and the
        # closest neighborhood texel; the range is padded by a sliver so
        # rounding at bucket faces cannot drop a texel
        R = max(r, b_size)
        pad = R + 1e-7 * b_size
        x0 = max(int(math.floor((px - pad - b_lo[0]) / b_size)), 0)
        y0 = max(int(math.floor((py - pad - b_lo[1]) / b_size)), 0)
        z0 = max(int(math.floor((pz - pad - b_lo[2]) / b_size)), 0)
        x1 = min(int(math.floor((px + pad - b_lo[0]) / b_size)), BX - 1)
        y1 = min(int(math.floor((py + pad - b_lo[1]) / b_size)), BY - 1)
        z1 = min(int(math.floor((pz + pad - b_lo[2]) / b_size)), BZ - 1)
        n_ball = 0
        best = -1
        best_d2 = np.inf
        for z in range(z0, z1 + 1):
            for y in range(y0, y1 + 1):
                for x in range(x0, x1 + 1):
                    bi = b_table[x + BX * (y + BY * z)]
                    if bi < 0:
                        continue
                    for e in range(b_start[bi], b_start[bi + 1]):
                        t = b_tex[e]
                        qx = tex_pos[t, 0] - px
                        qy = tex_pos[t, 1] - py
                        qz = tex_pos[t, 2] - pz
                        if abs(qx) <= r and abs(qy) <= r and abs(qz) <= r:
                            ball = _push(ball, n_ball, t)
                            n_ball += 1
                        row = t // per_patch
                        if (abs(cells[row, 0] - cx) <= 1 and abs(cells[row, 1] - cy) <= 1
                                and abs(cells[row, 2] - cz) <= 1):
                            d2 = qx * qx + qy * qy + qz * qz
                            if d2 < best_d2 or (d2 == best_d2 and t < best):
                                best_d2 = d2
                                best = t
        _sort_small(ball, n_ball)

        if not best_d2 < R * R:
            # closest texel over the 3x3x3 neighborhood, seeded by the ball so
            # most patches fail the AABB bound
            for dz in range(-1, 2):
                z = cz + dz
                if z < 0 or z >= Z:
                    continue
                for dy in range(-1, 2):
                    y = cy + dy
                    if y < 0 or y >= Y:
                        continue
                    for dx in range(-1, 2):
                        x = cx + dx
                        if x < 0 or x >= X:
                            continue
                        row = cell_table[x + X * (y + Y * z)]
                        if row < 0:
                            continue
                        ex = max(aabb[row, 0] - px, 0.0, px - aabb[row, 3])
                        ey = max(aabb[row, 1] - py, 0.0, py - aabb[row, 4])
                        ez = max(aabb[row, 2] - pz, 0.0, pz - aabb[row, 5])
                        if ex * ex + ey * ey + ez * ez > best_d2:
                            continue
                        base = row * per_patch
                        for t in range(base, base + per_patch):
                            if not tex_ok[t]:
                                continue
                            qx = tex_pos[t, 0] - px
                            qy = tex_pos[t, 1] - py
                            qz = tex_pos[t, 2] - pz
                            d2 = qx * qx + qy * qy + qz * qz
                            if d2 < best_d2 or (d2 == best_d2 and t < best):
                                best_d2 = d2
                                best = t

        if best < 0:
            continue

        # merge closest into the ascending ball list, then apply gates
        start = n_out
        pending = True
        for i in range(n_ball):
            t = ball[i]
            if pending and best <= t:
                pending = False
                if best < t and _gate(best, s, tex_nrm, tex_z, ray_dirs, depths,
                                      back_face, depth_gate, gate_dist):
                    out = _push(out, n_out, best)
                    n_out += 1
            if _gate(t, s, tex_nrm, tex_z, ray_dirs, depths, back_face, depth_gate, gate_dist):
                out = _push(out, n_out, t)
                n_out += 1
        if pending and _gate(best, s, tex_nrm, tex_z, ray_dirs, depths,
                             back_face, depth_gate, gate_dist):
            out = _push(out, n_out, best)
            n_out += 1
        counts[s] = n_out - start
    return counts, out[:n_out].copy()


@nb.njit(**_OPTS)
def average_rows(offsets, indices, values):
    """Uniform average of ``values[indices]`` per CSR row, summed in
    ascending index order in float64; empty rows stay zero."""
    m = offsets.shape[0] - 1
    c = values.shape[1]
    out = np.zeros((m, c), dtype=np.float64)
    for s in range(m):
        a, b = offsets[s], offsets[s + 1]
        if b == a:
            continue
        for ch in range(c):
            acc = 0.0
            for e in range(a, b):
                acc += np.float64(values[indices[e], ch])
            out[s, ch] = acc / (b - a)
    return out
