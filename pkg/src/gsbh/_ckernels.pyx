# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_pykernels``; results are bit-identical."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt
from libc.stdint cimport uint64_t, int64_t, int32_t, int8_t, uint8_t

cnp.import_array()

BACKEND = "cython"

cdef int DX[4]
cdef int DY[4]
DX[:] = [0, 1, 0, -1]
DY[:] = [-1, 0, 1, 0]
cdef int MOVE_TURN[4]
MOVE_TURN[:] = [0, 2, 3, 1]


cdef inline uint64_t _mix(uint64_t* state) nogil:
    state[0] += <uint64_t>0x9E3779B97F4A7C15ULL
    cdef uint64_t z = state[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBULL
    return z ^ (z >> 31)


def splitmix64(uint64_t state):
    cdef uint64_t s = state
    cdef uint64_t z = _mix(&s)
    return s, z


def im2col(double[:, :, :, ::1] x, int k, int stride, int pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1, wo = (w + 2 * pad - k) // stride + 1
    cdef Py_ssize_t ncol = c * k * k
    out_arr = np.empty((n * ho * wo, ncol))
    cdef double[:, ::1] out = out_arr
    cdef double* o
    cdef const double* src
    cdef Py_ssize_t b, i, j, ch, ki, kj, yy, xx
    with nogil:
        for b in range(n):
            for i in range(ho):
                for j in range(wo):
                    o = &out[(b * ho + i) * wo + j, 0]
                    for ch in range(c):
                        for ki in range(k):
                            yy = i * stride + ki - pad
                            if yy < 0 or yy >= h:
                                for kj in range(k):
                                    o[kj] = 0.0
                            else:
                                src = &x[b, ch, yy, 0]
                                for kj in range(k):
                                    xx = j * stride + kj - pad
                                    o[kj] = src[xx] if 0 <= xx < w else 0.0
                            o += k
    return out_arr


def col2im(double[:, ::1] cols, int n, int c, int h, int w, int k, int stride, int pad):
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1, wo = (w + 2 * pad - k) // stride + 1
    out_arr = np.zeros((n, c, h, w))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, i, j, ch, ki, kj, yy, xx
    cdef Py_ssize_t kk = k * k
    with nogil:
        for b in range(n):
            for ch in range(c):
                for ki in range(k):
                    for kj in range(k):
                        for i in range(ho):
                            yy = i * stride + ki - pad
                            if yy < 0 or yy >= h:
                                continue
                            for j in range(wo):
                                xx = j * stride + kj - pad
                                if 0 <= xx < w:
                                    out[b, ch, yy, xx] += cols[(b * ho + i) * wo + j, ch * kk + ki * k + kj]
    return out_arr


def adamw_update(double[::1] p, double[::1] g, double[::1] m, double[::1] v,
                 double lr, double wd, double b1, double b2, double c1, double c2, double eps):
    cdef Py_ssize_t i
    cdef double decay = 1.0 - lr * wd
    cdef double mi, vi, gi
    with nogil:
        for i in range(p.shape[0]):
            gi = g[i]
            mi = m[i] * b1
            mi = mi + (1.0 - b1) * gi
            vi = v[i] * b2
            vi = vi + (1.0 - b2) * (gi * gi)
            m[i] = mi
            v[i] = vi
            if wd != 0.0:
                p[i] = p[i] * decay
            p[i] = p[i] - lr * (mi / c1) / (sqrt(vi / c2) + eps)


cdef inline bint _free(int8_t[:, ::1] terrain, int32_t[:, ::1] ent_grid, int x, int y) nogil:
    if x < 0 or y < 0 or y >= terrain.shape[0] or x >= terrain.shape[1]:
        return False
    return terrain[y, x] == 1 and ent_grid[y, x] < 0


def world_step(int8_t[:, ::1] terrain, int32_t[:, ::1] ent_grid, int32_t[::1] ent_kind,
               int32_t[:, ::1] ent_pos, uint8_t[::1] ent_alive, uint8_t[::1] mob_table,
               int64_t[::1] agent, int action, uint64_t rng):
    cdef int h = terrain.shape[0], w = terrain.shape[1]
    cdef int x = agent[0], y = agent[1], facing = agent[2]
    cdef int achieved = -1
    cdef int d, nx, ny, ox, oy, e
    cdef Py_ssize_t i
    cdef uint64_t z
    if action <= 3:
        d = (facing + MOVE_TURN[action]) % 4
        nx = x + DX[d]
        ny = y + DY[d]
        if _free(terrain, ent_grid, nx, ny):
            agent[0] = nx
            agent[1] = ny
            x = nx
            y = ny
    elif action == 4:
        agent[2] = (facing + 3) % 4
    elif action == 5:
        agent[2] = (facing + 1) % 4
    elif action == 6:
        nx = x + DX[facing]
        ny = y + DY[facing]
        if 0 <= nx < w and 0 <= ny < h:
            e = ent_grid[ny, nx]
            if e >= 0:
                ent_alive[e] = 0
                ent_grid[ny, nx] = -1
                achieved = e
    for i in range(ent_kind.shape[0]):
        if not ent_alive[i] or not mob_table[ent_kind[i]]:
            continue
        z = _mix(&rng)
        if not (z >> 63):
            continue
        z = _mix(&rng)
        d = <int>(z % 5)
        if d == 4:
            continue
        ox = ent_pos[i, 0]
        oy = ent_pos[i, 1]
        nx = ox + DX[d]
        ny = oy + DY[d]
        if (nx != x or ny != y) and _free(terrain, ent_grid, nx, ny):
            ent_grid[oy, ox] = -1
            ent_grid[ny, nx] = <int32_t>i
            ent_pos[i, 0] = nx
            ent_pos[i, 1] = ny
    return achieved, rng


def render_view(int8_t[:, ::1] terrain, int32_t[:, ::1] ent_grid, int32_t[::1] ent_kind,
                int ax, int ay, int facing, int r, int n_terrain, uint8_t[:, :, ::1] out):
    cdef int h = terrain.shape[0], w = terrain.shape[1]
    cdef int size = 2 * r + 1
    cdef int rf = (facing + 1) % 4
    cdef int i, j, fwd, right, wx, wy, e
    out[:, :, :] = 0
    with nogil:
        for i in range(size):
            fwd = r - i
            for j in range(size):
                right = j - r
                wx = ax + fwd * DX[facing] + right * DX[rf]
                wy = ay + fwd * DY[facing] + right * DY[rf]
                if wx < 0 or wy < 0 or wx >= w or wy >= h:
                    out[0, i, j] = 1
                    continue
                out[terrain[wy, wx], i, j] = 1
                e = ent_grid[wy, wx]
                if e >= 0:
                    out[n_terrain + ent_kind[e], i, j] = 1
