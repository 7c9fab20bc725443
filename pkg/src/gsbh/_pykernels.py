"""Pure-Python/numpy implementations of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature
and bit-identical results; ``gsbh.kernels`` picks one at import time.
"""
from __future__ import annotations

import numpy as np

from numpy.lib.stride_tricks import sliding_window_view

MASK64 = (1 << 64) - 1
DX = (0, 1, 0, -1)
DY = (-1, 0, 1, 0)

BACKEND = "python"


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 generator; returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


# -- convolution support ----------------------------------------------------

def im2col(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """Unfold an NCHW array (zero-padded by ``pad``) into rows of ``C*k*k`` patch values."""
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    n, c, hp, wp = xp.shape
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * k * k)


def col2im(cols: np.ndarray, n: int, c: int, h: int, w: int, k: int, stride: int, pad: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patch rows back onto the image."""
    hp, wp = h + 2 * pad, w + 2 * pad
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    d = cols.reshape(n, ho, wo, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros((n, c, hp, wp))
    for ki in range(k):
        for kj in range(k):
            out[:, :, ki:ki + stride * (ho - 1) + 1:stride, kj:kj + stride * (wo - 1) + 1:stride] += d[:, :, ki, kj]
    return np.ascontiguousarray(out[:, :, pad:pad + h, pad:pad + w]) if pad else out


def adamw_update(p, g, m, v, lr, wd, b1, b2, c1, c2, eps):
    """Fused in-place AdamW update of one parameter array."""
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * (g * g)
    if wd:
        p *= 1.0 - lr * wd
    p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# -- gridworld --------------------------------------------------------------

def _free(terrain, ent_grid, x, y):
    h, w = terrain.shape
    return 0 <= x < w and 0 <= y < h and terrain[y, x] == 1 and ent_grid[y, x] < 0


def world_step(terrain, ent_grid, ent_kind, ent_pos, ent_alive, mob_table,
               agent, action: int, rng: int) -> tuple[int, int]:
    """Apply one agent action then one mob random-walk tick, in place.

    ``agent`` is an int64 array ``[x, y, facing]``. Returns the index of the
    entity consumed by an interact action (or -1) and the new RNG state.
    """
    h, w = terrain.shape
    x, y, facing = int(agent[0]), int(agent[1]), int(agent[2])
    achieved = -1
    if action <= 3:
        d = (facing + (0, 2, 3, 1)[action]) % 4
        nx, ny = x + DX[d], y + DY[d]
        if _free(terrain, ent_grid, nx, ny):
            agent[0], agent[1] = nx, ny
            x, y = nx, ny
    elif action == 4:
        agent[2] = (facing + 3) % 4
    elif action == 5:
        agent[2] = (facing + 1) % 4
    elif action == 6:
        nx, ny = x + DX[facing], y + DY[facing]
        if 0 <= nx < w and 0 <= ny < h:
            e = int(ent_grid[ny, nx])
            if e >= 0:
                ent_alive[e] = 0
                ent_grid[ny, nx] = -1
                achieved = e

    for i in range(ent_kind.shape[0]):
        if not ent_alive[i] or not mob_table[ent_kind[i]]:
            continue
        rng, z = splitmix64(rng)
        if not (z >> 63):
            continue
        rng, z = splitmix64(rng)
        d = z % 5
        if d == 4:
            continue
        ox, oy = int(ent_pos[i, 0]), int(ent_pos[i, 1])
        nx, ny = ox + DX[d], oy + DY[d]
        if (nx != x or ny != y) and _free(terrain, ent_grid, nx, ny):
            ent_grid[oy, ox] = -1
            ent_grid[ny, nx] = i
            ent_pos[i, 0], ent_pos[i, 1] = nx, ny
    return achieved, rng


_OFFSETS: dict = {}


def _view_coords(r: int, facing: int):
    key = (r, facing)
    if key not in _OFFSETS:
        i, j = np.meshgrid(np.arange(2 * r + 1), np.arange(2 * r + 1), indexing="ij")
        fwd, right = r - i, j - r
        rf = (facing + 1) % 4
        ox = fwd * DX[facing] + right * DX[rf]
        oy = fwd * DY[facing] + right * DY[rf]
        _OFFSETS[key] = (ox, oy)
    return _OFFSETS[key]


def render_view(terrain, ent_grid, ent_kind, ax: int, ay: int, facing: int,
                r: int, n_terrain: int, out: np.ndarray) -> None:
    """Write the ego-centric one-hot window into ``out`` (uint8 ``[C, 2r+1, 2r+1]``).

    Rows of the window run from far-ahead (row 0) to behind; the cell directly
    ahead of the agent is ``[r-1, r]``. Cells off the map set channel 0.
    """
    h, w = terrain.shape
    ox, oy = _view_coords(r, facing)
    wx, wy = ox + ax, oy + ay
    inside = (wx >= 0) & (wx < w) & (wy >= 0) & (wy < h)
    out[...] = 0
    ii, jj = np.nonzero(inside)
    out[0][~inside] = 1
    cx, cy = wx[ii, jj], wy[ii, jj]
    out[terrain[cy, cx], ii, jj] = 1
    e = ent_grid[cy, cx]
    has = e >= 0
    out[n_terrain + ent_kind[e[has]], ii[has], jj[has]] = 1
