"""Compare the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Each kernel is timed on both backends with identical inputs and the outputs
are checked for bit-identity before timings are reported.  A full training
step (forward, backward, AdamW) is timed in a subprocess per backend.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from gsbh import _pykernels as py
from gsbh import world as W

try:
    from gsbh import _ckernels as cx
except ImportError:  # extension not built
    cx = None

STEP_SNIPPET = r"""
import time, numpy as np
from gsbh import kernels, model as M, world as W, demos as D
from gsbh.optim import OptimizerState, adamw_step
from gsbh.trainer import batch_indices
trajs = D.filter_and_relabel(D.collect_episodes(W.WorldConfig(), 40, 0), W.WorldConfig())
data = D.StepArrays.from_trajectories(trajs)
params = M.init_params(M.ModelConfig(), 0)
state = OptimizerState()
def step(t):
    params.zero_grad()
    loss = M.compute_loss(data.batch(batch_indices(0, t, len(data), 32)), params)
    loss.total.backward()
    adamw_step(params.tensors, state, 1e-4)
    return loss.total.data.item()
step(0)
t0 = time.perf_counter()
for t in range(1, {n} + 1):
    last = step(t)
print(kernels.BACKEND, (time.perf_counter() - t0) / {n} * 1e3, repr(last))
"""


def _cases(rng):
    x = rng.standard_normal((32, 16, 9, 9))
    cols = py.im2col(x, 3, 1, 1)
    n = 200_000
    p, g = rng.standard_normal(n), rng.standard_normal(n)
    m, v = rng.standard_normal(n) * 0.1, rng.random(n) * 0.01
    adam_args = (1e-4, 1e-4, 0.9, 0.999, 0.1, 0.001, 1e-8)

    def adam(mod):
        pp, mm, vv = p.copy(), m.copy(), v.copy()
        mod.adamw_update(pp, g, mm, vv, *adam_args)
        return pp

    def mix(mod):
        s = 12345
        for _ in range(10_000):
            s, _z = mod.splitmix64(s)
        return s

    def world(mod):
        st = W.generate_world(W.WorldConfig(biome="tundra", seed=3))
        out = np.empty((W.N_CHANNELS, 9, 9), dtype=np.uint8)
        acc = np.zeros_like(out, dtype=np.int64)
        rng_state = st.rng_state
        for t in range(2000):
            _, rng_state = mod.world_step(st.terrain, st.ent_grid, st.ent_kind, st.ent_pos, st.ent_alive,
                                          W.MOB_TABLE, st.agent, (t * 7) % 6, rng_state)
            mod.render_view(st.terrain, st.ent_grid, st.ent_kind, int(st.agent[0]), int(st.agent[1]),
                            int(st.agent[2]), 4, W.N_TERRAIN, out)
            acc += out
        return acc

    return {
        "world step+render x2000": world,
        "im2col 32x16x9x9 k3 p1": lambda mod: mod.im2col(x, 3, 1, 1),
        "col2im 32x16x9x9 k3 p1": lambda mod: mod.col2im(cols, 32, 16, 9, 9, 3, 1, 1),
        "adamw 200k params": adam,
        "splitmix64 x10k": mix,
    }


def bench_kernels(repeat: int) -> list[tuple[str, float, float | None]]:
    rows = []
    for name, fn in _cases(np.random.default_rng(0)).items():
        t_py = min(timeit.repeat(lambda: fn(py), number=1, repeat=repeat))
        t_cx = None
        if cx is not None:
            a, b = fn(py), fn(cx)
            if not np.array_equal(np.asarray(a), np.asarray(b)):
                raise SystemExit(f"{name}: backends disagree")
            t_cx = min(timeit.repeat(lambda: fn(cx), number=1, repeat=repeat))
        rows.append((name, t_py, t_cx))
    return rows


def bench_train_step(n: int) -> dict[str, tuple[float, str]]:
    out = {}
    for pure in ("1", "0"):
        env = dict(os.environ, GSBH_PURE_PYTHON=pure, OMP_NUM_THREADS="1", OPENBLAS_NUM_THREADS="1")
        res = subprocess.run([sys.executable, "-c", STEP_SNIPPET.replace("{n}", str(n))],
                             env=env, capture_output=True, text=True, check=True)
        backend, ms, loss = res.stdout.split()
        out[backend] = (float(ms), loss)
    return out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--train-steps", type=int, default=50)
    args = ap.parse_args()

    print(f"{'kernel':<26}{'python ms':>12}{'compiled ms':>14}{'speedup':>10}")
    for name, t_py, t_cx in bench_kernels(args.repeat):
        if t_cx is None:
            print(f"{name:<26}{t_py * 1e3:>12.3f}{'n/a':>14}{'':>10}")
        else:
            print(f"{name:<26}{t_py * 1e3:>12.3f}{t_cx * 1e3:>14.3f}{t_py / t_cx:>9.1f}x")

    steps = bench_train_step(args.train_steps)
    print()
    for backend, (ms, loss) in steps.items():
        print(f"train step [{backend:<8}] {ms:8.2f} ms   final loss {loss}")
    if len(steps) == 2:
        losses = {loss for _, loss in steps.values()}
        print("losses identical across backends:", len(losses) == 1)


if __name__ == "__main__":
    main()
