"""Acceptance gate: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` (or ``python tests/test_acceptance.py``).
Criteria 5-9 train eleven full-size models and take a little over an hour on
one core; deselect them with ``-m "not slow"``.  Trained artifacts go to a
fresh temporary directory unless ``GSBH_ACCEPTANCE_DIR`` points somewhere
persistent, in which case finished models are reused on later runs.
"""
from __future__ import annotations

import csv
import io
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from gsbh import cli
from gsbh import demos as D
from gsbh import evaluator as E
from gsbh import model as M
from gsbh import tensor as T
from gsbh import trainer as TR
from gsbh import world as W
from gsbh.checkpoint import load_checkpoint
from gsbh.config import RunConfig
from gsbh.parallel import default_workers
from gsbh.tensor import Tensor

RESULTS: dict[int, tuple[bool, str]] = {}

TRAIN_SEEDS = (0, 1, 2)
EVAL_SEED = 2024
EVAL_EPISODES = 200
VARIANTS = {
    "full": {},
    "concat": {"use_gsb": False},
    "no-horizon": {"use_horizon_conditioning": False, "use_horizon_loss": False},
    "condition-free": {"use_goal_condition": False},
}


def gate(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = (bool(ok), detail)
    print(f"\ncriterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, f"criterion {n}: {detail}"


# -- shared training / evaluation cache ------------------------------------------

class Lab:
    def __init__(self, root: Path):
        self.root = root
        self.cfg = RunConfig()
        self.workers = default_workers()
        self._data: dict[str, list] = {}
        self._models: dict[tuple, M.PolicyParams] = {}
        self._reports: dict[tuple, E.EvalReport] = {}

    def world(self, biome: str) -> W.WorldConfig:
        return replace(self.cfg.world(), biome=biome, entity_densities=None, rock_density=None,
                       max_episode_steps=None)

    def dataset_path(self, biome: str) -> Path:
        path = self.root / f"data_{biome}" / "dataset.gsbd"
        if not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            trajs = D.build_dataset(self.world(biome), self.cfg["world.collect_episodes"], 0, self.workers)
            D.write_dataset(trajs, path)
        return path

    def dataset(self, biome: str) -> list:
        if biome not in self._data:
            self._data[biome] = D.read_dataset(self.dataset_path(biome))
        return self._data[biome]

    def model(self, biome: str, variant: str, seed: int) -> M.PolicyParams:
        key = (biome, variant, seed)
        if key not in self._models:
            out = self.root / f"{biome}_{variant}_s{seed}"
            final = out / "final.gsbh"
            if not final.exists():
                data = self.dataset(biome)
                t0 = time.process_time()
                TR.train(self.cfg.train(seed, **VARIANTS[variant]), data, out, self.cfg.model())
                (out / "cpu_seconds.txt").write_text(f"{time.process_time() - t0:.1f}\n")
            self._models[key] = load_checkpoint(final)[0]
        return self._models[key]

    def cpu_seconds(self, biome: str, variant: str, seed: int) -> float:
        return float((self.root / f"{biome}_{variant}_s{seed}" / "cpu_seconds.txt").read_text())

    def report(self, biome: str, variant: str, seed: int, eval_biome: str | None = None,
               goals=None, c: int = 3) -> E.EvalReport:
        key = (biome, variant, seed, eval_biome, tuple(goals) if goals else None, c)
        if key not in self._reports:
            params = self.model(biome, variant, seed)
            world = self.world(eval_biome or biome)
            t0 = time.process_time()
            self._reports[key] = E.evaluate(params, world, goals, c, EVAL_EPISODES, EVAL_SEED,
                                            workers=self.workers, train_biome=biome)
            self._reports[key].extra["cpu_seconds"] = time.process_time() - t0
        return self._reports[key]


@pytest.fixture(scope="module")
def lab(tmp_path_factory):
    root = os.environ.get("GSBH_ACCEPTANCE_DIR")
    path = Path(root) if root else tmp_path_factory.mktemp("acceptance")
    path.mkdir(parents=True, exist_ok=True)
    return Lab(path)


def _seed_mean(lab, variant, attr="macro_sr"):
    vals = [getattr(lab.report("meadow", variant, s), attr) for s in TRAIN_SEEDS]
    return float(np.mean(vals)), vals


# -- criterion 1 ---------------------------------------------------------------------

def _random_micro_config(rng) -> M.ModelConfig:
    n_stages = int(rng.integers(1, 3))
    return M.ModelConfig(
        view_size=int(rng.choice([5, 7, 9])),
        channels=tuple(int(c) for c in rng.integers(2, 4, n_stages)),
        blocks_per_stage=int(rng.integers(1, 3)),
        goal_dim=int(rng.integers(2, 5)), goal_hidden=int(rng.integers(2, 4)),
        action_dim=int(rng.integers(2, 4)), horizon_dim=int(rng.integers(2, 4)),
        fusion_hidden=int(rng.integers(4, 9)), fusion_dim=int(rng.integers(3, 6)),
        policy_hidden=int(rng.integers(3, 6)),
        use_gsb=bool(rng.random() < 0.75), use_horizon_conditioning=bool(rng.random() < 0.75),
        use_extra_obs=bool(rng.random() < 0.75), use_goal_condition=bool(rng.random() < 0.75))


def _micro_batch(rng, cfg, n):
    return {"views": (rng.random((n, cfg.in_channels, cfg.view_size, cfg.view_size)) < 0.3).astype(float),
            "extras": rng.random((n, cfg.n_extra)), "goals": rng.integers(0, cfg.n_goals, n),
            "prev_actions": rng.integers(0, cfg.n_actions + 1, n), "actions": rng.integers(0, cfg.n_actions, n),
            "horizon_bins": rng.integers(0, cfg.n_bins, n)}


def test_criterion_01_gradient_check():
    """Analytic vs central-difference gradients of the full loss, 20 random micro-models."""
    rng = np.random.default_rng(20)
    eps, worst, checked = 1e-5, 0.0, 0
    t0 = time.perf_counter()
    for _ in range(20):
        cfg = _random_micro_config(rng)
        params = M.init_params(cfg, int(rng.integers(1 << 30)))
        batch = _micro_batch(rng, cfg, int(rng.integers(2, 5)))
        use_hl = bool(rng.random() < 0.8)
        params.zero_grad()
        M.compute_loss(batch, params, use_hl).total.backward()
        for name, t in params.tensors.items():
            if t.grad is None:
                continue
            flat, grad = t.data.reshape(-1), t.grad.reshape(-1)
            for i in rng.choice(flat.size, size=min(6, flat.size), replace=False):
                old = flat[i]
                flat[i] = old + eps
                hi = M.compute_loss(batch, params, use_hl).values()[2]
                flat[i] = old - eps
                lo = M.compute_loss(batch, params, use_hl).values()[2]
                flat[i] = old
                num = (hi - lo) / (2 * eps)
                rel = abs(num - grad[i]) / max(abs(num), abs(grad[i]), 1e-6)
                worst = max(worst, rel)
                checked += 1
    elapsed = time.perf_counter() - t0
    gate(1, worst <= 1e-4 and elapsed < 60,
         f"max rel err {worst:.2e} over {checked} coordinates, {elapsed:.1f}s")


# -- criterion 2 ---------------------------------------------------------------------

HORIZON_TABLE = [(0, 0), (9, 0), (10, 1), (19, 1), (20, 2), (50, 5), (95, 9), (99, 9), (100, 10),
                 (119, 10), (120, 11), (139, 11), (140, 12), (160, 13), (180, 14), (199, 14), (200, 15),
                 (205, 15), (1000, 15), (65535, 15)]


def test_criterion_02_horizon_table():
    wrong = [(h, b, D.discretize_horizon(h)) for h, b in HORIZON_TABLE if D.discretize_horizon(h) != b]
    vec = D.discretize_horizons(np.array([h for h, _ in HORIZON_TABLE]))
    ok = not wrong and len(HORIZON_TABLE) == 20 and vec.tolist() == [b for _, b in HORIZON_TABLE]
    gate(2, ok, f"{20 - len(wrong)}/20 boundary cases map to the expected bin")


# -- criterion 3 ---------------------------------------------------------------------

def test_criterion_03_gconv_block_algebra():
    rng = np.random.default_rng(3)
    c, gd, gh = 4, 5, 3

    def block(zero_conv=False, zero_goal=False):
        def t(*shape, zero=False):
            return Tensor(np.zeros(shape) if zero else rng.standard_normal(shape))
        return M.GConvBlockParams(t(c, c, 3, 3, zero=zero_conv), t(c, zero=zero_conv),
                                  t(c, c, 3, 3, zero=zero_conv), t(c, zero=zero_conv),
                                  t(gh, gd), t(gh), t(c, gh, zero=zero_goal), t(c, zero=zero_goal))

    x, g = rng.standard_normal((3, c, 5, 5)), rng.standard_normal((3, gd))
    identity = np.array_equal(M.gconv_block_forward(Tensor(x), Tensor(g), block(zero_conv=True)).data, x)

    p = block()
    gate_vals = T.sigmoid(T.linear(T.relu(T.linear(Tensor(rng.standard_normal((50, gd))), p.fc1_w, p.fc1_b)),
                                   p.fc2_w, p.fc2_b)).data
    bounded = bool(np.all((gate_vals > 0) & (gate_vals < 1)))

    pz = block(zero_goal=True)
    invariant = np.array_equal(M.gconv_block_forward(Tensor(x), Tensor(g), pz).data,
                               M.gconv_block_forward(Tensor(x), Tensor(-7 * g), pz).data)

    x1, relu = rng.standard_normal((3, c, 1, 1)), (lambda v: np.maximum(v, 0))
    xv = x1[:, :, 0, 0]
    xh = relu(relu(xv @ p.conv1_w.data[:, :, 1, 1].T + p.conv1_b.data) @ p.conv2_w.data[:, :, 1, 1].T
              + p.conv2_b.data)
    gg = relu(g @ p.fc1_w.data.T + p.fc1_b.data) @ p.fc2_w.data.T + p.fc2_b.data
    closed = xh / (1 + np.exp(-gg)) + xv
    err = float(np.max(np.abs(M.gconv_block_forward(Tensor(x1), Tensor(g), p).data[:, :, 0, 0] - closed)))
    gate(3, identity and bounded and invariant and err <= 1e-12,
         f"identity={identity} gate-in-(0,1)={bounded} goal-invariant={invariant} 1x1 err={err:.1e}")


# -- criterion 4 ---------------------------------------------------------------------

def test_criterion_04_dataset_invariants(lab):
    data = lab.dataset("meadow")
    replay_ok = all(D.replay(tr)[:1] == [(tr.length - 1, tr.goal)] for tr in data)
    horizons_ok = all(tr.raw_horizons[-1] == 0 and np.all(np.diff(tr.raw_horizons) == -1)
                      and np.all(np.diff(tr.horizon_bins) <= 0) for tr in data)
    counts = np.bincount([tr.goal for tr in data], minlength=W.N_GOALS)[[g.id for g in W.goal_registry("meadow")]]
    balanced = len(set(counts.tolist())) == 1 and counts[0] > 0
    gate(4, replay_ok and horizons_ok and balanced,
         f"{len(data)} trajectories: replay={replay_ok} horizons={horizons_ok} per-goal counts={counts.tolist()}")


# -- criteria 5 and 6 ------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_05_gsb_beats_concat(lab):
    gsb, gsb_all = _seed_mean(lab, "full")
    cat, cat_all = _seed_mean(lab, "concat")
    cpu = sum(lab.cpu_seconds("meadow", v, s) + lab.report("meadow", v, s).extra["cpu_seconds"]
              for v in ("full", "concat") for s in TRAIN_SEEDS)
    gate(5, gsb - cat >= 0.10 and cpu <= 7200,
         f"GSB SR {gsb:.3f} {np.round(gsb_all, 3).tolist()} vs concat {cat:.3f} {np.round(cat_all, 3).tolist()}"
         f" (diff {100 * (gsb - cat):+.1f} pts, need +10); train+eval CPU {cpu / 60:.0f} min")


@pytest.mark.slow
def test_criterion_06_horizon_beats_no_horizon(lab):
    full, full_all = _seed_mean(lab, "full")
    noh, noh_all = _seed_mean(lab, "no-horizon")
    gate(6, full - noh >= 0.05,
         f"full SR {full:.3f} {np.round(full_all, 3).tolist()} vs no-horizon {noh:.3f} "
         f"{np.round(noh_all, 3).tolist()} (diff {100 * (full - noh):+.1f} pts, need +5)")


# -- criterion 7 ---------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_07_c_sweep_shape(lab):
    params = lab.model("tundra", "full", 0)
    rows = E.c_sweep(params, lab.world("tundra"), range(15), EVAL_EPISODES, EVAL_SEED, workers=lab.workers)
    (lab.root / "tundra_sweep.csv").write_text(E.sweep_csv(rows))
    parsed = list(csv.DictReader(io.StringIO(E.sweep_csv(rows))))
    sr = {int(r["c"]): float(r["avg_sr"]) for r in parsed}
    best_c = max(sr, key=sr.get)
    gate(7, len(parsed) == 15 and sr[best_c] >= sr[0] and sr[14] <= sr[best_c],
         f"SR(c=0)={sr[0]:.3f} best SR={sr[best_c]:.3f} at c={best_c} SR(c=14)={sr[14]:.3f}; "
         + " ".join(f"{c}:{v:.2f}" for c, v in sr.items()))


# -- criterion 8 ---------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_08_condition_free_skew(lab):
    params = lab.model("meadow", "condition-free", 0)
    free, skew = E.condition_free_eval(params, lab.world("meadow"), EVAL_EPISODES, EVAL_SEED,
                                       workers=lab.workers)
    cond = lab.report("meadow", "full", 0)
    gap = cond.macro_precision - free.macro_precision
    per_goal = {W.GOALS[g.goal].name: round(g.sr_mean, 3) for g in free.goals}
    gate(8, skew >= 2 and gap >= 0.15,
         f"condition-free skew {skew:.2f} (need >=2) per-goal SR {per_goal}; precision "
         f"{cond.macro_precision:.3f} conditioned vs {free.macro_precision:.3f} free (gap {100 * gap:+.1f} pts, need +15)")


# -- criterion 9 ---------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_09_zero_shot_transfer(lab):
    shared = E.shared_goals("meadow", "tundra")
    zs = E.generalization_eval(lab.model("meadow", "full", 0), "meadow", lab.world("tundra"),
                               n_episodes=EVAL_EPISODES, seed=EVAL_SEED, workers=lab.workers)
    ind = lab.report("tundra", "full", 0, goals=shared)
    ok_sr = zs.macro_sr >= 0.5 * ind.macro_sr
    ok_prec = zs.macro_precision >= ind.macro_precision - 0.15
    gate(9, ok_sr and ok_prec,
         f"zero-shot SR {zs.macro_sr:.3f} vs in-domain {ind.macro_sr:.3f} (need >= {0.5 * ind.macro_sr:.3f}); "
         f"precision {zs.macro_precision:.3f} vs {ind.macro_precision:.3f} (need >= {ind.macro_precision - 0.15:.3f})")


# -- criterion 10 --------------------------------------------------------------------

def test_criterion_10_long_tail_report(lab, tmp_path, capsys):
    out = tmp_path / "report"
    code = cli.dispatch(["report", "--dataset", str(lab.dataset_path("meadow")), "--out", str(out)])
    rows = list(csv.DictReader((out / "horizon_summary.csv").open()))
    ratios = {r["goal"]: float(r["p95_over_median"]) for r in rows}
    gate(10, code == 0 and max(ratios.values()) >= 3,
         "p95/median per goal: " + ", ".join(f"{g} {v:.2f}" for g, v in ratios.items()))


# -- criterion 11 --------------------------------------------------------------------

DETERMINISM_CFG = """
world.collect_episodes = 120
model.channels = 8,8
model.blocks_per_stage = 1
train.total_steps = 60
train.warmup_steps = 6
train.eval_every = 20
eval.episodes = 20
eval.seeds = 4
"""


def _artifacts(d: Path) -> dict[str, bytes]:
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*"))
            if p.is_file() and p.name != "manifest.json"}


def test_criterion_11_determinism(tmp_path):
    cfg = tmp_path / "det.cfg"
    cfg.write_text(DETERMINISM_CFG)
    runs = {}
    for tag, workers in (("a", "1"), ("b", "1"), ("c", "4")):
        base = tmp_path / tag
        common = ["--config", str(cfg), "--seed", "11", "--workers", workers]
        assert cli.dispatch(["collect", *common, "--out", str(base / "collect")]) == 0
        assert cli.dispatch(["train", *common, "--dataset", str(base / "collect" / "dataset.gsbd"),
                             "--out", str(base / "train")]) == 0
        assert cli.dispatch(["eval", *common, "--checkpoint", str(base / "train" / "final.gsbh"),
                             "--out", str(base / "eval")]) == 0
        runs[tag] = {s: _artifacts(base / s) for s in ("collect", "train", "eval")}
    same = {s: runs["a"][s] == runs["b"][s] == runs["c"][s] for s in ("collect", "train", "eval")}
    gate(11, all(same.values()), f"byte-identical across 2 runs and workers 1 vs 4: {same}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", *sys.argv[1:]]))
