"""Closed-loop evaluation: rollouts with the adaptive horizon, success rate,
precision, and the sweep / transfer / horizon-length reports."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from gsbh import model as M
from gsbh import world as W
from gsbh.demos import Trajectory
from gsbh.errors import ConfigError, ContractError
from gsbh.parallel import ordered_map

log = logging.getLogger(__name__)

DEFAULT_C = 3
N_EVAL_SEEDS = 10


@dataclass
class EpisodeResult:
    goal: int
    success: bool
    achieved_events: list[int]
    length: int
    seed: int


def eval_world_seed(seed: int, group: int, index: int) -> int:
    # shared by all goals, so goals are compared on identical worlds
    return W.derive_seed(seed, group, index, 0xE7A1)


def _rollout_block(params: M.PolicyParams | None, world: W.WorldConfig,
                   episodes: Sequence[tuple[int, int, int]], c: int, cap: int) -> list[EpisodeResult]:
    """Run episodes ``(goal, world_seed, policy_seed)`` in lock-step.

    Episodes run to ``cap`` steps regardless of what they achieve. With
    ``params=None`` actions are uniform at random.
    """
    states = [W.generate_world(world.with_seed(ws)) for _, ws, _ in episodes]
    for s in states:
        s.config.max_episode_steps = max(s.config.max_episode_steps, cap)
    rngs = [np.random.default_rng(ps) for _, _, ps in episodes]
    goals = np.array([g for g, _, _ in episodes], dtype=np.int64)
    n = len(episodes)
    size = world.view_size
    views = np.zeros((n, W.N_CHANNELS, size, size), dtype=np.uint8)
    extras = np.zeros((n, W.N_EXTRA))
    prev = np.full(n, W.START_ACTION, dtype=np.int64)
    achieved: list[list[int]] = [[] for _ in range(n)]
    for _ in range(cap):
        if params is None:
            probs = np.full((n, W.N_ACTIONS), 1.0 / W.N_ACTIONS)
        else:
            for i, s in enumerate(states):
                W.render_view(s, views[i])
                W.extra_features(s, extras[i])
            probs = M.act_distribution(params, views.astype(np.float64), extras, goals, prev, c)
        cdf = np.cumsum(probs, axis=1)
        for i, s in enumerate(states):
            a = int(np.searchsorted(cdf[i], rngs[i].random() * cdf[i, -1], side="right"))
            a = min(a, W.N_ACTIONS - 1)
            achieved[i].extend(W.step_inplace(s, a))
            prev[i] = a
    return [EpisodeResult(int(goals[i]), int(goals[i]) in achieved[i], achieved[i], cap, episodes[i][1])
            for i in range(n)]


def _run_job(job):
    params, world, episodes, c, cap = job
    return _rollout_block(params, world, episodes, c, cap)


def _episode_cap(world: W.WorldConfig, cap: int | None) -> int:
    return world.max_episode_steps if cap is None else cap


def rollout(params: M.PolicyParams | None, config: W.WorldConfig, goal: int, c: int = DEFAULT_C,
            n_episodes: int = 200, seed: int = 0, cap: int | None = None, workers: int = 1,
            block: int = 50) -> list[EpisodeResult]:
    """Evaluate one goal. The policy only ever sees observations and its own
    predicted horizon; no demonstration data is reachable from here."""
    if c < 0:
        raise ContractError("c must be >= 0")
    cap = _episode_cap(config, cap)
    eps = [(goal, eval_world_seed(seed, 0, i), W.derive_seed(seed, 0, i, goal)) for i in range(n_episodes)]
    jobs = [(params, config, eps[i:i + block], c, cap) for i in range(0, n_episodes, block)]
    return [r for part in ordered_map(_run_job, jobs, workers) for r in part]


# -- metrics ------------------------------------------------------------------------

def success_rate(results: Sequence[EpisodeResult]) -> dict:
    """Per-goal success rate plus their macro-average under key ``"macro"``."""
    groups: dict[int, list[EpisodeResult]] = {}
    for r in results:
        groups.setdefault(r.goal, []).append(r)
    out = {g: sum(r.success for r in rs) / len(rs) for g, rs in sorted(groups.items()) if rs}
    out["macro"] = float(np.mean(list(out.values()))) if out else float("nan")
    return out


def precision(results: Sequence[EpisodeResult]) -> dict:
    """Per-goal precision: specified-goal completions over all completions.

    Goals whose episodes completed nothing at all map to ``None``.
    """
    hits: dict[int, int] = {}
    total: dict[int, int] = {}
    for r in results:
        hits[r.goal] = hits.get(r.goal, 0) + sum(1 for e in r.achieved_events if e == r.goal)
        total[r.goal] = total.get(r.goal, 0) + len(r.achieved_events)
    out = {g: (hits[g] / total[g] if total[g] else None) for g in sorted(total)}
    vals = [v for v in out.values() if v is not None]
    out["macro"] = float(np.mean(vals)) if vals else None
    return out


@dataclass
class GoalStats:
    goal: int
    sr_mean: float
    sr_std: float
    prec_mean: float | None
    prec_std: float | None
    n: int
    successes: int
    hits: int
    completions: int


@dataclass
class EvalReport:
    goals: list[GoalStats]
    tag: str = "in-domain"
    train_biome: str | None = None
    eval_biome: str | None = None
    c: int = DEFAULT_C
    config_digest: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def macro_sr(self) -> float:
        return float(np.mean([g.sr_mean for g in self.goals]))

    @property
    def macro_precision(self) -> float | None:
        vals = [g.prec_mean for g in self.goals if g.prec_mean is not None]
        return float(np.mean(vals)) if vals else None

    def by_goal(self) -> dict[int, GoalStats]:
        return {g.goal: g for g in self.goals}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["goal", "sr_mean", "sr_std", "prec_mean", "prec_std", "n"])
        for g in self.goals:
            w.writerow([W.GOALS[g.goal].name, _fmt(g.sr_mean), _fmt(g.sr_std),
                        _fmt(g.prec_mean), _fmt(g.prec_std), g.n])
        return buf.getvalue()

    def to_json(self) -> str:
        body = {
            "tag": self.tag, "train_biome": self.train_biome, "eval_biome": self.eval_biome,
            "c": self.c, "config_digest": self.config_digest,
            "macro_sr": self.macro_sr, "macro_precision": self.macro_precision,
            "goals": [{"goal": W.GOALS[g.goal].name, "sr_mean": g.sr_mean, "sr_std": g.sr_std,
                       "prec_mean": g.prec_mean, "prec_std": g.prec_std, "n": g.n,
                       "successes": g.successes, "hits": g.hits, "completions": g.completions}
                      for g in self.goals],
        }
        body.update(self.extra)
        return json.dumps(body, indent=2, sort_keys=True) + "\n"


def _fmt(v) -> str:
    return "" if v is None else f"{v:.6f}"


def _mean_std(vals):
    vals = [v for v in vals if v is not None]
    if not vals:
        return None, None
    return float(np.mean(vals)), float(np.std(vals))


def config_digest(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(repr(p).encode())
    return h.hexdigest()[:16]


def evaluate(params: M.PolicyParams | None, world: W.WorldConfig, goals: Sequence[int] | None = None,
             c: int = DEFAULT_C, n_episodes: int = 200, seed: int = 0, n_seeds: int = N_EVAL_SEEDS,
             cap: int | None = None, workers: int = 1, tag: str = "in-domain",
             train_biome: str | None = None) -> EvalReport:
    """``n_episodes`` per goal, split over ``n_seeds`` evaluation seeds.

    Each seed group is one lock-step block covering every goal on the same
    worlds; metrics are mean +/- std across groups.
    """
    if c < 0:
        raise ContractError("c must be >= 0")
    goals = [g.id for g in W.goal_registry(world.biome)] if goals is None else list(goals)
    per = max(1, n_episodes // n_seeds)
    cap = _episode_cap(world, cap)
    jobs = []
    for s in range(n_seeds):
        eps = [(g, eval_world_seed(seed, s, i), W.derive_seed(seed, s, i, g))
               for g in goals for i in range(per)]
        jobs.append((params, world, eps, c, cap))
    groups = ordered_map(_run_job, jobs, workers)
    stats = []
    for g in goals:
        srs, precs = [], []
        succ = hits = comp = 0
        for res in groups:
            mine = [r for r in res if r.goal == g]
            srs.append(success_rate(mine)[g])
            precs.append(precision(mine)[g])
            succ += sum(r.success for r in mine)
            hits += sum(e == g for r in mine for e in r.achieved_events)
            comp += sum(len(r.achieved_events) for r in mine)
        pm, ps = _mean_std(precs)
        stats.append(GoalStats(g, float(np.mean(srs)), float(np.std(srs)), pm, ps,
                               per * n_seeds, succ, hits, comp))
    digest = config_digest(world.to_text(), goals, c, per, n_seeds, seed, cap)
    return EvalReport(stats, tag, train_biome or world.biome, world.biome, c, digest)


def c_sweep(params: M.PolicyParams, world: W.WorldConfig, c_values: Sequence[int] = tuple(range(15)),
            n_episodes: int = 200, seed: int = 0, n_seeds: int = N_EVAL_SEEDS,
            workers: int = 1) -> list[tuple[int, float, float | None]]:
    """Macro success rate and precision for each horizon shrink ``c``."""
    rows = []
    for c in c_values:
        rep = evaluate(params, world, None, c, n_episodes, seed, n_seeds, workers=workers)
        rows.append((int(c), rep.macro_sr, rep.macro_precision))
    return rows


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["c", "avg_sr", "avg_precision"])
    for c, sr, pr in rows:
        w.writerow([c, _fmt(sr), _fmt(pr)])
    return buf.getvalue()


def shared_goals(biome_a: str, biome_b: str) -> list[int]:
    b = {g.id for g in W.goal_registry(biome_b)}
    return [g.id for g in W.goal_registry(biome_a) if g.id in b]


def generalization_eval(params: M.PolicyParams, train_biome: str, eval_world: W.WorldConfig,
                        c: int = DEFAULT_C, n_episodes: int = 200, seed: int = 0,
                        n_seeds: int = N_EVAL_SEEDS, workers: int = 1) -> EvalReport:
    """Zero-shot evaluation in another biome, restricted to goals both biomes share."""
    goals = shared_goals(train_biome, eval_world.biome)
    if not goals:
        raise ConfigError(f"{train_biome} and {eval_world.biome} share no goals")
    return evaluate(params, eval_world, goals, c, n_episodes, seed, n_seeds, workers=workers,
                    tag="zero-shot", train_biome=train_biome)


@dataclass
class HorizonReport:
    histograms: dict[int, np.ndarray]   # goal -> counts per 10-step bin
    median: dict[int, float]
    p95: dict[int, float]
    counts: dict[int, int]

    def ratio(self, goal: int) -> float:
        return self.p95[goal] / self.median[goal] if self.median[goal] > 0 else math.inf

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["goal", "bin_start", "bin_end", "count"])
        for g, hist in self.histograms.items():
            for b, n in enumerate(hist):
                w.writerow([W.GOALS[g].name, 10 * b, 10 * b + 10, int(n)])
        return buf.getvalue()

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["goal", "count", "median", "p95", "p95_over_median"])
        for g in self.histograms:
            w.writerow([W.GOALS[g].name, self.counts[g], _fmt(self.median[g]), _fmt(self.p95[g]),
                        _fmt(self.ratio(g))])
        return buf.getvalue()


def horizon_report(dataset: Sequence[Trajectory]) -> HorizonReport:
    """Successful-trajectory length histograms (10-step bins) per goal."""
    if not dataset:
        raise ContractError("empty dataset")
    lengths: dict[int, list[int]] = {}
    for tr in dataset:
        lengths.setdefault(tr.goal, []).append(tr.length)
    hists, med, p95, counts = {}, {}, {}, {}
    for g in sorted(lengths):
        arr = np.asarray(lengths[g])
        hists[g] = np.bincount(arr // 10)
        med[g] = float(np.median(arr))
        p95[g] = float(np.percentile(arr, 95))
        counts[g] = int(arr.size)
    return HorizonReport(hists, med, p95, counts)


def condition_free_eval(params: M.PolicyParams, world: W.WorldConfig, n_episodes: int = 200,
                        seed: int = 0, c: int = DEFAULT_C, n_seeds: int = N_EVAL_SEEDS,
                        workers: int = 1) -> tuple[EvalReport, float]:
    """Per-goal success of a goal-blind model and its skew ``max SR / max(min SR, 1/n)``."""
    rep = evaluate(params, world, None, c, n_episodes, seed, n_seeds, workers=workers, tag="condition-free")
    srs = [g.sr_mean for g in rep.goals]
    n = rep.goals[0].n
    skew = max(srs) / max(min(srs), 1.0 / n)
    return rep, skew
