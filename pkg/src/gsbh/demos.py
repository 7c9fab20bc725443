"""Demonstration pipeline: scripted proxy rollouts, success filtering,
hindsight goal labels, horizon discretization and the dataset file format."""
from __future__ import annotations

import hashlib
import io
import logging
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from gsbh import world as W
from gsbh.errors import ContractError, FormatError
from gsbh.parallel import ordered_map

log = logging.getLogger(__name__)

N_HORIZON_BINS = 16
EXPLORE_FORWARD_PROB = 0.8


def discretize_horizon(h: int) -> int:
    """Map a remaining-step count onto one of 16 bins.

    Bins are 10 steps wide below 100, 20 steps wide up to 200, and everything
    from 200 on shares the last bin.
    """
    if h < 0:
        raise ContractError(f"horizon must be non-negative, got {h}")
    if h < 100:
        return h // 10
    if h < 200:
        return 10 + (h - 100) // 20
    return 15


def discretize_horizons(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=np.int64)
    if h.size and h.min() < 0:
        raise ContractError("horizon must be non-negative")
    return np.where(h < 100, h // 10, np.where(h < 200, 10 + (h - 100) // 20, 15)).astype(np.int64)


# -- proxy policy -------------------------------------------------------------

def _turn_towards(facing: int, d: int, rng: np.random.Generator) -> int:
    if d == (facing + 1) % 4:
        return W.TURN_RIGHT
    if d == (facing + 3) % 4:
        return W.TURN_LEFT
    return W.TURN_LEFT if rng.random() < 0.5 else W.TURN_RIGHT


def proxy_policy_action(state: W.WorldState, rng: np.random.Generator) -> int:
    """Scripted non-goal expert.

    Heads for the closest visible entity of any kind (by walking distance,
    ties broken at random) and interacts once it is directly ahead; with
    nothing in view it wanders.
    """
    x, y, facing = (int(v) for v in state.agent)
    visible = W.visible_entities(state)
    if visible:
        ax, ay = x + W.DX[facing], y + W.DY[facing]
        if 0 <= ax < state.config.width and 0 <= ay < state.config.height and state.ent_grid[ay, ax] >= 0:
            return W.INTERACT
        plan = _plan_to_nearest(state, visible, rng)
        if plan is not None:
            d = plan
            return W.FORWARD if d == facing else _turn_towards(facing, d, rng)
    if rng.random() < EXPLORE_FORWARD_PROB:
        return W.FORWARD
    return W.TURN_LEFT if rng.random() < 0.5 else W.TURN_RIGHT


def nearest_candidates(state: W.WorldState, visible: Sequence[int]) -> list[tuple[int, int]]:
    """All ``(entity, first move)`` pairs at the minimum walking distance.

    BFS over free cells within a box around the agent. A first move of a
    direction the agent already stands next to the entity in means "face
    that way". Empty when no visible entity can be reached.
    """
    cfg = state.config
    x0, y0 = int(state.agent[0]), int(state.agent[1])
    lim = cfg.view_radius + 2
    # interaction spot -> [(entity index, direction the agent must face)]
    spots: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for e in visible:
        ex, ey = int(state.ent_pos[e, 0]), int(state.ent_pos[e, 1])
        for d in range(4):
            spots.setdefault((ex - W.DX[d], ey - W.DY[d]), []).append((e, d))
    first: dict[tuple[int, int], int] = {(x0, y0): -1}
    frontier = [(x0, y0)]
    while frontier:
        found = []
        for cell in frontier:
            for e, face in spots.get(cell, ()):
                move = first[cell]
                found.append((e, face if move < 0 else move))
        if found:
            return sorted(set(found))
        nxt = []
        for cx, cy in frontier:
            for d in range(4):
                nx, ny = cx + W.DX[d], cy + W.DY[d]
                if (nx, ny) in first or abs(nx - x0) > lim or abs(ny - y0) > lim:
                    continue
                if not (0 <= nx < cfg.width and 0 <= ny < cfg.height):
                    continue
                if state.terrain[ny, nx] != W.TERRAIN_FLOOR or state.ent_grid[ny, nx] >= 0:
                    continue
                first[(nx, ny)] = d if first[(cx, cy)] < 0 else first[(cx, cy)]
                nxt.append((nx, ny))
        frontier = nxt
    return []


def _plan_to_nearest(state: W.WorldState, visible: Sequence[int], rng: np.random.Generator) -> int | None:
    """First move toward a nearest entity; ties between entities are broken at random."""
    cands = nearest_candidates(state, visible)
    if not cands:
        return None
    ents = sorted({e for e, _ in cands})
    e = ents[int(rng.integers(len(ents)))] if len(ents) > 1 else ents[0]
    moves = sorted(m for c, m in cands if c == e)
    return moves[0]


# -- collection ---------------------------------------------------------------

@dataclass
class EpisodeLog:
    """Full step stream of one proxy rollout."""

    seed: int
    views: np.ndarray      # uint8 [T, C, S, S], observation before each action
    extras: np.ndarray     # float64 [T, N_EXTRA]
    actions: np.ndarray    # uint8 [T]
    events: list[tuple[int, int]] = field(default_factory=list)  # (step index, goal id)

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(struct.pack("<QI", self.seed, len(self.actions)))
        buf.write(np.packbits(self.views).tobytes())
        buf.write(self.extras.astype("<f8").tobytes())
        buf.write(self.actions.tobytes())
        for t, g in self.events:
            buf.write(struct.pack("<IB", t, g))
        return buf.getvalue()


def episode_seed(seed: int, index: int) -> int:
    return W.derive_seed(seed, index, 0xC011EC7)


def run_proxy_episode(config: W.WorldConfig, ep_seed: int) -> EpisodeLog:
    cfg = config.with_seed(ep_seed)
    state = W.generate_world(cfg)
    rng = np.random.default_rng(W.derive_seed(ep_seed, 0xA11CE))
    cap = cfg.max_episode_steps
    views = np.zeros((cap, W.N_CHANNELS, cfg.view_size, cfg.view_size), dtype=np.uint8)
    extras = np.zeros((cap, W.N_EXTRA))
    actions = np.zeros(cap, dtype=np.uint8)
    events: list[tuple[int, int]] = []
    t = 0
    while t < cap:
        W.render_view(state, views[t])
        W.extra_features(state, extras[t])
        a = proxy_policy_action(state, rng)
        actions[t] = a
        achieved = W.step_inplace(state, a)
        t += 1
        if achieved:
            events.extend((t - 1, g) for g in achieved)
            break
    return EpisodeLog(ep_seed, views[:t].copy(), extras[:t].copy(), actions[:t].copy(), events)


def _collect_chunk(args):
    config, seeds = args
    return [run_proxy_episode(config, s) for s in seeds]


def collect_episodes(config: W.WorldConfig, n_episodes: int, seed: int,
                     workers: int = 1, chunk: int = 64) -> list[EpisodeLog]:
    """Roll out the proxy policy for ``n_episodes`` independent worlds.

    Episode ``i`` uses a world seed derived from ``(seed, i)``; output order is
    by episode index, so the worker count never changes the result.
    """
    if n_episodes < 1:
        raise ContractError("n_episodes must be >= 1")
    seeds = [episode_seed(seed, i) for i in range(n_episodes)]
    jobs = [(config, seeds[i:i + chunk]) for i in range(0, n_episodes, chunk)]
    return [ep for part in ordered_map(_collect_chunk, jobs, workers) for ep in part]


def log_digest(logs: Iterable[EpisodeLog]) -> str:
    h = hashlib.sha256()
    for ep in logs:
        h.update(ep.to_bytes())
    return h.hexdigest()


# -- trajectories -------------------------------------------------------------

@dataclass
class DemoStep:
    observation: W.Observation
    action: int
    prev_action: int
    goal: int
    horizon_bin: int
    raw_horizon: int


@dataclass
class Trajectory:
    """A goal-achieving demonstration; step arrays are aligned along axis 0."""

    goal: int
    seed: int
    views: np.ndarray
    extras: np.ndarray
    actions: np.ndarray
    world: W.WorldConfig | None = None

    @property
    def length(self) -> int:
        return int(self.actions.shape[0])

    @property
    def raw_horizons(self) -> np.ndarray:
        return np.arange(self.length - 1, -1, -1, dtype=np.int64)

    @property
    def horizon_bins(self) -> np.ndarray:
        return discretize_horizons(self.raw_horizons)

    @property
    def prev_actions(self) -> np.ndarray:
        prev = np.empty(self.length, dtype=np.int64)
        prev[0] = W.START_ACTION
        prev[1:] = self.actions[:-1]
        return prev

    @property
    def steps(self) -> list[DemoStep]:
        bins, raw, prev = self.horizon_bins, self.raw_horizons, self.prev_actions
        return [DemoStep(W.Observation(self.views[t], self.extras[t]), int(self.actions[t]),
                         int(prev[t]), self.goal, int(bins[t]), int(raw[t]))
                for t in range(self.length)]

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (self.goal == other.goal and self.seed == other.seed
                and np.array_equal(self.views, other.views)
                and np.array_equal(self.extras, other.extras)
                and np.array_equal(self.actions, other.actions))


def filter_and_relabel(logs: Iterable[EpisodeLog], world: W.WorldConfig | None = None) -> list[Trajectory]:
    """Keep successful episodes, cut at the first achievement, label with it."""
    out = []
    for ep in logs:
        if not ep.events:
            continue
        t_end, goal = ep.events[0]
        T = t_end + 1
        out.append(Trajectory(goal, ep.seed, ep.views[:T], ep.extras[:T], ep.actions[:T],
                              world.with_seed(ep.seed) if world is not None else None))
    return out


def balance(trajectories: Sequence[Trajectory], goals: Sequence[int], seed: int) -> list[Trajectory]:
    """Cap every goal's trajectory count at the smallest count among ``goals``.

    Surplus trajectories are dropped uniformly at random; survivors keep their
    original order.
    """
    by_goal: dict[int, list[int]] = {g: [] for g in goals}
    for i, tr in enumerate(trajectories):
        by_goal.setdefault(tr.goal, []).append(i)
    empty = [g for g in goals if not by_goal[g]]
    if empty:
        log.warning("no demonstrations for goal(s) %s; balancing over the rest", empty)
    counts = [len(v) for g, v in by_goal.items() if g in goals and v]
    if not counts:
        return []
    cap = min(counts)
    rng = np.random.default_rng(W.derive_seed(seed, 0xBA1A))
    keep: set[int] = set()
    for g in sorted(by_goal):
        idx = by_goal[g]
        if g not in goals:
            continue
        chosen = idx if len(idx) <= cap else rng.choice(idx, size=cap, replace=False).tolist()
        keep.update(chosen)
    return [tr for i, tr in enumerate(trajectories) if i in keep]


def replay(tr: Trajectory) -> list[tuple[int, int]]:
    """Re-execute the recorded actions; returns (step index, goal) events."""
    if tr.world is None:
        raise ContractError("trajectory carries no world config to replay against")
    state = W.generate_world(tr.world.with_seed(tr.seed))
    events = []
    for t, a in enumerate(tr.actions):
        events.extend((t, g) for g in W.step_inplace(state, int(a)))
    return events


def build_dataset(config: W.WorldConfig, n_episodes: int, seed: int, workers: int = 1,
                  balanced: bool = True) -> list[Trajectory]:
    logs = collect_episodes(config, n_episodes, seed, workers)
    trajs = filter_and_relabel(logs, config)
    if balanced:
        trajs = balance(trajs, [g.id for g in W.goal_registry(config.biome)], seed)
    return trajs


# -- flat training arrays -------------------------------------------------------

@dataclass
class StepArrays:
    """All demonstration steps concatenated, ready for minibatch sampling."""

    views: np.ndarray
    extras: np.ndarray
    actions: np.ndarray
    prev_actions: np.ndarray
    goals: np.ndarray
    horizon_bins: np.ndarray

    def __len__(self):
        return int(self.actions.shape[0])

    @classmethod
    def from_trajectories(cls, trajs: Sequence[Trajectory]) -> "StepArrays":
        if not trajs:
            raise ContractError("no trajectories")
        return cls(
            np.concatenate([t.views for t in trajs]),
            np.concatenate([t.extras for t in trajs]),
            np.concatenate([t.actions for t in trajs]).astype(np.int64),
            np.concatenate([t.prev_actions for t in trajs]),
            np.concatenate([np.full(t.length, t.goal, dtype=np.int64) for t in trajs]),
            np.concatenate([t.horizon_bins for t in trajs]),
        )

    def batch(self, idx: np.ndarray) -> dict[str, np.ndarray]:
        return {"views": self.views[idx].astype(np.float64), "extras": self.extras[idx],
                "actions": self.actions[idx], "prev_actions": self.prev_actions[idx],
                "goals": self.goals[idx], "horizon_bins": self.horizon_bins[idx]}


# -- dataset file ---------------------------------------------------------------

DATASET_MAGIC = b"GSBD"
DATASET_VERSION = 1


def _world_to_text(cfg: W.WorldConfig | None) -> str:
    return "" if cfg is None else cfg.to_text()


def _world_from_text(text: str) -> W.WorldConfig | None:
    return W.WorldConfig.from_text(text) if text else None


def dataset_bytes(trajectories: Sequence[Trajectory]) -> bytes:
    world = next((t.world for t in trajectories if t.world is not None), None)
    if trajectories:
        c, s = trajectories[0].views.shape[1], trajectories[0].views.shape[2]
        e = trajectories[0].extras.shape[1]
    else:
        c, s, e = W.N_CHANNELS, (world.view_size if world else 9), W.N_EXTRA
    wtext = _world_to_text(world).encode()
    buf = io.BytesIO()
    buf.write(DATASET_MAGIC)
    buf.write(struct.pack("<I", DATASET_VERSION))
    buf.write(W.registry_digest())
    buf.write(struct.pack("<I", len(wtext)))
    buf.write(wtext)
    buf.write(struct.pack("<HHH", c, s, e))
    buf.write(struct.pack("<Q", len(trajectories)))
    for tr in trajectories:
        T = tr.length
        body = io.BytesIO()
        body.write(struct.pack("<BQI", tr.goal, tr.seed, T))
        body.write(np.packbits(tr.views.astype(np.uint8)).tobytes())
        body.write(np.ascontiguousarray(tr.extras, dtype="<f8").tobytes())
        body.write(tr.actions.astype(np.uint8).tobytes())
        body.write(tr.prev_actions.astype(np.uint8).tobytes())
        body.write(np.full(T, tr.goal, dtype=np.uint8).tobytes())
        body.write(tr.horizon_bins.astype(np.uint8).tobytes())
        body.write(np.minimum(tr.raw_horizons, 0xFFFF).astype("<u2").tobytes())
        raw = body.getvalue()
        buf.write(struct.pack("<Q", len(raw)))
        buf.write(raw)
    return buf.getvalue()


def write_dataset(trajectories: Sequence[Trajectory], path) -> None:
    with open(path, "wb") as f:
        f.write(dataset_bytes(trajectories))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated dataset while reading {what}", self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def parse_dataset(data: bytes) -> list[Trajectory]:
    r = _Reader(data)
    if r.take(4, "magic") != DATASET_MAGIC:
        raise FormatError("bad dataset magic", 0)
    (version,) = r.unpack("<I", "version")
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {version}", 4)
    digest = r.take(32, "registry digest")
    if digest != W.registry_digest():
        raise FormatError("goal registry digest mismatch", 8)
    (wlen,) = r.unpack("<I", "world config length")
    world = _world_from_text(r.take(wlen, "world config").decode("utf-8"))
    c, s, e = r.unpack("<HHH", "observation dims")
    (count,) = r.unpack("<Q", "trajectory count")
    out = []
    for i in range(count):
        (rlen,) = r.unpack("<Q", f"record {i} length")
        start = r.pos
        rec = _Reader(r.take(rlen, f"record {i}"))
        try:
            goal, seed, T = rec.unpack("<BQI", "record header")
            nbits = T * c * s * s
            bits = np.frombuffer(rec.take((nbits + 7) // 8, "views"), dtype=np.uint8)
            views = np.unpackbits(bits, count=nbits).reshape(T, c, s, s)
            extras = np.frombuffer(rec.take(8 * T * e, "extras"), dtype="<f8").reshape(T, e).astype(np.float64)
            actions = np.frombuffer(rec.take(T, "actions"), dtype=np.uint8).copy()
            rec.take(T, "prev actions")
            rec.take(T, "goals")
            rec.take(T, "horizon bins")
            rec.take(2 * T, "raw horizons")
        except FormatError as exc:
            raise FormatError(f"record {i}: {exc.detail}", start + (exc.offset or 0)) from None
        out.append(Trajectory(goal, seed, views, extras, actions,
                              world.with_seed(seed) if world is not None else None))
    if r.pos != len(data):
        raise FormatError("trailing bytes after last record", r.pos)
    return out


def read_dataset(path) -> list[Trajectory]:
    with open(path, "rb") as f:
        return parse_dataset(f.read())
