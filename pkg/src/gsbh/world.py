"""Procedural, partially observable gridworld with biomes, resources and mobs.

Coordinates are ``(x, y)`` with ``y`` growing southwards. Facing is one of
``N, E, S, W`` (0..3). The agent sees a square window centred on itself and
rotated so that its facing direction points to the top row.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from gsbh import kernels
from gsbh.errors import ConfigError, ContractError

BIOMES = ("meadow", "grove", "tundra")

TERRAIN_VOID, TERRAIN_FLOOR, TERRAIN_ROCK = 0, 1, 2
N_TERRAIN = 3

FORWARD, BACK, STRAFE_LEFT, STRAFE_RIGHT, TURN_LEFT, TURN_RIGHT, INTERACT, NOOP = range(8)
N_ACTIONS = 8
START_ACTION = 8  # previous-action token at t=0; never executable
ACTION_NAMES = ("forward", "back", "strafe_left", "strafe_right",
                "turn_left", "turn_right", "interact", "noop")

DX = (0, 1, 0, -1)
DY = (-1, 0, 1, 0)


@dataclass(frozen=True)
class EntityKind:
    id: int
    name: str
    category: str  # "static_resource" or "mob"
    biomes: frozenset


_ALL = frozenset(BIOMES)
ENTITY_KINDS = (
    EntityKind(0, "tree", "static_resource", frozenset({"meadow", "grove"})),
    EntityKind(1, "flower", "static_resource", frozenset({"grove"})),
    EntityKind(2, "mushroom", "static_resource", frozenset({"grove"})),
    EntityKind(3, "berry_bush", "static_resource", frozenset({"grove"})),
    EntityKind(4, "sheep", "mob", _ALL),
    EntityKind(5, "cow", "mob", _ALL),
    EntityKind(6, "pig", "mob", _ALL),
    EntityKind(7, "chicken", "mob", frozenset({"grove", "tundra"})),
    EntityKind(8, "rabbit", "mob", frozenset({"tundra"})),
    EntityKind(9, "horse", "mob", frozenset({"tundra"})),
)
N_KINDS = len(ENTITY_KINDS)
N_CHANNELS = N_TERRAIN + N_KINDS
KIND_BY_NAME = {k.name: k for k in ENTITY_KINDS}
MOB_TABLE = np.array([k.category == "mob" for k in ENTITY_KINDS], dtype=np.uint8)


@dataclass(frozen=True)
class Goal:
    id: int
    name: str
    kind: int


GOALS = (
    Goal(0, "collect_wood", 0),
    Goal(1, "pick_flower", 1),
    Goal(2, "gather_mushroom", 2),
    Goal(3, "pick_berries", 3),
    Goal(4, "hunt_sheep", 4),
    Goal(5, "hunt_cow", 5),
    Goal(6, "hunt_pig", 6),
    Goal(7, "hunt_chicken", 7),
    Goal(8, "hunt_rabbit", 8),
    Goal(9, "hunt_horse", 9),
)
N_GOALS = len(GOALS)
GOAL_BY_NAME = {g.name: g for g in GOALS}

_REGISTRY = {
    "meadow": (0, 4, 5, 6),
    "grove": (0, 1, 2, 3, 4, 5, 6, 7),
    "tundra": (4, 5, 6, 7, 8, 9),
}

DEFAULT_DENSITIES = {
    "meadow": {"tree": 6.0, "sheep": 2.5, "cow": 2.5, "pig": 1.0},
    "grove": {"tree": 12.0, "flower": 3.0, "mushroom": 3.0, "berry_bush": 2.0,
              "sheep": 2.0, "cow": 2.0, "pig": 1.0, "chicken": 2.0},
    "tundra": {"sheep": 2.5, "cow": 2.5, "pig": 1.5, "chicken": 3.0, "rabbit": 3.0, "horse": 3.0},
}
DEFAULT_ROCK_DENSITY = {"meadow": 0.04, "grove": 0.08, "tundra": 0.0}
EPISODE_CAP = {"meadow": 200, "grove": 100, "tundra": 200}


def goal_registry(biome: str) -> list[Goal]:
    """Ordered goal list for a biome."""
    if biome not in _REGISTRY:
        raise ConfigError(f"unknown biome {biome!r}")
    return [GOALS[i] for i in _REGISTRY[biome]]


def registry_digest() -> bytes:
    """SHA-256 over the canonical goal/kind tables (stored in dataset headers)."""
    text = ";".join(f"{g.id}:{g.name}:{ENTITY_KINDS[g.kind].name}" for g in GOALS)
    text += "|" + ";".join(f"{b}={','.join(map(str, _REGISTRY[b]))}" for b in BIOMES)
    return hashlib.sha256(text.encode()).digest()


@dataclass
class WorldConfig:
    width: int = 32
    height: int = 32
    biome: str = "meadow"
    entity_densities: dict[str, float] | None = None
    rock_density: float | None = None
    view_radius: int = 4
    max_episode_steps: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.biome not in BIOMES:
            raise ConfigError(f"unknown biome {self.biome!r}")
        if self.entity_densities is None:
            self.entity_densities = dict(DEFAULT_DENSITIES[self.biome])
        if self.rock_density is None:
            self.rock_density = DEFAULT_ROCK_DENSITY[self.biome]
        if self.max_episode_steps is None:
            self.max_episode_steps = EPISODE_CAP[self.biome]
        if self.width < 3 or self.height < 3 or self.view_radius < 1 or self.max_episode_steps < 1:
            raise ConfigError("width/height must be >= 3, view_radius and max_episode_steps >= 1")
        if not 0.0 <= self.rock_density < 1.0:
            raise ConfigError("rock_density must lie in [0, 1)")
        for name, dens in self.entity_densities.items():
            kind = KIND_BY_NAME.get(name)
            if kind is None:
                raise ConfigError(f"unknown entity kind {name!r}")
            if self.biome not in kind.biomes and dens > 0:
                raise ConfigError(f"{name} does not occur in biome {self.biome}")
            if dens < 0:
                raise ConfigError(f"negative density for {name}")
        free = self.width * self.height * (1.0 - self.rock_density) - 1
        if sum(self.entity_densities.values()) >= free:
            raise ConfigError("entity densities exceed the free cells of the grid")

    @property
    def view_size(self) -> int:
        return 2 * self.view_radius + 1

    def with_seed(self, seed: int) -> "WorldConfig":
        return WorldConfig(self.width, self.height, self.biome, dict(self.entity_densities),
                           self.rock_density, self.view_radius, self.max_episode_steps, seed)

    def to_text(self) -> str:
        """Canonical ``key=value`` form (seed excluded); round-trips via ``from_text``."""
        lines = [f"width={self.width}", f"height={self.height}", f"biome={self.biome}",
                 f"rock_density={self.rock_density!r}", f"view_radius={self.view_radius}",
                 f"max_episode_steps={self.max_episode_steps}"]
        lines += [f"density.{k}={v!r}" for k, v in sorted(self.entity_densities.items())]
        return "\n".join(lines)

    @classmethod
    def from_text(cls, text: str) -> "WorldConfig":
        kv = dict(line.split("=", 1) for line in text.splitlines())
        dens = {k[len("density."):]: float(v) for k, v in kv.items() if k.startswith("density.")}
        return cls(int(kv["width"]), int(kv["height"]), kv["biome"], dens,
                   float(kv["rock_density"]), int(kv["view_radius"]), int(kv["max_episode_steps"]))


@dataclass
class WorldState:
    config: WorldConfig
    terrain: np.ndarray      # int8 [H, W]
    ent_grid: np.ndarray     # int32 [H, W], -1 or entity index
    ent_kind: np.ndarray     # int32 [n]
    ent_pos: np.ndarray      # int32 [n, 2] as (x, y)
    ent_alive: np.ndarray    # uint8 [n]
    agent: np.ndarray        # int64 [x, y, facing]
    step_count: int = 0
    rng_state: int = 0

    def copy(self) -> "WorldState":
        return WorldState(self.config, self.terrain, self.ent_grid.copy(), self.ent_kind,
                          self.ent_pos.copy(), self.ent_alive.copy(), self.agent.copy(),
                          self.step_count, self.rng_state)

    @property
    def terminated(self) -> bool:
        return self.step_count >= self.config.max_episode_steps

    @property
    def entities(self) -> list[tuple[int, tuple[int, int], bool]]:
        return [(int(k), (int(p[0]), int(p[1])), bool(a))
                for k, p, a in zip(self.ent_kind, self.ent_pos, self.ent_alive)]

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.terrain, self.ent_grid, self.ent_kind, self.ent_pos, self.ent_alive, self.agent):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(f"{self.step_count}:{self.rng_state}".encode())
        return h.hexdigest()


@dataclass
class Observation:
    view: np.ndarray   # uint8 [C, 2r+1, 2r+1]
    extra: np.ndarray  # float64 [N_EXTRA]


N_EXTRA = 2 + 4 + 9


def derive_seed(*parts: int) -> int:
    """Mix integers into a 64-bit seed (stable across platforms)."""
    state = 0x243F6A8885A308D3
    for p in parts:
        state, z = kernels.splitmix64((state ^ (int(p) & 0xFFFFFFFFFFFFFFFF)) & 0xFFFFFFFFFFFFFFFF)
        state = z
    return state


def generate_world(config: WorldConfig) -> WorldState:
    """Draw terrain, entities and the agent pose deterministically from ``config.seed``."""
    rng = np.random.default_rng(derive_seed(config.seed, 0x5EED))
    h, w = config.height, config.width
    terrain = np.full((h, w), TERRAIN_FLOOR, dtype=np.int8)
    if config.rock_density > 0:
        terrain[rng.random((h, w)) < config.rock_density] = TERRAIN_ROCK

    counts = []
    for kind in ENTITY_KINDS:
        dens = config.entity_densities.get(kind.name, 0.0)
        if dens <= 0:
            continue
        counts.append((kind.id, max(1, int(rng.poisson(dens)))))
    free = np.flatnonzero(terrain.ravel() == TERRAIN_FLOOR)
    n_ent = sum(c for _, c in counts)
    if n_ent + 1 > free.size:
        raise ConfigError("not enough free cells to place entities and agent")
    cells = rng.choice(free, size=n_ent + 1, replace=False)

    ent_kind = np.concatenate([np.full(c, k, dtype=np.int32) for k, c in counts]) if counts \
        else np.zeros(0, dtype=np.int32)
    ent_pos = np.stack([cells[1:] % w, cells[1:] // w], axis=1).astype(np.int32) if n_ent \
        else np.zeros((0, 2), dtype=np.int32)
    ent_grid = np.full((h, w), -1, dtype=np.int32)
    ent_grid[ent_pos[:, 1], ent_pos[:, 0]] = np.arange(n_ent, dtype=np.int32)
    agent = np.array([cells[0] % w, cells[0] // w, rng.integers(4)], dtype=np.int64)
    return WorldState(config, terrain, ent_grid, ent_kind, ent_pos,
                      np.ones(n_ent, dtype=np.uint8), agent, 0,
                      derive_seed(config.seed, 0x40B5))


def step_inplace(state: WorldState, action: int) -> list[int]:
    """Advance ``state`` by one action; returns the goal ids achieved."""
    if state.terminated:
        raise ContractError("episode already terminated")
    if not 0 <= action < N_ACTIONS:
        raise ContractError(f"action {action} is not executable")
    idx, state.rng_state = kernels.world_step(
        state.terrain, state.ent_grid, state.ent_kind, state.ent_pos, state.ent_alive,
        MOB_TABLE, state.agent, int(action), state.rng_state)
    state.step_count += 1
    return [int(state.ent_kind[idx])] if idx >= 0 else []


def step(state: WorldState, action: int) -> tuple[WorldState, Observation, list[Goal]]:
    """Value-semantics step: ``state`` is left untouched."""
    nxt = state.copy()
    achieved = step_inplace(nxt, action)
    return nxt, render_observation(nxt), [GOALS[k] for k in achieved]


def extra_features(state: WorldState, out: np.ndarray | None = None) -> np.ndarray:
    """Normalized position, facing one-hot and 3x3 neighbourhood codes.

    Codes: 0 free floor, 0.5 occupied by an entity, 1 rock or off-map.
    """
    if out is None:
        out = np.zeros(N_EXTRA)
    else:
        out[:] = 0.0
    cfg = state.config
    x, y, facing = (int(v) for v in state.agent)
    out[0] = x / (cfg.width - 1)
    out[1] = y / (cfg.height - 1)
    out[2 + facing] = 1.0
    k = 6
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            cx, cy = x + dx, y + dy
            if not (0 <= cx < cfg.width and 0 <= cy < cfg.height) or state.terrain[cy, cx] != TERRAIN_FLOOR:
                out[k] = 1.0
            elif state.ent_grid[cy, cx] >= 0:
                out[k] = 0.5
            k += 1
    return out


def render_view(state: WorldState, out: np.ndarray | None = None) -> np.ndarray:
    size = state.config.view_size
    if out is None:
        out = np.empty((N_CHANNELS, size, size), dtype=np.uint8)
    kernels.render_view(state.terrain, state.ent_grid, state.ent_kind,
                        int(state.agent[0]), int(state.agent[1]), int(state.agent[2]),
                        state.config.view_radius, N_TERRAIN, out)
    return out


def render_observation(state: WorldState) -> Observation:
    return Observation(render_view(state), extra_features(state))


def visible_entities(state: WorldState) -> list[int]:
    """Indices of alive entities inside the agent's view window."""
    r = state.config.view_radius
    x, y = int(state.agent[0]), int(state.agent[1])
    d = np.maximum(np.abs(state.ent_pos[:, 0] - x), np.abs(state.ent_pos[:, 1] - y))
    return np.flatnonzero((d <= r) & (state.ent_alive > 0)).tolist()
