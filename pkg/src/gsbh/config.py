"""Flat ``key=value`` run configuration with ``world.``, ``model.``, ``train.``
and ``eval.`` namespaces."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

from gsbh import world as W
from gsbh.errors import ConfigError
from gsbh.model import ModelConfig
from gsbh.trainer import TrainConfig


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _int_list(s: str) -> tuple[int, ...]:
    out = []
    for part in s.split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise ValueError("empty list")
    return tuple(out)


def _biome(s: str) -> str:
    if s not in W.BIOMES:
        raise ValueError(f"unknown biome {s!r} (choose from {', '.join(W.BIOMES)})")
    return s


def _optional_int(s: str):
    return None if s.strip().lower() in ("", "auto", "none") else int(s)


def _optional_float(s: str):
    return None if s.strip().lower() in ("", "auto", "none") else float(s)


# key -> (parser, default, help)
KEYS: dict[str, tuple] = {
    "world.width": (int, 32, "grid width in cells"),
    "world.height": (int, 32, "grid height in cells"),
    "world.biome": (_biome, "meadow", "meadow | grove | tundra"),
    "world.view_radius": (int, 4, "ego window radius (window side = 2r+1)"),
    "world.max_episode_steps": (_optional_int, None, "episode cap; auto = 200 meadow/tundra, 100 grove"),
    "world.rock_density": (_optional_float, None, "fraction of rock cells; auto = biome default"),
    "world.collect_episodes": (int, 6000, "proxy episodes rolled out by `collect`"),
    "world.balance": (_bool, True, "cap per-goal trajectory counts at the rarest goal"),
    "model.channels": (_int_list, (16, 32, 32), "channels per backbone stage"),
    "model.blocks_per_stage": (int, 2, "g-conv blocks per stage"),
    "model.goal_dim": (int, 32, "goal embedding width"),
    "model.goal_hidden": (int, 32, "hidden width of each block's goal branch"),
    "model.action_dim": (int, 16, "previous-action embedding width"),
    "model.horizon_dim": (int, 16, "horizon-bin embedding width"),
    "model.fusion_hidden": (int, 256, "fusion FFN hidden width"),
    "model.fusion_dim": (int, 128, "fused feature width"),
    "model.policy_hidden": (int, 128, "action head hidden width"),
    "train.batch_size": (int, 32, "minibatch size"),
    "train.total_steps": (int, 20000, "optimizer updates"),
    "train.warmup_steps": (int, 1000, "linear warmup updates"),
    "train.base_lr": (float, 1e-4, "peak learning rate"),
    "train.weight_decay": (float, 1e-4, "decoupled weight decay"),
    "train.eval_every": (int, 5000, "checkpoint interval in updates"),
    "train.use_gsb": (_bool, True, "goal-gated backbone (false: goal enters at fusion only)"),
    "train.use_horizon_loss": (_bool, True, "train the horizon head"),
    "train.use_horizon_conditioning": (_bool, True, "feed a horizon bin to the action head"),
    "train.use_extra_obs": (_bool, True, "feed position/facing/neighbourhood features"),
    "train.use_goal_condition": (_bool, True, "feed the goal id (false: zeroed everywhere)"),
    "eval.c": (int, 3, "horizon shrink applied to the predicted bin"),
    "eval.episodes": (int, 200, "episodes per goal"),
    "eval.seeds": (int, 10, "evaluation seed groups (mean +/- std across them)"),
    "eval.c_values": (_int_list, tuple(range(15)), "values swept by `sweep-c`, e.g. 0-14"),
    "eval.cap": (_optional_int, None, "episode cap override; auto = world cap"),
    "eval.train_seeds": (_int_list, (0,), "training seeds used by `ablate`"),
}

DENSITY_PREFIX = "world.density."


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)
    densities: dict[str, float] = field(default_factory=dict)

    def __getitem__(self, key):
        if key in self.values:
            return self.values[key]
        return KEYS[key][1]

    def world(self, seed: int = 0) -> W.WorldConfig:
        biome = self["world.biome"]
        dens = dict(W.DEFAULT_DENSITIES[biome])
        dens.update(self.densities)
        return W.WorldConfig(self["world.width"], self["world.height"], biome, dens,
                             self["world.rock_density"], self["world.view_radius"],
                             self["world.max_episode_steps"], seed)

    def model(self) -> ModelConfig:
        kw = {k.split(".", 1)[1]: self[k] for k in KEYS if k.startswith("model.")}
        return ModelConfig(view_size=2 * self["world.view_radius"] + 1, **kw)

    def train(self, seed: int = 0, **overrides) -> TrainConfig:
        kw = {k.split(".", 1)[1]: self[k] for k in KEYS if k.startswith("train.")}
        kw.update(overrides)
        return TrainConfig(seed=seed, **kw)

    def canonical(self) -> str:
        lines = [f"{k}={_render(self[k])}" for k in sorted(KEYS)]
        lines += [f"{DENSITY_PREFIX}{k}={v!r}" for k, v in sorted(self.densities.items())]
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def with_values(self, **kv) -> "RunConfig":
        vals = dict(self.values)
        vals.update({k.replace("__", "."): v for k, v in kv.items()})
        return replace(self, values=vals)


def _render(v) -> str:
    if isinstance(v, tuple):
        return ",".join(map(str, v))
    if v is None:
        return "auto"
    return str(v).lower() if isinstance(v, bool) else repr(v) if isinstance(v, float) else str(v)


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key.startswith(DENSITY_PREFIX):
                kind = key[len(DENSITY_PREFIX):]
                if kind not in W.KIND_BY_NAME:
                    raise ValueError(f"unknown entity kind {kind!r}")
                cfg.densities[kind] = float(value)
                continue
            if key not in KEYS:
                raise ValueError(f"unknown key {key!r}")
            cfg.values[key] = KEYS[key][0](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    try:
        cfg.world()
        cfg.train()
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return cfg


def parse_config(path) -> RunConfig:
    """Read and validate a config file; an empty file yields all defaults."""
    if path is None:
        return RunConfig()
    return parse_config_text(Path(path).read_text(encoding="utf-8"), str(path))


def help_text() -> str:
    lines = ["Configuration keys (key=value, '#' starts a comment):", ""]
    for key, (_, default, doc) in KEYS.items():
        lines.append(f"  {key:<34} default {_render(default):<12} {doc}")
    lines.append(f"  {DENSITY_PREFIX}<kind>{'':<14} default per biome  expected count of an entity kind")
    lines.append("")
    lines.append("Entity kinds: " + ", ".join(k.name for k in W.ENTITY_KINDS))
    return "\n".join(lines)
