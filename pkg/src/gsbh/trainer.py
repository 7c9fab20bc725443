"""Behavior-cloning training loop."""
from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from gsbh import model as M
from gsbh.checkpoint import load_checkpoint, save_checkpoint
from gsbh.demos import StepArrays, Trajectory
from gsbh.errors import ConfigError
from gsbh.optim import OptimizerState, adamw_step, lr_schedule

log = logging.getLogger(__name__)

ABLATION_FLAGS = ("use_gsb", "use_horizon_loss", "use_horizon_conditioning",
                  "use_extra_obs", "use_goal_condition")


@dataclass
class TrainConfig:
    batch_size: int = 32
    total_steps: int = 20000
    warmup_steps: int = 1000
    base_lr: float = 1e-4
    weight_decay: float = 1e-4
    seed: int = 0
    eval_every: int = 5000
    use_gsb: bool = True
    use_horizon_loss: bool = True
    use_horizon_conditioning: bool = True
    use_extra_obs: bool = True
    use_goal_condition: bool = True

    def __post_init__(self):
        if not 0 < self.warmup_steps < self.total_steps:
            raise ConfigError("need 0 < warmup_steps < total_steps")
        if self.batch_size < 1 or self.eval_every < 1:
            raise ConfigError("batch_size and eval_every must be positive")

    @property
    def flags(self) -> dict[str, bool]:
        return {k: getattr(self, k) for k in ABLATION_FLAGS}


def build_ablation_model(flags: dict, model_config: M.ModelConfig | None = None, seed: int = 0) -> M.PolicyParams:
    """Fresh parameters for an ablation variant.

    ``use_horizon_loss`` is a training-time switch and does not change the
    architecture, so it is ignored here.
    """
    base = model_config or M.ModelConfig()
    arch = {k: bool(v) for k, v in flags.items() if k in ("use_gsb", "use_horizon_conditioning",
                                                        "use_extra_obs", "use_goal_condition")}
    return M.init_params(replace(base, **arch), seed)


def trainable(params: M.PolicyParams, use_horizon_loss: bool) -> dict:
    """Parameters the optimizer updates; the horizon head is frozen without its loss."""
    if use_horizon_loss:
        return dict(params.tensors)
    return {k: v for k, v in params.tensors.items() if not k.startswith("horizon_head.")}


def batch_indices(seed: int, step: int, n: int, batch_size: int) -> np.ndarray:
    """Minibatch for update ``step`` (1-based); depends only on (seed, step)."""
    return np.random.default_rng([seed, step]).integers(0, n, batch_size)


def train(config: TrainConfig, dataset: Sequence[Trajectory] | StepArrays, out_dir,
          model_config: M.ModelConfig | None = None, resume_from=None,
          stop_at: int | None = None) -> tuple[M.PolicyParams, OptimizerState]:
    """Train from scratch (or from ``resume_from``) and write checkpoints + ``loss.csv``.

    ``stop_at`` ends the run early at that update (the schedule still spans
    ``total_steps``); used to produce resumable intermediate checkpoints.
    """
    data = dataset if isinstance(dataset, StepArrays) else (
        StepArrays.from_trajectories(dataset) if len(dataset) else None)
    if data is None or len(data) == 0:
        raise ConfigError("training dataset is empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if resume_from is not None:
        params, state = load_checkpoint(resume_from)
        if state is None:
            raise ConfigError(f"{resume_from} has no optimizer state to resume from")
    else:
        params = build_ablation_model(config.flags, model_config, config.seed)
        state = OptimizerState(config.base_lr, config.weight_decay, config.warmup_steps, config.total_steps)
    opt_params = trainable(params, config.use_horizon_loss)
    end = config.total_steps if stop_at is None else min(stop_at, config.total_steps)

    header = ["step", "action_loss", "horizon_loss", "lr"] if config.use_horizon_loss \
        else ["step", "action_loss", "lr"]
    with open(out / "loss.csv", "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        while state.step < end:
            t = state.step + 1
            lr = lr_schedule(t, state)
            batch = data.batch(batch_indices(config.seed, t, len(data), config.batch_size))
            params.zero_grad()
            loss = M.compute_loss(batch, params, config.use_horizon_loss)
            loss.total.backward()
            adamw_step(opt_params, state, lr)
            la, lh, _ = loss.values()
            row = [t, repr(la)] + ([repr(lh)] if config.use_horizon_loss else []) + [repr(lr)]
            writer.writerow(row)
            if t % config.eval_every == 0 and t != end:
                save_checkpoint(params, state, out / f"checkpoint_{t:07d}.gsbh")
            if t % 1000 == 0:
                log.info("step %d  L_a %.4f  L_h %s  lr %.2e", t, la, "-" if lh is None else f"{lh:.4f}", lr)
    save_checkpoint(params, state, out / "final.gsbh")
    return params, state


def read_loss_log(path) -> dict[str, np.ndarray]:
    with open(path) as f:
        rows = list(csv.reader(f))
    cols = rows[0]
    arr = np.array([[float(v) for v in r] for r in rows[1:]]) if len(rows) > 1 else np.zeros((0, len(cols)))
    return {c: arr[:, i] for i, c in enumerate(cols)}
