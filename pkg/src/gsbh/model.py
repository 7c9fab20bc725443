"""Policy network: goal-sensitive conv backbone, multimodal fusion, horizon
head and horizon-conditioned action head."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from gsbh import tensor as T
from gsbh import world as W
from gsbh.demos import N_HORIZON_BINS
from gsbh.errors import ContractError, ShapeError
from gsbh.tensor import Tensor


@dataclass
class ModelConfig:
    in_channels: int = W.N_CHANNELS
    view_size: int = 9
    n_extra: int = W.N_EXTRA
    n_goals: int = W.N_GOALS
    channels: tuple[int, ...] = (16, 32, 32)
    blocks_per_stage: int = 2
    goal_dim: int = 32
    goal_hidden: int = 32
    action_dim: int = 16
    horizon_dim: int = 16
    fusion_hidden: int = 256
    fusion_dim: int = 128
    policy_hidden: int = 128
    n_bins: int = N_HORIZON_BINS
    n_actions: int = W.N_ACTIONS
    use_gsb: bool = True
    use_horizon_conditioning: bool = True
    use_extra_obs: bool = True
    use_goal_condition: bool = True

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)

    @property
    def spatial_sizes(self) -> list[int]:
        sizes, s = [], self.view_size
        for _ in self.channels:
            s = (s + 2 - 3) // 2 + 1
            sizes.append(s)
        return sizes

    @property
    def visual_dim(self) -> int:
        return self.channels[-1] * self.spatial_sizes[-1] ** 2

    @property
    def fusion_in(self) -> int:
        return self.visual_dim + self.n_extra + self.goal_dim + self.action_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class GConvBlockParams:
    conv1_w: Tensor
    conv1_b: Tensor
    conv2_w: Tensor
    conv2_b: Tensor
    fc1_w: Tensor | None = None
    fc1_b: Tensor | None = None
    fc2_w: Tensor | None = None
    fc2_b: Tensor | None = None


@dataclass
class PolicyParams:
    config: ModelConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.config, {k: Tensor(v.data.copy(), True, k) for k, v in self.tensors.items()})

    def block(self, stage: int, index: int) -> GConvBlockParams:
        p = f"stage{stage}.block{index}."
        get = self.tensors.get
        return GConvBlockParams(get(p + "conv1.w"), get(p + "conv1.b"), get(p + "conv2.w"), get(p + "conv2.b"),
                                get(p + "fc1.w"), get(p + "fc1.b"), get(p + "fc2.w"), get(p + "fc2.b"))

    def horizon_head_names(self) -> list[str]:
        return [k for k in self.tensors if k.startswith("horizon_head.")]


def init_params(config: ModelConfig, seed: int = 0) -> PolicyParams:
    """Uniform fan-in init for conv/linear layers, unit normal for embeddings."""
    rng = np.random.default_rng(W.derive_seed(seed, 0x1A17))
    tensors: dict[str, Tensor] = {}

    def dense(name, shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        tensors[name + ".w"] = Tensor(rng.uniform(-bound, bound, shape), True, name + ".w")
        tensors[name + ".b"] = Tensor(rng.uniform(-bound, bound, shape[0]), True, name + ".b")

    def embed(name, shape):
        tensors[name] = Tensor(rng.standard_normal(shape), True, name)

    c_prev = config.in_channels
    for s, c in enumerate(config.channels):
        dense(f"stage{s}.stem", (c, c_prev, 3, 3), c_prev * 9)
        for b in range(config.blocks_per_stage):
            p = f"stage{s}.block{b}."
            dense(p + "conv1", (c, c, 3, 3), c * 9)
            dense(p + "conv2", (c, c, 3, 3), c * 9)
            if config.use_gsb:
                dense(p + "fc1", (config.goal_hidden, config.goal_dim), config.goal_dim)
                dense(p + "fc2", (c, config.goal_hidden), config.goal_hidden)
        c_prev = c
    if config.use_goal_condition:
        embed("goal_embed", (config.n_goals, config.goal_dim))
    embed("action_embed", (config.n_actions + 1, config.action_dim))
    if config.use_horizon_conditioning:
        embed("horizon_embed", (config.n_bins, config.horizon_dim))
    dense("fusion.l1", (config.fusion_hidden, config.fusion_in), config.fusion_in)
    dense("fusion.l2", (config.fusion_dim, config.fusion_hidden), config.fusion_hidden)
    dense("horizon_head", (config.n_bins, config.fusion_dim), config.fusion_dim)
    p_in = config.fusion_dim + (config.horizon_dim if config.use_horizon_conditioning else 0)
    dense("policy.l1", (config.policy_hidden, p_in), p_in)
    dense("policy.l2", (config.n_actions, config.policy_hidden), config.policy_hidden)
    return PolicyParams(config, tensors)


# -- forward pieces ---------------------------------------------------------------

def gconv_block_forward(x: Tensor, g: Tensor, p: GConvBlockParams) -> Tensor:
    """Residual conv block whose output is gated channel-wise by the goal.

    With no goal branch in ``p`` this is a plain residual block.
    """
    c = p.conv1_w.shape[0]
    if x.shape[1] != c or p.conv2_w.shape[:2] != (c, c):
        raise ShapeError(f"g-conv block expects {c} channels, got input {x.shape}")
    xh = T.relu(T.conv2d(T.relu(T.conv2d(x, p.conv1_w, p.conv1_b, 1, 1)), p.conv2_w, p.conv2_b, 1, 1))
    if p.fc1_w is None:
        return T.add(xh, x)
    gh = T.linear(T.relu(T.linear(g, p.fc1_w, p.fc1_b)), p.fc2_w, p.fc2_b)
    gate = T.reshape(T.sigmoid(gh), (x.shape[0], c, 1, 1))
    return T.add(T.mul(gate, xh), x)


def gsb_forward(view: Tensor, g_emb: Tensor, params: PolicyParams) -> Tensor:
    """Downsampling stem plus g-conv blocks per stage; returns flattened ReLU features."""
    cfg = params.config
    x = view
    for s in range(len(cfg.channels)):
        x = T.conv2d(x, params[f"stage{s}.stem.w"], params[f"stage{s}.stem.b"], 2, 1)
        for b in range(cfg.blocks_per_stage):
            x = gconv_block_forward(x, g_emb, params.block(s, b))
    return T.relu(T.reshape(x, (x.shape[0], -1)))


def goal_embedding(goals, params: PolicyParams) -> Tensor:
    goals = np.asarray(goals, dtype=np.int64)
    if not params.config.use_goal_condition:
        return Tensor(np.zeros((goals.shape[0], params.config.goal_dim)))
    return T.embedding(params["goal_embed"], goals)


def fuse(I_g: Tensor, o_E: Tensor, g_emb: Tensor, prev_a_emb: Tensor, params: PolicyParams) -> Tensor:
    """FFN over the concatenation [visual, extra obs, goal, previous action]."""
    n = I_g.shape[0]
    if not (o_E.shape[0] == g_emb.shape[0] == prev_a_emb.shape[0] == n):
        raise ShapeError("fuse: batch dimensions disagree")
    x = T.concat([I_g, o_E, g_emb, prev_a_emb], axis=1)
    h = T.relu(T.linear(x, params["fusion.l1.w"], params["fusion.l1.b"]))
    return T.relu(T.linear(h, params["fusion.l2.w"], params["fusion.l2.b"]))


def features(params: PolicyParams, views, extras, goals, prev_actions) -> Tensor:
    """Fused per-step representation ``f_t`` for a batch of observations."""
    cfg = params.config
    g = goal_embedding(goals, params)
    v = views if isinstance(views, Tensor) else Tensor(views)
    I_g = gsb_forward(v, g, params)
    extras = np.asarray(extras, dtype=np.float64)
    o_E = Tensor(extras if cfg.use_extra_obs else np.zeros_like(extras))
    a = T.embedding(params["action_embed"], prev_actions)
    return fuse(I_g, o_E, g, a, params)


def horizon_logits(f_t: Tensor, params: PolicyParams) -> Tensor:
    return T.linear(f_t, params["horizon_head.w"], params["horizon_head.b"])


def predict_horizon(f_t: Tensor, params: PolicyParams) -> tuple[np.ndarray, np.ndarray]:
    """Bin probabilities and the most likely bin (ties go to the smaller bin)."""
    probs = T.softmax(horizon_logits(f_t, params).data)
    return probs, np.argmax(probs, axis=1)


def adaptive_horizon(h_pred, c: int):
    """Shrink a predicted horizon bin by ``c``, floored at zero."""
    if np.isscalar(h_pred):
        return max(int(h_pred) - c, 0)
    return np.maximum(np.asarray(h_pred, dtype=np.int64) - c, 0)


def policy_logits(f_t: Tensor, h_bin, params: PolicyParams) -> Tensor:
    """Action logits conditioned on features and a horizon bin (scalar or per row)."""
    cfg = params.config
    n = f_t.shape[0]
    h = np.broadcast_to(np.asarray(h_bin, dtype=np.int64), (n,))
    if h.size and (h.min() < 0 or h.max() >= cfg.n_bins):
        raise ContractError(f"horizon bin outside [0, {cfg.n_bins})")
    x = f_t
    if cfg.use_horizon_conditioning:
        x = T.concat([f_t, T.embedding(params["horizon_embed"], h)], axis=1)
    x = T.relu(T.linear(x, params["policy.l1.w"], params["policy.l1.b"]))
    return T.linear(x, params["policy.l2.w"], params["policy.l2.b"])


@dataclass
class LossBreakdown:
    action_loss: Tensor
    horizon_loss: Tensor | None
    total: Tensor

    def values(self) -> tuple[float, float | None, float]:
        h = None if self.horizon_loss is None else float(self.horizon_loss.data)
        return float(self.action_loss.data), h, float(self.total.data)


def compute_loss(batch: dict, params: PolicyParams, use_horizon_loss: bool = True) -> LossBreakdown:
    """Behavior-cloning loss; the action head sees the demonstration's horizon bin."""
    if len(batch["actions"]) == 0:
        raise ContractError("empty batch")
    f_t = features(params, batch["views"], batch["extras"], batch["goals"], batch["prev_actions"])
    l_a = T.softmax_cross_entropy(policy_logits(f_t, batch["horizon_bins"], params), batch["actions"])
    if not use_horizon_loss:
        return LossBreakdown(l_a, None, l_a)
    l_h = T.softmax_cross_entropy(horizon_logits(f_t, params), batch["horizon_bins"])
    return LossBreakdown(l_a, l_h, T.add(l_a, l_h))


def act_distribution(params: PolicyParams, views, extras, goals, prev_actions, c: int) -> np.ndarray:
    """Action probabilities at rollout time, conditioned on the shrunken predicted horizon."""
    with T.no_grad():
        f_t = features(params, views, extras, goals, prev_actions)
        if params.config.use_horizon_conditioning:
            _, h_pred = predict_horizon(f_t, params)
            h_bin = adaptive_horizon(h_pred, c)
        else:
            h_bin = 0
        return T.softmax(policy_logits(f_t, h_bin, params).data)
