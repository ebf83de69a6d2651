"""Lightweight verifier: encode the observation, fuse with the planning
context, and predict a closed-loop reference action.

The observation encoder is a frozen random-feature map (affine + tanh) and is
never touched by training; only the fusion layer and the prediction head are
trainable. Training minimizes mean L1 loss against expert actions with plain
mini-batch gradient descent (subgradient 0 at ties).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import (Action, ActionSpace, ConfigurationError, ContractViolation,
                   Observation, PlanningContext)
from .env import (EpisodeConfig, TaskSpec, ToyEnv, expert_action,
                  render_observation)

PARAMS_FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class VisualFeature:
    vector: np.ndarray


@dataclass(frozen=True, eq=False)
class FusedFeature:
    vector: np.ndarray


@dataclass(frozen=True, eq=False)
class ObservationEncoder:
    """Frozen affine-plus-tanh map from observation vectors to visual features."""

    weights: np.ndarray
    bias: np.ndarray

    #: Shifted sharp-ramp bank: per input coordinate, one tanh ramp centered at
    #: each shift. Pairs of these act as box-indicator building blocks, letting
    #: the trainable layer isolate small neighborhoods (e.g. "offset near zero")
    #: that smooth random features cannot carve out.
    RAMP_SHIFTS = (-0.12, -0.05, 0.05, 0.12)
    RAMP_SCALE = 40.0

    @classmethod
    def create(cls, obs_dim: int, width: int, seed: int = 0) -> "ObservationEncoder":
        """Frozen feature bank: a scaled-identity block keeping a near-linear
        copy of the observation, a sharp shifted-ramp block per coordinate, and
        random tanh features filling the remaining rows."""
        n_ramp = obs_dim * len(cls.RAMP_SHIFTS)
        if width < obs_dim + n_ramp:
            raise ConfigurationError(
                f"encoder width must be >= {obs_dim + n_ramp} for obs dim {obs_dim}")
        rng = np.random.default_rng(seed)
        w = rng.normal(0.0, 1.0 / np.sqrt(obs_dim), size=(width, obs_dim))
        b = rng.normal(0.0, 0.1, size=width)
        w[:obs_dim] = 0.5 * np.eye(obs_dim)
        b[:obs_dim] = 0.0
        row = obs_dim
        for i in range(obs_dim):
            for shift in cls.RAMP_SHIFTS:
                w[row] = 0.0
                w[row, i] = cls.RAMP_SCALE
                b[row] = -cls.RAMP_SCALE * shift
                row += 1
        return cls(weights=w, bias=b)

    @property
    def width(self) -> int:
        return self.weights.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.weights.shape[1]

    def encode(self, obs: Observation) -> VisualFeature:
        if obs.features.size != self.obs_dim:
            raise ContractViolation(
                f"observation width {obs.features.size} != encoder input {self.obs_dim}")
        return VisualFeature(vector=np.tanh(self.weights @ obs.features + self.bias))

    def encode_batch(self, obs_matrix: np.ndarray) -> np.ndarray:
        return np.tanh(obs_matrix @ self.weights.T + self.bias)


@dataclass(eq=False)
class VerifierParams:
    """Trainable parameters: fusion layer and prediction head."""

    w_fuse: np.ndarray  # (hidden, visual_width + context_width)
    b_fuse: np.ndarray  # (hidden,)
    w_head: np.ndarray  # (action_dim, hidden)
    b_head: np.ndarray  # (action_dim,)

    @classmethod
    def create(cls, visual_width: int, context_width: int, hidden_width: int,
               action_dim: int, seed: int = 1) -> "VerifierParams":
        rng = np.random.default_rng(seed)
        in_w = visual_width + context_width
        return cls(
            w_fuse=rng.normal(0.0, 1.0 / np.sqrt(in_w), size=(hidden_width, in_w)),
            b_fuse=np.zeros(hidden_width),
            w_head=rng.normal(0.0, 1.0 / np.sqrt(hidden_width), size=(action_dim, hidden_width)),
            b_head=np.zeros(action_dim),
        )

    @property
    def fused_width(self) -> int:
        return self.w_fuse.shape[0]

    @property
    def input_width(self) -> int:
        return self.w_fuse.shape[1]

    @property
    def action_dim(self) -> int:
        return self.w_head.shape[0]

    def copy(self) -> "VerifierParams":
        return VerifierParams(self.w_fuse.copy(), self.b_fuse.copy(),
                              self.w_head.copy(), self.b_head.copy())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w_fuse.ravel(), self.b_fuse,
                               self.w_head.ravel(), self.b_head])

    def with_flat(self, flat: np.ndarray) -> "VerifierParams":
        out = self.copy()
        i = 0
        for arr in (out.w_fuse, out.b_fuse, out.w_head, out.b_head):
            arr[...] = flat[i:i + arr.size].reshape(arr.shape)
            i += arr.size
        return out


def fuse(visual: VisualFeature, context: PlanningContext,
         params: VerifierParams) -> FusedFeature:
    """Concatenate visual and context vectors, apply the fusion layer."""
    x = np.concatenate([visual.vector, context.vector])
    if x.size != params.input_width:
        raise ContractViolation(
            f"fusion input width {x.size} != params width {params.input_width}")
    return FusedFeature(vector=np.tanh(params.w_fuse @ x + params.b_fuse))


def predict_reference(fused: FusedFeature, params: VerifierParams,
                      space: ActionSpace) -> Action:
    """Head affine map to a reference action, clamped into the action space."""
    if fused.vector.size != params.fused_width:
        raise ContractViolation("fused feature width mismatch")
    return space.action(params.w_head @ fused.vector + params.b_head)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class VerifierSample:
    observation: Observation
    context: PlanningContext
    target: Action


@dataclass(eq=False)
class TrainReport:
    losses: list  # full-dataset mean L1 loss before training, then per epoch
    params: VerifierParams


def _as_matrices(samples):
    obs = np.stack([s.observation.features for s in samples])
    ctx = np.stack([s.context.vector for s in samples])
    tgt = np.stack([s.target.values for s in samples])
    return obs, ctx, tgt


def loss_and_grads(params: VerifierParams, encoder: ObservationEncoder,
                   obs: np.ndarray, ctx: np.ndarray, tgt: np.ndarray):
    """Mean per-sample L1 loss and analytic gradients (tie subgradient 0)."""
    n = obs.shape[0]
    e = encoder.encode_batch(obs)
    x = np.concatenate([e, ctx], axis=1)
    z = np.tanh(x @ params.w_fuse.T + params.b_fuse)
    pred = z @ params.w_head.T + params.b_head
    diff = pred - tgt
    loss = float(np.abs(diff).sum() / n)
    g = np.sign(diff) / n
    d_w_head = g.T @ z
    d_b_head = g.sum(axis=0)
    dz = g @ params.w_head
    dpre = dz * (1.0 - z * z)
    d_w_fuse = dpre.T @ x
    d_b_fuse = dpre.sum(axis=0)
    grads = VerifierParams(d_w_fuse, d_b_fuse, d_w_head, d_b_head)
    return loss, grads


def mean_l1_loss(params: VerifierParams, encoder: ObservationEncoder,
                 obs: np.ndarray, ctx: np.ndarray, tgt: np.ndarray) -> float:
    loss, _ = loss_and_grads(params, encoder, obs, ctx, tgt)
    return loss


def train_verifier(samples, encoder: ObservationEncoder, *, epochs: int = 150,
                   learning_rate: float = 0.05, batch_size: int = 64,
                   hidden_width: int = 64, seed: int = 1,
                   init: VerifierParams | None = None) -> TrainReport:
    """Mini-batch gradient descent on the mean L1 objective.

    The encoder is read-only throughout; returns the loss trajectory
    (entry 0 = loss before any update) and the trained parameters.
    """
    if not samples:
        raise ConfigurationError("training requires a nonempty sample list")
    obs, ctx, tgt = _as_matrices(samples)
    params = (init.copy() if init is not None else
              VerifierParams.create(encoder.width, ctx.shape[1], hidden_width,
                                    tgt.shape[1], seed=seed))
    rng = np.random.default_rng(seed)
    n = obs.shape[0]
    losses = [mean_l1_loss(params, encoder, obs, ctx, tgt)]
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            _, grads = loss_and_grads(params, encoder, obs[idx], ctx[idx], tgt[idx])
            params.w_fuse -= learning_rate * grads.w_fuse
            params.b_fuse -= learning_rate * grads.b_fuse
            params.w_head -= learning_rate * grads.w_head
            params.b_head -= learning_rate * grads.b_head
        losses.append(mean_l1_loss(params, encoder, obs, ctx, tgt))
    return TrainReport(losses=losses, params=params)


def build_training_set(config: EpisodeConfig, planner, episodes: int, seed: int,
                       boundaries: str = "all"):
    """Collect (observation, context, expert target) triples from open-loop runs.

    Chunks execute fully open-loop under the configured disturbances; at each
    within-chunk step t in 1..K-1 the pre-step observation is paired with the
    chunk's context and the expert action at the true current state. With
    boundaries="first" only each episode's first chunk contributes samples.
    """
    if episodes < 1:
        raise ConfigurationError("episodes must be >= 1")
    if boundaries not in ("all", "first"):
        raise ConfigurationError(f"boundaries must be 'all' or 'first', got {boundaries!r}")
    geom = config.geometry
    samples = []
    for ep in range(episodes):
        env = ToyEnv(config, seed=seed + ep)
        obs, prop = env.reset()
        t = 0
        while t < config.horizon and not env.success():
            out = planner.plan(obs, TaskSpec(goal=env.state.goal_pos), prop,
                               max_len=config.horizon - t)
            for i, action in enumerate(out.chunk.actions):
                if env.success():
                    break
                if i >= 1:
                    samples.append(VerifierSample(
                        observation=render_observation(env.state),
                        context=out.context,
                        target=expert_action(env.state, geom)))
                obs, prop = env.step(action)
                t += 1
            if boundaries == "first":
                break
    return samples


# ---------------------------------------------------------------------------
# Inference-time policies handed to the controller
# ---------------------------------------------------------------------------


class TrainedVerifier:
    """Bundles the frozen encoder and trained parameters for episode runs."""

    def __init__(self, encoder: ObservationEncoder, params: VerifierParams,
                 space: ActionSpace):
        self.encoder = encoder
        self.params = params
        self.space = space

    def reference(self, obs: Observation, context: PlanningContext, true_state=None,
                  zero_context: bool = False, zero_observation: bool = False) -> Action:
        visual = self.encoder.encode(obs)
        if zero_observation:
            visual = VisualFeature(vector=np.zeros_like(visual.vector))
        if zero_context:
            context = PlanningContext(vector=np.zeros_like(context.vector),
                                      planned_at=context.planned_at)
        fused = fuse(visual, context, self.params)
        return predict_reference(fused, self.params, self.space)


class OracleVerifier:
    """Reference = expert action at the true state; isolates mechanism from learning."""

    def __init__(self, geometry):
        self.geom = geometry

    def reference(self, obs, context, true_state=None, **_ignored) -> Action:
        if true_state is None:
            raise ConfigurationError("oracle verifier needs the true environment state")
        return expert_action(true_state, self.geom)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_verifier(path, encoder: ObservationEncoder, params: VerifierParams) -> None:
    """Write encoder + params to a versioned JSON file (exact float round-trip)."""
    payload = {
        "version": PARAMS_FORMAT_VERSION,
        "obs_dim": encoder.obs_dim,
        "visual_width": encoder.width,
        "context_width": params.input_width - encoder.width,
        "hidden_width": params.fused_width,
        "action_dim": params.action_dim,
        "encoder_weights": encoder.weights.tolist(),
        "encoder_bias": encoder.bias.tolist(),
        "w_fuse": params.w_fuse.tolist(),
        "b_fuse": params.b_fuse.tolist(),
        "w_head": params.w_head.tolist(),
        "b_head": params.b_head.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_verifier(path):
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("version") != PARAMS_FORMAT_VERSION:
        raise ConfigurationError(
            f"unsupported verifier file version {payload.get('version')!r}")
    encoder = ObservationEncoder(weights=np.asarray(payload["encoder_weights"]),
                                 bias=np.asarray(payload["encoder_bias"]))
    params = VerifierParams(w_fuse=np.asarray(payload["w_fuse"]),
                            b_fuse=np.asarray(payload["b_fuse"]),
                            w_head=np.asarray(payload["w_head"]),
                            b_head=np.asarray(payload["b_head"]))
    return encoder, params
