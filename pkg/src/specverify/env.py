"""Toy 2-D reach-grasp-place environment with configurable disturbances.

The world is a continuous square. The agent moves in bounded per-step
displacements, can grasp the object when close enough, and succeeds when the
object has been released within a radius of the goal. Disturbances (actuation
noise, object drift, grasp failure) each consume an independent seeded RNG
stream so that toggling one source never shifts the draws of another.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import Action, ActionSpace, ConfigurationError, Observation, ProprioState

GRIPPER_OPEN = 0
GRIPPER_HOLDING = 1

#: Layout of the observation feature vector produced by render_observation:
#: [agent_x, agent_y, object_x, object_y,
#:  object_x - agent_x, object_y - agent_y, gripper_flag]
#: The goal position is deliberately absent: it is task knowledge, carried by
#: the task descriptor given to the planner and by the planning context.
OBS_DIM = 7
PROPRIO_DIM = 3


@dataclass(frozen=True, eq=False)
class TaskSpec:
    """Task descriptor handed to the planner alongside each observation."""

    goal: np.ndarray
    name: str = "pick-place"

    def __post_init__(self):
        object.__setattr__(self, "goal", np.asarray(self.goal, dtype=np.float64))


@dataclass(frozen=True)
class Geometry:
    """World geometry shared by the environment and the nominal planner model."""

    world_size: float = 2.0
    step_bound: float = 0.25
    grasp_radius: float = 0.08
    success_radius: float = 0.1

    def __post_init__(self):
        if self.world_size <= 0 or self.step_bound <= 0:
            raise ConfigurationError("world_size and step_bound must be positive")
        if self.grasp_radius <= 0 or self.success_radius <= 0:
            raise ConfigurationError("grasp_radius and success_radius must be positive")

    def action_space(self) -> ActionSpace:
        b = self.step_bound
        return ActionSpace(lower=[-b, -b, 0.0], upper=[b, b, 1.0])


@dataclass(frozen=True)
class DisturbanceConfig:
    actuation_noise_sigma: float = 0.0
    object_drift_prob: float = 0.0
    object_drift_magnitude: float = 0.0
    grasp_failure_prob: float = 0.0

    def __post_init__(self):
        for name in ("object_drift_prob", "grasp_failure_prob"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise ConfigurationError(f"{name} must lie in [0, 1], got {p}")
        for name in ("actuation_noise_sigma", "object_drift_magnitude"):
            v = getattr(self, name)
            if v < 0:
                raise ConfigurationError(f"{name} must be nonnegative, got {v}")

    @classmethod
    def off(cls) -> "DisturbanceConfig":
        return cls()

    @classmethod
    def moderate(cls) -> "DisturbanceConfig":
        return cls(
            actuation_noise_sigma=0.02,
            object_drift_prob=0.15,
            object_drift_magnitude=0.12,
            grasp_failure_prob=0.2,
        )

    @classmethod
    def from_level(cls, level: str) -> "DisturbanceConfig":
        levels = {"off": cls.off, "moderate": cls.moderate}
        if level not in levels:
            raise ConfigurationError(f"unknown disturbance level {level!r}; options: {sorted(levels)}")
        return levels[level]()


@dataclass(frozen=True)
class EpisodeConfig:
    horizon: int = 40
    geometry: Geometry = field(default_factory=Geometry)
    disturbance: DisturbanceConfig = field(default_factory=DisturbanceConfig)

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigurationError("horizon must be >= 1")


@dataclass(frozen=True, eq=False)
class EnvState:
    agent_pos: np.ndarray
    object_pos: np.ndarray
    goal_pos: np.ndarray
    gripper: int
    step: int

    def __post_init__(self):
        object.__setattr__(self, "agent_pos", np.asarray(self.agent_pos, dtype=np.float64))
        object.__setattr__(self, "object_pos", np.asarray(self.object_pos, dtype=np.float64))
        object.__setattr__(self, "goal_pos", np.asarray(self.goal_pos, dtype=np.float64))

    @property
    def holding(self) -> bool:
        return self.gripper == GRIPPER_HOLDING


def render_observation(state: EnvState) -> Observation:
    """Deterministic feature-vector rendering of a state (see OBS layout above)."""
    feats = np.concatenate([
        state.agent_pos,
        state.object_pos,
        state.object_pos - state.agent_pos,
        [float(state.gripper)],
    ])
    return Observation(features=feats, step=state.step)


def render_proprio(state: EnvState) -> ProprioState:
    return ProprioState(values=np.concatenate([state.agent_pos, [float(state.gripper)]]))


def state_from_observation(obs: Observation, goal: np.ndarray,
                           atol: float = 1e-9) -> EnvState:
    """Reconstruct the full state from an observation vector plus the task goal.

    Raises ContractViolation when the redundant relative-offset entries do not
    match the absolute positions (i.e. the vector is not a valid rendering).
    """
    from .core import ContractViolation

    f = obs.features
    if f.size != OBS_DIM:
        raise ContractViolation(f"observation has {f.size} entries, expected {OBS_DIM}")
    agent, obj = f[0:2], f[2:4]
    goal = np.asarray(goal, dtype=np.float64)
    if not np.allclose(f[4:6], obj - agent, atol=atol):
        raise ContractViolation("observation offsets inconsistent with absolute positions")
    gripper = int(round(f[6]))
    if gripper not in (GRIPPER_OPEN, GRIPPER_HOLDING):
        raise ContractViolation(f"invalid gripper flag {f[6]}")
    if gripper == GRIPPER_HOLDING and not np.allclose(obj, agent, atol=atol):
        raise ContractViolation("holding gripper requires object at agent position")
    return EnvState(agent_pos=agent, object_pos=obj, goal_pos=goal, gripper=gripper, step=obs.step)


def is_success(state: EnvState, geom: Geometry) -> bool:
    """Object placed within the success radius of the goal, gripper released."""
    dist = float(np.linalg.norm(state.object_pos - state.goal_pos))
    return dist <= geom.success_radius and state.gripper == GRIPPER_OPEN


def expert_action(state: EnvState, geom: Geometry) -> Action:
    """Phase-appropriate greedy action: approach, grasp, carry, release.

    Deterministic function of the state; each movement component is clamped to
    the per-step bound, so the agent lands exactly on targets in the
    disturbance-free environment.
    """
    space = geom.action_space()
    bound = geom.step_bound
    if state.holding:
        delta = state.goal_pos - state.agent_pos
        if float(np.linalg.norm(delta)) <= geom.success_radius:
            return space.action([0.0, 0.0, 1.0])  # release
        move = np.clip(delta, -bound, bound)
        return space.action([move[0], move[1], 0.0])
    if is_success(state, geom):
        return space.action([0.0, 0.0, 0.0])
    delta = state.object_pos - state.agent_pos
    if float(np.linalg.norm(delta)) <= geom.grasp_radius:
        return space.action([0.0, 0.0, 1.0])  # grasp
    move = np.clip(delta, -bound, bound)
    return space.action([move[0], move[1], 0.0])


def nominal_step(state: EnvState, action: Action, geom: Geometry) -> EnvState:
    """Disturbance-free transition; pure function used by the rollout planner."""
    dx, dy, grasp = action.values
    agent = np.clip(state.agent_pos + [dx, dy], 0.0, geom.world_size)
    obj = agent.copy() if state.holding else state.object_pos.copy()
    gripper = state.gripper
    if grasp > 0.5:
        if gripper == GRIPPER_HOLDING:
            gripper = GRIPPER_OPEN
        elif float(np.linalg.norm(agent - obj)) <= geom.grasp_radius:
            gripper = GRIPPER_HOLDING
            obj = agent.copy()
    return EnvState(agent_pos=agent, object_pos=obj, goal_pos=state.goal_pos,
                    gripper=gripper, step=state.step + 1)


class ToyEnv:
    """Single-owner mutable environment; distinct instances are independent.

    The episode seed is split into four named sub-streams (initial state,
    actuation noise, object drift, grasp failure) so disturbance sources draw
    independently.
    """

    def __init__(self, config: EpisodeConfig, seed: int,
                 initial_state: EnvState | None = None):
        self.config = config
        self.geom = config.geometry
        self.seed = seed
        self.initial_state = initial_state
        children = np.random.SeedSequence(seed).spawn(4)
        self._rng_init = np.random.default_rng(children[0])
        self._rng_actuation = np.random.default_rng(children[1])
        self._rng_drift = np.random.default_rng(children[2])
        self._rng_grasp = np.random.default_rng(children[3])
        self.state: EnvState | None = None

    # -- episode lifecycle ---------------------------------------------------

    def reset(self, state: EnvState | None = None):
        """Start an episode from a given state, the constructor-supplied one,
        or a freshly sampled one."""
        if state is None:
            state = self.initial_state
        if state is None:
            state = self._sample_initial_state()
        self.state = state
        return render_observation(state), render_proprio(state)

    def _sample_initial_state(self) -> EnvState:
        geom = self.geom
        lo, hi = 0.2, geom.world_size - 0.2
        agent = self._rng_init.uniform(lo, hi, size=2)
        # Rejection-sample object and goal so the phases are non-degenerate.
        while True:
            obj = self._rng_init.uniform(lo, hi, size=2)
            if np.linalg.norm(obj - agent) >= 0.6:
                break
        while True:
            goal = self._rng_init.uniform(lo, hi, size=2)
            if np.linalg.norm(goal - obj) >= 0.7:
                break
        return EnvState(agent_pos=agent, object_pos=obj, goal_pos=goal,
                        gripper=GRIPPER_OPEN, step=0)

    # -- dynamics ------------------------------------------------------------

    def step(self, action: Action):
        """Advance one control step, applying configured disturbances."""
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        st = self.state
        geom = self.geom
        dist = self.config.disturbance

        dx, dy, grasp = action.values
        if dist.actuation_noise_sigma > 0:
            noise = self._rng_actuation.normal(0.0, dist.actuation_noise_sigma, size=2)
            dx, dy = dx + noise[0], dy + noise[1]
        agent = np.clip(st.agent_pos + [dx, dy], 0.0, geom.world_size)

        obj = agent.copy() if st.holding else st.object_pos.copy()
        gripper = st.gripper
        if grasp > 0.5:
            if gripper == GRIPPER_HOLDING:
                gripper = GRIPPER_OPEN
            elif float(np.linalg.norm(agent - obj)) <= geom.grasp_radius:
                ok = True
                if dist.grasp_failure_prob > 0:
                    ok = self._rng_grasp.uniform() >= dist.grasp_failure_prob
                if ok:
                    gripper = GRIPPER_HOLDING
                    obj = agent.copy()

        # Object perturbation: drifts a free object; dislodges a held one
        # (the object slips out of the gripper and lands offset).
        if dist.object_drift_prob > 0:
            if self._rng_drift.uniform() < dist.object_drift_prob:
                angle = self._rng_drift.uniform(0.0, 2.0 * math.pi)
                shift = dist.object_drift_magnitude * np.array([math.cos(angle), math.sin(angle)])
                obj = np.clip(obj + shift, 0.0, geom.world_size)
                gripper = GRIPPER_OPEN

        self.state = EnvState(agent_pos=agent, object_pos=obj, goal_pos=st.goal_pos,
                              gripper=gripper, step=st.step + 1)
        return render_observation(self.state), render_proprio(self.state)

    def success(self) -> bool:
        return self.state is not None and is_success(self.state, self.geom)
