"""Macro-planner: a nominal-dynamics rollout of the expert policy.

One planner call emits an open-loop action chunk of up to K steps plus a
fixed-width planning-context vector summarizing the scene and the plan's
predicted end state. The planner itself is stateless; latency and call counts
are charged by the controller's accounting.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ActionChunk, ConfigurationError, Observation, PlanningContext, ProprioState
from .env import (EnvState, Geometry, TaskSpec, expert_action, is_success,
                  nominal_step, state_from_observation)

#: Minimum context width: the informative prefix below occupies 12 entries.
_CONTEXT_BASE_WIDTH = 12


@dataclass(frozen=True, eq=False)
class PlannerOutput:
    chunk: ActionChunk
    context: PlanningContext

    def __post_init__(self):
        if self.chunk.planned_at != self.context.planned_at:
            raise ConfigurationError("chunk and context must share a planning boundary")


class NominalRolloutPlanner:
    """Rolls the expert policy forward under disturbance-free dynamics."""

    kind = "nominal-rollout"

    def __init__(self, geometry: Geometry, chunk_size: int, context_width: int = 16):
        if chunk_size < 1:
            raise ConfigurationError("chunk size must be >= 1")
        if context_width < _CONTEXT_BASE_WIDTH:
            raise ConfigurationError(
                f"context width must be >= {_CONTEXT_BASE_WIDTH}, got {context_width}")
        self.geom = geometry
        self.chunk_size = chunk_size
        self.context_width = context_width

    def plan(self, obs: Observation, task: TaskSpec, proprio: ProprioState,
             max_len: int | None = None) -> PlannerOutput:
        """Produce a chunk of min(K, max_len) expert actions plus the context.

        The task descriptor supplies the goal position; the toy world has a
        single task family, so the descriptor carries nothing else.
        """
        from .core import ContractViolation

        state = state_from_observation(obs, task.goal)
        if not np.allclose(proprio.values[:2], state.agent_pos, atol=1e-9):
            raise ContractViolation("proprioception disagrees with observation")

        length = self.chunk_size if max_len is None else max(1, min(self.chunk_size, max_len))
        actions = []
        rollout = state
        for _ in range(length):
            a = expert_action(rollout, self.geom)
            actions.append(a)
            rollout = nominal_step(rollout, a, self.geom)

        chunk = ActionChunk(actions=tuple(actions), planned_at=state.step)
        context = PlanningContext(vector=self._context_vector(state, rollout),
                                  planned_at=state.step)
        return PlannerOutput(chunk=chunk, context=context)

    def _context_vector(self, start: EnvState, end: EnvState) -> np.ndarray:
        base = np.concatenate([
            start.goal_pos,
            start.object_pos,
            start.agent_pos,
            [float(start.gripper)],
            end.agent_pos,
            [float(end.gripper)],
            [float(is_success(end, self.geom)), float(np.linalg.norm(end.object_pos - end.goal_pos))],
        ])
        vec = np.zeros(self.context_width)
        vec[:base.size] = base
        return vec


def make_planner(kind: str, geometry: Geometry, chunk_size: int,
                 context_width: int = 16) -> NominalRolloutPlanner:
    if kind != "nominal-rollout":
        raise ConfigurationError(f"unknown planner kind {kind!r}")
    return NominalRolloutPlanner(geometry, chunk_size, context_width)
