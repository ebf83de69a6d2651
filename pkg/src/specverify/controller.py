"""Plan-execute-verify-replan episode executor with latency accounting.

Runs one episode in a selected mode:

* ``sv``: plan a chunk, execute its first action unverified, then verify each
  subsequent planned action against the lightweight reference; on deviation
  above tau, abort the chunk suffix and replan from the current state.
* ``open-loop``: execute every chunk fully, no verification.
* ``verifier-only``: one initial plan, then execute the verifier's reference
  action every step (no replanning).
* ``sv-without-context`` / ``sv-without-observation``: sv with the respective
  verifier input zeroed.

All planner/verifier calls are charged to a simulated clock; the identity
``simulated_inference_time == heavy_calls*T_heavy + verifier_calls*T_verify``
holds on every trace.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import (Action, ActionSpace, ConfigurationError, ContractViolation,
                   DeviationScore, l1_distance, normalize_discrepancy)
from .env import TaskSpec, ToyEnv, is_success


@dataclass(frozen=True)
class LatencyModel:
    t_heavy: float = 1.373
    t_verify: float = 0.081
    t_ctrl: float = 0.1

    def __post_init__(self):
        if min(self.t_heavy, self.t_verify, self.t_ctrl) < 0:
            raise ConfigurationError("latencies must be nonnegative")
        if self.t_verify > self.t_heavy:
            raise ConfigurationError("t_verify must not exceed t_heavy")


@dataclass(frozen=True)
class ThresholdConfig:
    tau: float = 0.2
    max_replans: int = 32

    def __post_init__(self):
        if not (0.0 < self.tau < 1.0):
            raise ConfigurationError(f"tau must lie in (0, 1), got {self.tau}")
        if self.max_replans < 1:
            raise ConfigurationError("max_replans must be >= 1")


class ControllerMode(str, Enum):
    SV = "sv"
    OPEN_LOOP = "open-loop"
    VERIFIER_ONLY = "verifier-only"
    SV_NO_CONTEXT = "sv-without-context"
    SV_NO_OBSERVATION = "sv-without-observation"

    @property
    def is_sv(self) -> bool:
        return self in (ControllerMode.SV, ControllerMode.SV_NO_CONTEXT,
                        ControllerMode.SV_NO_OBSERVATION)

    @property
    def needs_verifier(self) -> bool:
        return self is not ControllerMode.OPEN_LOOP


@dataclass(frozen=True)
class Decision:
    accept: bool
    score: DeviationScore
    step: int


def decide(planned: Action, reference: Action, space: ActionSpace, tau: float,
           step: int = 0) -> Decision:
    """Binary execution rule: accept iff the normalized deviation is <= tau."""
    if not (0.0 < tau < 1.0):
        raise ConfigurationError(f"tau must lie in (0, 1), got {tau}")
    score = normalize_discrepancy(l1_distance(reference, planned), space)
    return Decision(accept=score.value <= tau, score=score, step=step)


@dataclass(eq=False)
class EpisodeTrace:
    """Full per-step record of one episode plus the derived counters."""

    seed: int
    mode: str
    chunk_size: int
    tau: float | None
    latency: LatencyModel
    records: list = field(default_factory=list)
    heavy_calls: int = 0
    verifier_calls: int = 0
    executed_steps: int = 0
    replans: int = 0
    guard_hit: bool = False
    success: bool = False
    steps_before_replan: list = field(default_factory=list)
    completed_chunk_lengths: list = field(default_factory=list)

    @property
    def simulated_inference_time(self) -> float:
        return (self.heavy_calls * self.latency.t_heavy
                + self.verifier_calls * self.latency.t_verify)

    def to_jsonl(self) -> str:
        lines = [json.dumps(r, sort_keys=True) for r in self.records]
        lines.append(json.dumps({
            "type": "summary",
            "seed": self.seed,
            "mode": self.mode,
            "chunk_size": self.chunk_size,
            "tau": self.tau,
            "t_heavy": self.latency.t_heavy,
            "t_verify": self.latency.t_verify,
            "t_ctrl": self.latency.t_ctrl,
            "heavy_calls": self.heavy_calls,
            "verifier_calls": self.verifier_calls,
            "executed_steps": self.executed_steps,
            "replans": self.replans,
            "guard_hit": self.guard_hit,
            "success": self.success,
            "steps_before_replan": self.steps_before_replan,
            "completed_chunk_lengths": self.completed_chunk_lengths,
            "simulated_inference_time": self.simulated_inference_time,
        }, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "EpisodeTrace":
        records = [json.loads(line) for line in text.strip().splitlines()]
        summary = records[-1]
        if summary.get("type") != "summary":
            raise ValueError("trace file missing summary record")
        trace = cls(
            seed=summary["seed"],
            mode=summary["mode"],
            chunk_size=summary["chunk_size"],
            tau=summary["tau"],
            latency=LatencyModel(t_heavy=summary["t_heavy"],
                                 t_verify=summary["t_verify"],
                                 t_ctrl=summary["t_ctrl"]),
            records=records[:-1],
            heavy_calls=summary["heavy_calls"],
            verifier_calls=summary["verifier_calls"],
            executed_steps=summary["executed_steps"],
            replans=summary["replans"],
            guard_hit=summary["guard_hit"],
            success=summary["success"],
            steps_before_replan=summary["steps_before_replan"],
            completed_chunk_lengths=summary["completed_chunk_lengths"],
        )
        return trace


def _state_hash(state) -> str:
    payload = repr((state.agent_pos.tolist(), state.object_pos.tolist(),
                    state.goal_pos.tolist(), state.gripper, state.step))
    return hashlib.sha1(payload.encode()).hexdigest()[:16]


def cost_bounds(latency: LatencyModel, chunk_size: int):
    """Best/worst-case amortized per-step inference cost for chunk size K."""
    if chunk_size < 1:
        raise ConfigurationError("chunk size must be >= 1")
    return (latency.t_heavy / chunk_size + latency.t_verify,
            latency.t_heavy + latency.t_verify)


def observed_per_step_cost(trace: EpisodeTrace) -> float:
    if trace.executed_steps < 1:
        raise ContractViolation("per-step cost undefined for zero executed steps")
    return trace.simulated_inference_time / trace.executed_steps


def run_episode(env: ToyEnv, planner, verifier, mode: ControllerMode,
                threshold: ThresholdConfig, latency: LatencyModel) -> EpisodeTrace:
    """Run one episode to success, horizon exhaustion, or the replan guard."""
    mode = ControllerMode(mode)
    if mode.needs_verifier and verifier is None:
        raise ConfigurationError(f"mode {mode.value} requires a verifier")

    trace = EpisodeTrace(seed=env.seed, mode=mode.value, chunk_size=planner.chunk_size,
                         tau=threshold.tau if mode.is_sv else None, latency=latency)
    geom = env.geom
    space = geom.action_space()
    horizon = env.config.horizon
    obs, prop = env.reset()

    def execute(action: Action):
        nonlocal obs, prop
        record = {
            "type": "step",
            "step": env.state.step,
            "state_hash": _state_hash(env.state),
            "action": action.values.tolist(),
        }
        obs, prop = env.step(action)
        trace.executed_steps += 1
        trace.records.append(record)

    task = TaskSpec(goal=env.state.goal_pos)

    def plan():
        trace.heavy_calls += 1
        return planner.plan(obs, task, prop, max_len=horizon - env.state.step)

    zero_ctx = mode is ControllerMode.SV_NO_CONTEXT
    zero_obs = mode is ControllerMode.SV_NO_OBSERVATION

    if mode is ControllerMode.OPEN_LOOP:
        while not env.success() and env.state.step < horizon:
            out = plan()
            executed = 0
            for action in out.chunk.actions:
                execute(action)
                executed += 1
                if env.success() or env.state.step >= horizon:
                    break
            trace.completed_chunk_lengths.append(executed)
    elif mode is ControllerMode.VERIFIER_ONLY:
        out = plan()
        execute(out.chunk.actions[0])
        while not env.success() and env.state.step < horizon:
            trace.verifier_calls += 1
            ref = verifier.reference(obs, out.context, true_state=env.state)
            execute(ref)
    else:  # sv and its input ablations
        while not env.success() and env.state.step < horizon:
            out = plan()
            execute(out.chunk.actions[0])
            executed_in_chunk = 1
            aborted = False
            for i in range(1, len(out.chunk)):
                if env.success() or env.state.step >= horizon:
                    break
                trace.verifier_calls += 1
                ref = verifier.reference(obs, out.context, true_state=env.state,
                                         zero_context=zero_ctx, zero_observation=zero_obs)
                decision = decide(out.chunk[i], ref, space, threshold.tau,
                                  step=env.state.step)
                trace.records.append({
                    "type": "decision",
                    "step": env.state.step,
                    "accept": decision.accept,
                    "score": decision.score.value,
                })
                if decision.accept:
                    execute(out.chunk[i])
                    executed_in_chunk += 1
                else:
                    if trace.replans >= threshold.max_replans:
                        trace.guard_hit = True
                        aborted = True
                        break
                    trace.replans += 1
                    trace.steps_before_replan.append(executed_in_chunk)
                    aborted = True
                    break
            if trace.guard_hit:
                break
            if not aborted:
                trace.completed_chunk_lengths.append(executed_in_chunk)

    trace.success = env.success()
    return trace
