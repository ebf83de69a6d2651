"""Speculative-verification control at desk scale.

A heavy macro-planner emits open-loop action chunks plus a planning-context
vector; a lightweight trained verifier checks each planned action against the
live observation and triggers replanning when the normalized deviation exceeds
a threshold. A seeded harness measures the efficiency/robustness trade-off.
"""

from .core import (Action, ActionChunk, ActionSpace, ConfigurationError,
                   ContractViolation, DeviationScore, Observation,
                   PlanningContext, ProprioState, l1_distance,
                   normalize_discrepancy)
from .controller import (ControllerMode, Decision, EpisodeTrace, LatencyModel,
                         ThresholdConfig, cost_bounds, decide,
                         observed_per_step_cost, run_episode)
from .env import (DisturbanceConfig, EnvState, EpisodeConfig, Geometry, ToyEnv,
                  expert_action, is_success, render_observation)
from .planner import NominalRolloutPlanner, PlannerOutput, make_planner
from .verifier import (ObservationEncoder, OracleVerifier, TrainedVerifier,
                       TrainReport, VerifierParams, VerifierSample,
                       build_training_set, fuse, load_verifier,
                       predict_reference, save_verifier, train_verifier)

__version__ = "0.1.0"
