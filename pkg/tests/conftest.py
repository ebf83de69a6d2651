"""Shared fixtures: geometry, planners, and a session-scoped trained verifier.

Training the verifier takes tens of seconds, so the acceptance and trend tests
share a single instance trained under moderate disturbances.
"""
import numpy as np
import pytest

from specverify.env import DisturbanceConfig, EpisodeConfig, Geometry
from specverify.harness import ExperimentConfig, EnvSection, build_verifier


@pytest.fixture(scope="session")
def geometry():
    return Geometry()


@pytest.fixture(scope="session")
def moderate_config():
    """Default experiment config with moderate disturbances enabled."""
    base = ExperimentConfig()
    env = EnvSection(horizon=base.env.horizon, geometry=base.env.geometry,
                     disturbance=DisturbanceConfig.moderate(),
                     disturbance_level="moderate")
    return ExperimentConfig(env=env, planner=base.planner, verifier=base.verifier,
                            controller=base.controller, batch=base.batch,
                            sweep=base.sweep, reference=base.reference)


@pytest.fixture(scope="session")
def trained_verifier(moderate_config):
    """Verifier trained once per session on the moderate-disturbance config."""
    return build_verifier(moderate_config)
