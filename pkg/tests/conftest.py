"""Shared fixtures: a tiny float64 model and small synthetic scenes."""

import numpy as np
import pytest

from starcast.decoder import DecoderConfig
from starcast.encoders import TrackEncoderConfig
from starcast.model import ModelConfig
from starcast.synthetic import SyntheticSpec, generate_synthetic


def tiny_config(modes=2, horizon=6, max_vectors=4):
    return ModelConfig(
        encoder=TrackEncoderConfig(d_position=8, d_action=4, stages=((4, 3, 2), (8, 3, 2))),
        decoder=DecoderConfig(modes=modes, hidden=8, pre_layers=(8, 8), horizon=horizon, head_gain=1.0),
        heads=2,
        joint_gain=1.0,
        max_vectors_per_polyline=max_vectors,
        dtype="float64",
    )


def tiny_scenes(n=3, agents=3, templates=("straight", "curve", "intersection"), seed=0, horizon=6):
    spec = SyntheticSpec(n_scenes=n, agents_per_scene=agents, templates=templates, t_past=10, t_future=horizon)
    return generate_synthetic(seed, spec)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """``acceptance(name, passed, detail)`` records one criterion outcome."""

    def record(name, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
