from pathlib import Path

import numpy as np
import pytest

from rsmfg.model import MfgModel, load_model, random_model

ROOT = Path(__file__).resolve().parents[1]
MODELS = ROOT / "models"

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def models_dir():
    return MODELS


@pytest.fixture
def reference():
    return load_model(MODELS / "reference.json")


@pytest.fixture
def decoupled():
    return load_model(MODELS / "decoupled.json")


@pytest.fixture
def zero_cost():
    return load_model(MODELS / "zero_cost.json")


@pytest.fixture
def congestion():
    return load_model(MODELS / "congestion.json")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def single_state_model(c0, beta=0.6, lam=0.8):
    return MfgModel(beta=beta, lam=lam, mu0=np.array([1.0]),
                    kernel_mix=np.ones((1, 1, 1, 1)),
                    cost_mix=np.full((1, 1, 1), c0), cost_bound=c0)


def random_models(seed, count, sizes=((2, 2),), coupling=1.0):
    g = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        nx, na = sizes[g.integers(len(sizes))]
        beta = float(g.choice([0.3, 0.7]))
        lam = float(g.choice([0.5, 1.0]))
        out.append(random_model(g, nx, na, beta=beta, lam=lam, coupling=coupling))
    return out
