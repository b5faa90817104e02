import numpy as np
import pytest

from cornerquant.cli import build_model, load_tokens
from cornerquant.config import RunConfig
from cornerquant.toy_transformer import ModelConfig, init_model

# Lines collected by the acceptance module, echoed in the terminal summary so
# they show up even when output capture is on.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def g():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_cfg():
    return ModelConfig(d_model=16, n_heads=2, n_layers=2, d_ffn=32, vocab=32, seed=3)


@pytest.fixture(scope="session")
def small_model(small_cfg):
    return init_model(small_cfg)


@pytest.fixture(scope="session")
def run_cfg():
    return RunConfig()


@pytest.fixture(scope="session")
def toy_model(run_cfg):
    """Default toy model with the default outlier recipe, RMSNorm fused."""
    return build_model(run_cfg)[0]


@pytest.fixture(scope="session")
def toy_tokens(run_cfg):
    """(calibration, held-out) token arrays of the default run."""
    return load_tokens(run_cfg)
