from pathlib import Path

import numpy as np
import pytest

from onebit_sysid.config import load_config
from onebit_sysid.harness import simulate_ensemble
from onebit_sysid.analysis import aggregate

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"

# acceptance lines collected during the session and printed at the end
CRITERIA: dict[int, str] = {}


def shipped_config(name: str):
    return load_config(CONFIG_DIR / f"{name}.conf")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[number])


@pytest.fixture
def record_criterion():
    def record(number: int, passed: bool, detail: str):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        CRITERIA[number] = line
        print(line)
        return passed

    return record


class Ensemble:
    def __init__(self, cfg):
        self.config = cfg
        self.summaries, self.first = simulate_ensemble(cfg, parallel=1)
        self.aggregate = aggregate(self.summaries, noise_std=cfg.noise_std)


_ENSEMBLES: dict = {}


def ensemble(name: str) -> Ensemble:
    """500 runs of 10^4 steps for a shipped configuration, computed once per session."""
    if name not in _ENSEMBLES:
        _ENSEMBLES[name] = Ensemble(shipped_config(name))
    return _ENSEMBLES[name]


@pytest.fixture(scope="session")
def section51():
    return ensemble("section51_corrected")


@pytest.fixture(scope="session")
def comparison1():
    return ensemble("comparison1")


@pytest.fixture(scope="session")
def comparison3():
    return ensemble("comparison3")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
