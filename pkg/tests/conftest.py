import numpy as np
import pytest

from most_tkg.core import Quadruple
from most_tkg.dataset import build_dataset
from most_tkg.model import HyperConfig
from most_tkg.synthetic import rule_based_tkg, synthetic_dump

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        verdict, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {verdict:<4}  {detail}")


def tiny_config(**overrides) -> HyperConfig:
    base = dict(d=8, dt=8, layers=1, activation="tanh", dropout=0.0, k=4, batch=4, episodes=0, seed=0)
    base.update(overrides)
    return HyperConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def rule_interp():
    quads, T = rule_based_tkg()
    return build_dataset(quads, "interpolation", lower=10, upper=40, min_count=5, ratios=(0.5, 0.25, 0.25),
                         seed=0, num_timestamps=T)


@pytest.fixture(scope="session")
def rule_extrap():
    quads, T = rule_based_tkg(localized=True)
    return build_dataset(quads, "extrapolation", lower=10, upper=40, min_count=5, ratios=(0.5, 0.25, 0.25),
                         seed=0, num_timestamps=T)


@pytest.fixture(scope="session")
def dump():
    return synthetic_dump()


@pytest.fixture(scope="session")
def dump_extrap(dump):
    quads, T = dump
    return build_dataset(quads, "extrapolation", lower=20, upper=100, seed=0, num_timestamps=T)


@pytest.fixture(scope="session")
def dump_interp(dump):
    quads, T = dump
    return build_dataset(quads, "interpolation", lower=20, upper=100, seed=0, num_timestamps=T)


def q(*xs):
    return Quadruple(*xs)
