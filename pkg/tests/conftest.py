import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dcst.data import prepare
from dcst.diffcore import set_debug
from dcst.synth import SynthConfig, generate

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for the end-of-run acceptance summary."""

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({detail})"
        print(line)
        request.config.stash[_VERDICTS].append(line)
        return ok

    return record


@pytest.fixture(autouse=True)
def _no_debug():
    yield
    set_debug(False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_synth():
    return generate(SynthConfig(n_nodes=6, t_total=600, n_pairs=1), seed=5)


@pytest.fixture(scope="session")
def small_bundle(small_synth):
    ds = small_synth
    return prepare(ds.matrix, ds.sensors, ds.graph)
