import sys

import numpy as np
import pytest

from gsbh import demos as D
from gsbh import model as M
from gsbh import world as W


def tiny_model_config(**kw) -> M.ModelConfig:
    base = dict(channels=(4, 4), blocks_per_stage=1, goal_dim=5, goal_hidden=3, action_dim=3,
                horizon_dim=4, fusion_hidden=8, fusion_dim=6, policy_hidden=5)
    base.update(kw)
    return M.ModelConfig(**base)


@pytest.fixture(scope="session")
def meadow() -> W.WorldConfig:
    return W.WorldConfig(biome="meadow")


@pytest.fixture(scope="session")
def small_logs(meadow):
    return D.collect_episodes(meadow, 40, seed=5)


@pytest.fixture(scope="session")
def small_trajs(small_logs, meadow):
    return D.filter_and_relabel(small_logs, meadow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
