from hypothesis import settings
from oamlink.config import Config, default_config
from oamlink.qkdsec import CrosstalkMatrix
from pathlib import Path
from typing import List, Optional

import numpy as np
import pytest

# numerical examples are slow to generate, keep the example count modest under xdist
settings.register_profile("oamlink", max_examples=50, deadline=None)
settings.load_profile("oamlink")


def pytest_assertrepr_compare(op, left, right) -> Optional[List[str]]:
    if isinstance(left, CrosstalkMatrix) and isinstance(right, CrosstalkMatrix) and op in ("==", "!="):
        lines = ["Comparing CrosstalkMatrix instances:"]
        for header, obj in (("Left:", left), ("Right:", right)):
            lines.append(f"  {header} {obj.basis_kind.value} labels={list(obj.labels)}")
            with np.printoptions(precision=4, suppress=True):
                for row in str(obj.probabilities).splitlines():
                    lines.append(f"    {row}")
        return lines
    return None


@pytest.fixture(scope="session", name="session_tmppath")
def fixture_session_tmppath(tmp_path_factory) -> Path:
    return tmp_path_factory.mktemp("oamlink")


@pytest.fixture(name="config")
def fixture_config() -> Config:
    return default_config()


@pytest.fixture(name="fast_config")
def fixture_fast_config() -> Config:
    """Defaults with a coarse grid, for preset-driven tests."""
    config = default_config()
    config["grid_samples"] = 256
    return config
