import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from robusthmm import Generator, GeneratorGrid  # noqa: E402
from robusthmm.cli import load_config  # noqa: E402

REPO = Path(__file__).resolve().parent.parent
CONFIGS = REPO / "configs"


def example1_generator(a: float = 0.75, b: float = 0.25) -> Generator:
    """Two-state identity chain; symbol 0 has probability a (state 0) or
    b (state 1)."""
    return Generator(transition=np.eye(2),
                     emission=np.array([[a, 1 - a], [b, 1 - b]]))


@pytest.fixture(scope="session")
def oracle_cfg():
    return load_config(str(CONFIGS / "oracle_t3.json"))


@pytest.fixture(scope="session")
def control_cfg():
    return load_config(str(CONFIGS / "control_t3.json"))


@pytest.fixture
def ex1_gens():
    return GeneratorGrid(candidates=(example1_generator(),),
                         prior_penalty=np.array([0.0]))
