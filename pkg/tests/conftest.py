import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mta.core import Dims, ImpressionTensor
from mta.datagen import SynthSpec, generate


@pytest.fixture
def worked_example():
    """Two-brand reference instance (B=2, K=3, T=3): brand 0 saw 4 ads at
    position 0 on days 1 and 2 and 7 ads at position 1 on day 1; brand 1 saw
    10 ads at position 2 on day 1 (all 0-based). Golden values for the
    masking and stacking tests come from this instance."""
    dims = Dims(2, 3, 3)
    return ImpressionTensor(
        dims, {(0, 0, 1): 4, (0, 1, 1): 7, (1, 2, 1): 10, (0, 0, 2): 4}
    )


@pytest.fixture(scope="session")
def small_synth():
    """A shared small synthetic world with a stored ground truth."""
    return generate(
        SynthSpec(
            users=3000, brands=3, positions=6, days=8,
            exposure_rate=4.0, base_rate=0.05, seed=42,
        )
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_tensor(rng, dims: Dims, density: float = 0.2, max_count: int = 9) -> ImpressionTensor:
    entries = {}
    for b in range(dims.brands):
        for k in range(dims.positions):
            for t in range(dims.days):
                if rng.random() < density:
                    entries[(b, k, t)] = int(rng.integers(1, max_count + 1))
    return ImpressionTensor(dims, entries)
