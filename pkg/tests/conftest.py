import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """40 synthetic eye images rendered at 32 px."""
    from ganforge.synth import SynthIrisParams, generate_synthetic_dataset

    out = tmp_path_factory.mktemp("corpus")
    generate_synthetic_dataset(SynthIrisParams(size=32, seed=3), 40, out)
    return out
