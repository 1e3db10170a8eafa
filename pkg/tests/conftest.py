import os
import sys
from pathlib import Path

# keep numeric backends single-threaded before numpy/BLAS load: results stay
# deterministic and timing claims stay honest
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import cv2  # noqa: E402
import numpy as np  # noqa: E402
import pytest  # noqa: E402

cv2.setNumThreads(1)

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1547)


@pytest.fixture
def rgb_rng(rng):
    def make(rows, cols):
        return rng.integers(0, 256, (rows, cols, 3), dtype=np.uint8)

    return make
