import os

# Pin BLAS to one thread before numpy loads: keeps timings stable and the
# two-lane executor the only source of parallelism in wall-clock tests.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def randomize_params(params, rng, scale=0.3):
    """O(1)-scale parameters so gradient signals sit well above FD noise."""
    from flowhn import model

    for name, p in model.flat_dict(params).items():
        p += rng.normal(0.0, scale, p.shape)
    return params
