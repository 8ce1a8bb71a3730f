import numpy as np
import pytest

from dynrep import seqgen


def random_window(rng, half_width, shape=(3, 8, 8), stride=1, dtype=np.float64):
    """Window of iid uniform frames; generic position with probability 1."""
    frames = rng.random((2 * half_width + 1, *shape)).astype(dtype)
    return seqgen.Window(
        center_index=half_width * stride,
        half_width=half_width,
        stride=stride,
        frames=frames,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
