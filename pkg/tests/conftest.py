import numpy as np
import pytest

from aesgraph import tensor as T


@pytest.fixture(autouse=True)
def f64_default():
    """Tests run at 64-bit unless they opt into f32 explicitly."""
    prev = T.default_dtype()
    T.set_default_dtype(np.float64)
    yield
    T.set_default_dtype(prev)
