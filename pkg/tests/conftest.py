import os
import sys

import numpy as np
import pytest
from hypothesis import strategies as st

sys.path.insert(0, os.path.dirname(__file__))

from attnphd.model import BBox  # noqa: E402


@st.composite
def boxes(draw, lo=-50.0, hi=50.0, max_size=40.0):
    left = draw(st.floats(lo, hi, allow_nan=False))
    top = draw(st.floats(lo, hi, allow_nan=False))
    w = draw(st.floats(0.5, max_size, allow_nan=False))
    h = draw(st.floats(0.5, max_size, allow_nan=False))
    return BBox(left, top, left + w, top + h)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
