import sys

import numpy as np
import pytest

from flarebench.core import BoundingBox, Detection, Frame
from flarebench.flasher_sim import BLUE, CameraModel, FlasherMode, FlasherPattern, SceneConfig

WORKER_CMD = [sys.executable, "-m", "flarebench.worker"]


@pytest.fixture
def scene():
    return SceneConfig()


@pytest.fixture
def blue_pattern():
    return FlasherPattern(1.3, 0.5, FlasherMode.SINGLE_COLOR, (BLUE,), 1.0)


@pytest.fixture
def camera():
    return CameraModel(fps=24.0)


def det(x0, y0, x1, y1, conf, label="car"):
    return Detection(BoundingBox(x0, y0, x1, y1), label, conf)


def random_frame(rng, width=32, height=24, index=0):
    return Frame.from_array(rng.integers(0, 256, (height, width, 3), dtype=np.uint8), index)
