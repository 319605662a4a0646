import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from streammem.frame_gate import Frame, VisionEmbedding
from streammem.ports import stub_ports


@pytest.fixture
def ports():
    return stub_ports()


def make_embedding(t: float, tags=(), n=2, d=4, seed=None) -> VisionEmbedding:
    rng = np.random.default_rng(int(t * 1000) if seed is None else seed)
    return VisionEmbedding(tokens=rng.standard_normal((n, d)), source_timestamp=t,
                           source_tags=tuple(tags))


def flat_frame(value: float, t: float, size=8) -> Frame:
    return Frame(pixels=np.full((size, size), value), timestamp=t)
