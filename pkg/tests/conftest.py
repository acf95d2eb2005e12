import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # makes `oracles` importable

from sparsekern import SceneSpec, SparseTensor, random_scene


def make_tensor(coords, feats=None, channels=1, dtype=np.float64, seed=0):
    """Small tensor helper: explicit coords, random or given features."""
    coords = np.asarray(coords, dtype=np.int32).reshape(-1, 3)
    if feats is None:
        rng = np.random.default_rng(seed)
        feats = rng.uniform(-1.0, 1.0, size=(len(coords), channels))
    return SparseTensor(coords, np.asarray(feats, dtype=dtype))


@pytest.fixture
def line3():
    """The three-voxel line with a gap: rows 0,1,2 at x=0,1,3."""
    return make_tensor([(0, 0, 0), (1, 0, 0), (3, 0, 0)], channels=2, seed=1)


@pytest.fixture(scope="session")
def scene_corpus():
    """Random f64 scenes for oracle/property sweeps."""
    rng = np.random.default_rng(2024)
    scenes = []
    for i in range(30):
        n = int(rng.integers(2, 120))
        hi = int(rng.integers(3, 16))
        c = int(rng.integers(1, 8))
        spec = SceneSpec(min(n, (hi + 1) ** 3), ((0, hi),) * 3, c, int(rng.integers(0, 2**63)))
        scenes.append(random_scene(spec, dtype=np.float64))
    return scenes
