"""Shared fixtures: tiny datasets, run configs and a clean tape per test."""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from autograd.tensor import get_graph
from engine.models import InputSpec
from synthdata.dataset_io import from_cls_samples, from_seg_samples
from synthdata.synth import gen_cls, gen_seg
from utils.config import RunConfig

CLS_SIZE = 128
SEG_SIZE = 64

@pytest.fixture(autouse=True)
def clean_graph():
    """Every test starts and ends with an empty tape and no listeners."""
    graph = get_graph()
    graph.listeners.clear()
    graph.clear()
    yield
    graph.listeners.clear()
    graph.clear()

@pytest.fixture
def rng():
    return np.random.default_rng(1234)

@pytest.fixture(scope="session")
def cls_dataset():
    return from_cls_samples(gen_cls(seed=3, count=4, M=CLS_SIZE, N=CLS_SIZE, K=2), seed=3, K=2)

@pytest.fixture(scope="session")
def seg_dataset():
    return from_seg_samples(gen_seg(seed=5, count=4, M=SEG_SIZE, N=SEG_SIZE), seed=5)

@pytest.fixture
def cls_inputs():
    return InputSpec(task="classification", channels=1, M=CLS_SIZE, N=CLS_SIZE, num_classes=2)

@pytest.fixture
def seg_inputs():
    return InputSpec(task="segmentation", channels=1, M=SEG_SIZE, N=SEG_SIZE, num_classes=1)

@pytest.fixture
def cls_config():
    """2x2 grid of 64-px patches, k=1, three inner iterations."""
    return RunConfig(task="cls", grid_m=2, grid_n=2, sampling_rate=0.25, inner_iterations=3,
                     widths=(2, 2), feature_dim=4, baseline_size=32, epochs=1, batch_size=2,
                     accum_steps=3, seed=0, log_every=1)

@pytest.fixture
def seg_config():
    """2x2 grid of 32-px patches, k=1, two inner iterations."""
    return RunConfig(task="seg", grid_m=2, grid_n=2, sampling_rate=0.25, inner_iterations=2,
                     widths=(2, 2, 2), seg_channels=2, baseline_size=32, epochs=1, batch_size=2,
                     accum_steps=2, seed=0, log_every=1)
