"""
Testing configurations for the stkrig library.

This module contains test fixtures shared across the test modules: toy graphs,
toy windows, small model configurations and a small synthetic dataset.
"""

import numpy as np
import pytest

from stkrig.data import ReadingWindow
from stkrig.graph import SensorGraph
from stkrig.model import ModelConfig, init_params
from stkrig.simulation import synth_generate


def toy_coords(n_nodes, seed=0):
    return np.random.default_rng(seed).uniform(size=(n_nodes, 2))


@pytest.fixture
def rng():
    return np.random.default_rng(123)


@pytest.fixture
def toy_graph():
    """Undirected 6-node graph on random positions."""
    return SensorGraph.from_coords(toy_coords(6), node_ids=[f"n{i}" for i in range(6)])


@pytest.fixture
def directed_graph():
    """6-node graph with asymmetric distances."""
    rng = np.random.default_rng(7)
    dist = rng.uniform(0.5, 2.0, size=(6, 6))
    np.fill_diagonal(dist, 0.0)
    return SensorGraph(dist)


@pytest.fixture
def toy_config():
    """Small model: 6 nodes, T=9, T_s=2, T_k=4."""
    return ModelConfig(T=9, T_s=2, T_k=4, k=3, hidden=4, n_layers=2)


@pytest.fixture
def toy_params(toy_config):
    return init_params(toy_config, seed=0)


@pytest.fixture
def toy_window(toy_config):
    frames = np.random.default_rng(1).standard_normal((toy_config.T, 6, 1))
    known_mask = np.array([True, True, False, True, False, True])
    return ReadingWindow(frames, known_mask, target_index=toy_config.T - 1)


@pytest.fixture(scope="module")
def small_dataset():
    """12 sensors, 200 steps of the synthetic diffusion process."""
    return synth_generate(12, 200, seed=0)
