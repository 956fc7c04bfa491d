"""Shared fixtures: tiny configurations that keep the heavy modules fast."""

import numpy as np
import pytest
import torch

from ferroga import dkl, ferrosim, genetic, orchestrator, waveform
from ferroga.seeds import substream

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_net():
    return dkl.EmbeddingNetConfig(conv_filters=4, dense_widths=(16,))


@pytest.fixture
def small_lattice():
    return ferrosim.LatticeConfig(n=6)


@pytest.fixture
def zero_disorder():
    return ferrosim.DisorderField.zeros(20)


@pytest.fixture
def seed_pop():
    def make(size, seed=0):
        return waveform.seed_population(substream(seed, "population"), size)

    return make


@pytest.fixture
def toy_run_config(tiny_net):
    def make(**overrides):
        base = dict(
            ga=genetic.GAConfig(population_size=16),
            net=tiny_net,
            policy=orchestrator.PolicyConfig(batch_size=2, query_budget=4),
            generations=1,
            train_iters=25,
            refine_iters=8,
        )
        base.update(overrides)
        return orchestrator.RunConfig(**base)

    return make
