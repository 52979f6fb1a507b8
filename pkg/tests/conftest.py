"""Shared fixtures: the digit corpus (real MNIST when supplied, synthetic
otherwise) and the session-scoped trained model the acceptance suite studies."""

import numpy as np
import pytest

import corpus
from morphogen import dataset, generator, network, trainer
from morphogen.network import ArchConfig
from morphogen.trainer import TrainConfig

ACCEPTANCE_SUBSET = 10_000
HOLDOUT_SIZE = 2_000
ARCH_SEED = 42
SPLIT_SEED = 11
SHUFFLE_SEED = 0


@pytest.fixture(scope="session")
def corpus_paths(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("idx")
    images, labels, tag = corpus.corpus_files(tmp, n=ACCEPTANCE_SUBSET + HOLDOUT_SIZE + 1000)
    return {"images": images, "labels": labels, "source": tag}


@pytest.fixture(scope="session")
def corpus_data(corpus_paths):
    return dataset.load_dataset(corpus_paths["images"], corpus_paths["labels"])


@pytest.fixture(scope="session")
def digit_sets(corpus_data):
    """train/validation from the first 10k images; holdout is the next 2k."""
    subset = dataset.Dataset(
        images=corpus_data.images[:ACCEPTANCE_SUBSET],
        labels=corpus_data.labels[:ACCEPTANCE_SUBSET],
    )
    train, val = dataset.split(subset, 0.1, rng_seed=SPLIT_SEED)
    holdout = dataset.Dataset(
        images=corpus_data.images[ACCEPTANCE_SUBSET : ACCEPTANCE_SUBSET + HOLDOUT_SIZE],
        labels=corpus_data.labels[ACCEPTANCE_SUBSET : ACCEPTANCE_SUBSET + HOLDOUT_SIZE],
        split_tag="validation",
    )
    return {"train": train, "val": val, "holdout": holdout}


@pytest.fixture(scope="session")
def acceptance_arch():
    return ArchConfig(rng_seed=ARCH_SEED)


@pytest.fixture(scope="session")
def untrained_distortion(digit_sets, acceptance_arch):
    return trainer.evaluate(network.init_params(acceptance_arch), digit_sets["train"])


@pytest.fixture(scope="session")
def acceptance_run(digit_sets, acceptance_arch):
    """The criterion training run: default config on the 10k subset."""
    cfg = TrainConfig(shuffle_seed=SHUFFLE_SEED)
    params, log = trainer.train(
        digit_sets["train"], acceptance_arch, cfg, validation=digit_sets["val"]
    )
    return {"params": params, "log": log, "config": cfg}


@pytest.fixture(scope="session")
def acceptance_model(acceptance_run):
    return acceptance_run["params"]


@pytest.fixture(scope="session")
def generated_set(acceptance_model):
    """1000 fixed-point trajectories from the trained checkpoint."""
    return generator.generate_batch(
        acceptance_model,
        1000,
        generator.SeedConfig(rng_seed=777),
        generator.ConvergenceConfig(),
    )
