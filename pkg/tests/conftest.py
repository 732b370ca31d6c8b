"""
Pytest configuration and fixtures
"""

import os

os.environ["SEGSEMI_ENVIRONMENT"] = "testing"

import numpy as np
import pytest

from segsemi.config import Hyperparams, reload_settings
from segsemi.data import Dataset, generate_synthetic, split
from segsemi.io import save_dataset
from segsemi.logging_config import clear_run_context
from segsemi.schemas import ActionStep, ActivityGrammar, GrammarConfig

# Testing settings: 64-bit tensors, one worker thread
reload_settings()


@pytest.fixture(autouse=True)
def testing_settings():
    """Fresh testing settings and an empty log context for every test"""
    settings = reload_settings()
    clear_run_context()
    yield settings
    clear_run_context()


@pytest.fixture
def rng():
    """Seeded random generator"""
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_hyper():
    """Hyperparameters small enough for a few steps per test"""
    return Hyperparams.build({
        "streams": 2,
        "generation_layers": 2,
        "refinement_stages": 1,
        "refinement_layers": 2,
        "channels": 8,
        "pool_k": 4,
        "encoder_hidden": 6,
        "decoder_hidden": 6,
        "attention_hidden": 5,
        "embedding_dim": 4,
        "max_decode_length": 8,
        "beam_width": 3,
        "batch_size": 2,
        "total_steps": 4,
        "warmup_steps": 2,
        "eval_interval": 2,
        "checkpoint_interval": 2,
        "lr": 0.001,
    })


@pytest.fixture
def tiny_grammar():
    """Four actions, two activities, short videos"""
    return GrammarConfig(
        class_names=["open", "pour", "stir", "close"],
        activities=[
            ActivityGrammar(name="brew", steps=[ActionStep(action=0), ActionStep(action=1),
                                                ActionStep(action=2, optional=True, probability=0.5),
                                                ActionStep(action=3)]),
            ActivityGrammar(name="mix", steps=[ActionStep(action=2), ActionStep(action=1)]),
        ],
        feature_dim=6,
        noise_scale=0.3,
        smoothing_window=3,
        min_frames=30,
        max_frames=50,
        min_duration=4,
        seed=7,
    )


@pytest.fixture
def tiny_dataset(tiny_grammar) -> Dataset:
    """Six training videos (two annotated) and three test videos"""
    full = generate_synthetic(tiny_grammar, counts=(6, 3), seed=7)
    return split(full, 1 / 3, 7)


@pytest.fixture
def dataset_dir(tmp_path, tiny_dataset):
    """The tiny dataset written to disk"""
    directory = tmp_path / "dataset"
    save_dataset(tiny_dataset, directory)
    return directory
