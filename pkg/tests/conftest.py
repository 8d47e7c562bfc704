"""Pytest fixtures over the shared synthetic-stack builders."""

import numpy as np
import pytest

from stack_synth import make_tree


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def small_tree(tmp_path, rng):
    """3 classes x 4 stacks, depth 8, 64x64 layers."""
    return make_tree(tmp_path / "tree", 4, rng)
