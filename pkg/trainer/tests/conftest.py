"""Shared fixtures: synthetic packed datasets built with the upstream
pipeline's own packer, plus one session-scoped from-scratch training
run that several tests inspect. The trainer package itself never
imports the pipeline; tests do, to produce reference artifacts on one
side of the file contract and score predictions on the other."""

import numpy as np
import pytest
from pollenstack.canonicalize import CanonicalSample
from pollenstack.dataset_kit import SplitPlan, pack
from pollenstack.stack_core import CLASS_LABELS

from pollentrain import models, packed_io, train_loop

from synth_data import pack_rings


@pytest.fixture(scope="session")
def ring_pack(tmp_path_factory):
    base = tmp_path_factory.mktemp("rings") / "rings"
    return pack_rings(base)


@pytest.fixture(scope="session")
def canonical_pack(tmp_path_factory):
    """Six full-size canonicalized samples packed by the pipeline, for
    contract tests at the native 224x224 geometry."""
    rng = np.random.default_rng(5)
    samples, tensors = [], {}
    for c in range(3):
        for i in range(2):
            tensor = rng.integers(0, 256, size=(6, 224, 224), dtype=np.uint8)
            sample_id = f"c{c}_{i}"
            samples.append(CanonicalSample(sample_id, CLASS_LABELS[c], tensor))
            tensors[sample_id] = tensor
    ids = sorted(tensors)
    plan = SplitPlan(seed=3, test_ids=(ids[0],),
                     folds=(tuple(ids[1:4]), tuple(ids[4:])))
    base = tmp_path_factory.mktemp("canonical") / "canonical"
    pack(samples, plan, base)
    return base.parent / (base.name + ".pstk"), tensors


@pytest.fixture(scope="session")
def scratch_overfit(ring_pack, tmp_path_factory):
    """One from-scratch resnet3d_18 run on the 60-sample set, shared by
    the trainability and protocol tests (it is the slow fixture)."""
    view = packed_io.load_packed(ring_pack)
    settings = models.TrainSettings(architecture="resnet3d_18",
                                    pretrained=False, epochs=30,
                                    target_train_accuracy=0.99)
    out_dir = tmp_path_factory.mktemp("scratch_run")
    result = train_loop.train_model(view, 0, settings, out_dir)
    return view, settings, result
