"""Mean-gray padding to 224x224 and deterministic flip augmentation."""

import numpy as np
import pytest

from pollenstack.canonicalize import (
    CANONICAL,
    AugmentConfig,
    CanonicalSample,
    augment,
    augment_draws,
    canonicalize_stack,
    flip,
    flip_tensor,
    pad_to_canonical,
)
from pollenstack.stack_core import CLASS_LABELS, ZStack


def _round_half_up_mean(layer):
    s = int(layer.sum(dtype=np.int64))
    return (2 * s + layer.size) // (2 * layer.size)


def _sample(tensor, sample_id="s"):
    return CanonicalSample(sample_id, CLASS_LABELS[0], np.asarray(tensor, dtype=np.uint8))


class TestPadding:
    def test_full_size_input_unchanged(self, rng):
        layer = rng.integers(0, 256, size=(224, 224), dtype=np.uint8)
        assert np.array_equal(pad_to_canonical(layer), layer)

    def test_centering_and_border_value(self, rng):
        # start flat at 37, then shuffle value between pixel pairs so the
        # mean stays exactly 37 while the content is non-trivial
        layer = np.full((100, 150), 37, dtype=np.int64)
        flat = layer.ravel()
        pairs = rng.permutation(layer.size)
        for a, b in zip(pairs[:4000:2], pairs[1:4000:2]):
            delta = int(rng.integers(1, 30))
            flat[a] += delta
            flat[b] -= delta
        layer = layer.clip(0, 255).astype(np.uint8)
        assert int(layer.sum(dtype=np.int64)) == 37 * layer.size

        out = pad_to_canonical(layer)
        assert out.shape == (224, 224)
        assert np.array_equal(out[62:162, 37:187], layer)
        border = out.copy()
        border[62:162, 37:187] = 37
        assert (border == 37).all()

    def test_constant_input_pads_with_itself(self):
        layer = np.full((10, 10), 200, dtype=np.uint8)
        out = pad_to_canonical(layer)
        assert (out == 200).all()

    def test_pad_value_rounds_half_up(self):
        # mean 0.5 pads with 1, mean 1.5 pads with 2
        assert pad_to_canonical(np.array([[0, 1]], dtype=np.uint8))[0, 0] == 1
        assert pad_to_canonical(np.array([[1, 2]], dtype=np.uint8))[0, 0] == 2
        # mean 5/3 rounds down to 2? no: 1.67 -> 2; 4/3 -> 1
        assert pad_to_canonical(np.array([[1, 2, 2]], dtype=np.uint8))[0, 0] == 2
        assert pad_to_canonical(np.array([[1, 1, 2]], dtype=np.uint8))[0, 0] == 1

    def test_histogram_identity(self, rng):
        for _ in range(25):
            h = int(rng.integers(1, 225))
            w = int(rng.integers(1, 225))
            layer = rng.integers(0, 256, size=(h, w), dtype=np.uint8)
            out = pad_to_canonical(layer)
            expected = np.bincount(layer.ravel(), minlength=256)
            expected[_round_half_up_mean(layer)] += 224 * 224 - h * w
            assert np.array_equal(np.bincount(out.ravel(), minlength=256), expected)

    def test_explicit_pad_value(self):
        out = pad_to_canonical(np.zeros((4, 4), dtype=np.uint8), pad_value=9)
        assert out[0, 0] == 9

    def test_oversized_rejected(self):
        with pytest.raises(ValueError, match="224"):
            pad_to_canonical(np.zeros((225, 10), dtype=np.uint8))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            pad_to_canonical(np.zeros((2,), dtype=np.uint8))


class TestCanonicalizeStack:
    def test_shape_and_provenance(self, rng):
        layers = rng.integers(0, 256, size=(8, 60, 80), dtype=np.uint8)
        stack = ZStack("g1", layers, CLASS_LABELS[2])
        sample = canonicalize_stack(stack, range(2, 6), focal_index=4)
        assert sample.tensor.shape == (4, CANONICAL, CANONICAL)
        assert sample.n_layers == 4
        assert sample.id == "g1" and sample.label.id == 2
        assert sample.provenance == (4, (2, 6))
        # window content survives padding untouched
        top, left = (224 - 60) // 2, (224 - 80) // 2
        assert np.array_equal(
            sample.tensor[:, top:top + 60, left:left + 80], layers[2:6])

    def test_stack_pad_mode_uses_one_mean(self):
        layers = np.stack([np.full((10, 10), 10, dtype=np.uint8),
                           np.full((10, 10), 30, dtype=np.uint8)])
        stack = ZStack("g", layers, CLASS_LABELS[0])
        per_layer = canonicalize_stack(stack, range(0, 2), pad_mode="layer")
        per_stack = canonicalize_stack(stack, range(0, 2), pad_mode="stack")
        assert per_layer.tensor[0, 0, 0] == 10 and per_layer.tensor[1, 0, 0] == 30
        assert per_stack.tensor[0, 0, 0] == 20 and per_stack.tensor[1, 0, 0] == 20

    def test_unknown_pad_mode(self):
        stack = ZStack("g", np.zeros((1, 4, 4), dtype=np.uint8), CLASS_LABELS[0])
        with pytest.raises(ValueError, match="pad_mode"):
            canonicalize_stack(stack, range(0, 1), pad_mode="mirror")


class TestFlip:
    def test_horizontal_mirror(self):
        tensor = np.array([[[1, 2], [3, 4]]], dtype=np.uint8)
        sample = _sample(np.broadcast_to(
            np.zeros((224, 224), dtype=np.uint8), (1, 224, 224)).copy())
        sample.tensor[0, :2, :2] = tensor[0]
        flipped = flip_tensor(tensor, "horizontal")
        assert np.array_equal(flipped[0], [[2, 1], [4, 3]])
        assert np.array_equal(flip(sample, "horizontal").tensor,
                              np.flip(sample.tensor, axis=2))

    def test_vertical_mirror(self):
        tensor = np.array([[[1, 2], [3, 4]]], dtype=np.uint8)
        assert np.array_equal(flip_tensor(tensor, "vertical")[0], [[3, 4], [1, 2]])

    def test_involution(self, rng):
        tensor = rng.integers(0, 256, size=(3, 224, 224), dtype=np.uint8)
        for axis in ("horizontal", "vertical"):
            assert np.array_equal(flip_tensor(flip_tensor(tensor, axis), axis), tensor)

    def test_both_flips_rotate_180(self, rng):
        tensor = rng.integers(0, 256, size=(2, 224, 224), dtype=np.uint8)
        both = flip_tensor(flip_tensor(tensor, "vertical"), "horizontal")
        rotated = np.stack([np.rot90(layer, 2) for layer in tensor])
        assert np.array_equal(both, rotated)

    def test_stack_coherent(self, rng):
        tensor = rng.integers(0, 256, size=(5, 224, 224), dtype=np.uint8)
        flipped = flip_tensor(tensor, "horizontal")
        for z in range(5):
            assert np.array_equal(flipped[z], tensor[z][:, ::-1])

    def test_metadata_preserved(self, rng):
        sample = _sample(rng.integers(0, 256, size=(2, 224, 224), dtype=np.uint8), "id7")
        out = flip(sample, "vertical")
        assert out.id == "id7" and out.label == sample.label
        assert out.n_layers == 2

    def test_unknown_axis(self):
        with pytest.raises(ValueError):
            flip_tensor(np.zeros((1, 2, 2), dtype=np.uint8), "diagonal")


class TestAugment:
    def test_p_zero_is_identity(self, rng):
        sample = _sample(rng.integers(0, 256, size=(2, 224, 224), dtype=np.uint8))
        for epoch in range(5):
            out = augment(sample, AugmentConfig(p_flip=0.0, seed=epoch), epoch)
            assert np.array_equal(out.tensor, sample.tensor)

    def test_p_one_flips_both(self, rng):
        sample = _sample(rng.integers(0, 256, size=(2, 224, 224), dtype=np.uint8))
        expected = flip_tensor(flip_tensor(sample.tensor, "horizontal"), "vertical")
        for epoch in range(5):
            out = augment(sample, AugmentConfig(p_flip=1.0, seed=epoch), epoch)
            assert np.array_equal(out.tensor, expected)

    def test_bitwise_reproducible(self, rng):
        sample = _sample(rng.integers(0, 256, size=(3, 224, 224), dtype=np.uint8))
        cfg = AugmentConfig(p_flip=0.5, seed=42)
        for epoch in (0, 3, 17):
            a = augment(sample, cfg, epoch)
            b = augment(sample, cfg, epoch)
            assert np.array_equal(a.tensor, b.tensor)

    def test_epochs_vary_the_outcome(self, rng):
        sample = _sample(rng.integers(0, 256, size=(1, 224, 224), dtype=np.uint8))
        cfg = AugmentConfig(p_flip=0.5, seed=0)
        tensors = [augment(sample, cfg, epoch).tensor for epoch in range(12)]
        assert any(not np.array_equal(tensors[0], t) for t in tensors[1:])

    def test_draws_match_applied_flips(self, rng):
        # the applied transform must track the documented draw semantics
        cfg = AugmentConfig(p_flip=0.5, seed=11)
        sample = _sample(rng.integers(0, 256, size=(1, 224, 224), dtype=np.uint8), "g9")
        for epoch in range(20):
            u = augment_draws(cfg.seed, "g9", epoch)
            expected = sample.tensor
            if u[0] < cfg.p_flip:
                expected = flip_tensor(expected, "horizontal")
            if u[1] < cfg.p_flip:
                expected = flip_tensor(expected, "vertical")
            assert np.array_equal(augment(sample, cfg, epoch).tensor, expected)

    def test_flip_frequency_near_half(self):
        hits = sum(augment_draws(1234, f"sample{i}", 0)[0] < 0.5 for i in range(10000))
        assert 0.48 <= hits / 10000 <= 0.52

    def test_preserves_label_shape_histogram(self, rng):
        sample = _sample(rng.integers(0, 256, size=(4, 224, 224), dtype=np.uint8), "h")
        out = augment(sample, AugmentConfig(p_flip=1.0, seed=0), 0)
        assert out.label == sample.label
        assert out.tensor.shape == sample.tensor.shape
        for z in range(4):
            assert np.array_equal(np.bincount(out.tensor[z].ravel(), minlength=256),
                                  np.bincount(sample.tensor[z].ravel(), minlength=256))

    def test_rejects_bad_p_flip(self):
        with pytest.raises(ValueError):
            AugmentConfig(p_flip=1.5)


def test_canonical_sample_validates_shape():
    with pytest.raises(ValueError, match="224"):
        CanonicalSample("x", CLASS_LABELS[0], np.zeros((2, 100, 224), dtype=np.uint8))
    with pytest.raises(ValueError, match="uint8"):
        CanonicalSample("x", CLASS_LABELS[0], np.zeros((2, 224, 224), dtype=np.int16))
