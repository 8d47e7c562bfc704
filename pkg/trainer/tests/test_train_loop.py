"""Training-loop behavior on small fast configurations: logging,
determinism, augmentation scoping, divergence handling, and artifact
formats. The heavyweight overfit run lives in the acceptance tests."""

import math

import numpy as np
import pytest
import torch
from pollenstack import eval_kit

from pollentrain import models, packed_io, train_loop

from synth_data import pack_rings


def tiny_settings(**overrides):
    base = dict(architecture="mobilenet_v2_3d", epochs=2,
                learning_rate=0.001, seed=0)
    base.update(overrides)
    return models.TrainSettings(**base)


@pytest.fixture(scope="module")
def tiny_pack(tmp_path_factory):
    base = tmp_path_factory.mktemp("tiny") / "tiny"
    return pack_rings(base, n_per_class=4, size=32, n_layers=2, k=2)


@pytest.fixture(scope="module")
def tiny_run(tiny_pack, tmp_path_factory):
    view = packed_io.load_packed(tiny_pack)
    out_dir = tmp_path_factory.mktemp("tiny_run")
    result = train_loop.train_model(view, 0, tiny_settings(), out_dir)
    return view, result, out_dir


class TestEpochLog:
    def test_one_row_per_epoch_with_schema(self, tiny_run):
        _, result, out_dir = tiny_run
        text = (out_dir / "fold0_epochs.tsv").read_text(encoding="utf-8")
        lines = text.splitlines()
        assert lines[0] == "epoch\ttrain_loss\tval_loss\tval_acc\tseconds\tval_digest"
        assert len(lines) == 1 + result.epochs_run == 3
        for i, line in enumerate(lines[1:]):
            fields = line.split("\t")
            assert int(fields[0]) == i
            assert all(math.isfinite(float(v)) for v in fields[1:5])
            assert len(fields[5]) == 32  # 128-bit hex digest

    def test_val_digest_constant_across_epochs(self, tiny_run):
        _, result, _ = tiny_run
        assert len({row.val_digest for row in result.rows}) == 1

    def test_epochs_run_matches_budget_without_early_stop(self, tiny_run):
        _, result, _ = tiny_run
        assert result.epochs_run == 2
        assert result.final_train_accuracy is None


class TestArtifacts:
    def test_predictions_parse_and_score(self, tiny_run):
        view, result, _ = tiny_run
        truth = view.truth()
        for name in ("val", "test"):
            pred = eval_kit.parse_predictions(result.prediction_files[name])
            assert pred.metadata["model"] == "mobilenet_v2_3d"
            assert pred.metadata["split"] == name
            assert pred.metadata["pretrained"] == "false"
            assert pred.metadata["epochs"] == "2"
            assert pred.metadata["layers"] == "2"
            float(pred.metadata["seconds_per_epoch"])
            ids = [sample_id for sample_id, _ in pred.rows]
            assert ids == sorted(ids)
            for _, probs in pred.rows:
                assert abs(sum(probs) - 1.0) < 1e-6
            report = eval_kit.score(pred, truth)
            assert 0.0 <= report.accuracy <= 1.0

    def test_prediction_rows_cover_their_split(self, tiny_run):
        view, result, _ = tiny_run
        train_ids, val_ids, test_ids = view.split.fold_members(0)
        for name, expected in (("val", val_ids), ("test", test_ids)):
            pred = eval_kit.parse_predictions(result.prediction_files[name])
            assert [sample_id for sample_id, _ in pred.rows] == sorted(expected)

    def test_checkpoint_restores_into_a_fresh_model(self, tiny_run):
        _, result, _ = tiny_run
        state = torch.load(result.checkpoint, map_location="cpu",
                           weights_only=True)
        fresh = models.build_model(tiny_settings())
        fresh.load_state_dict(state)  # raises on any key/shape mismatch


class TestDeterminism:
    def test_reruns_are_bit_identical_apart_from_timing(self, tiny_pack,
                                                        tmp_path):
        def stable_lines(path):
            lines = path.read_text(encoding="utf-8").splitlines()
            return [l for l in lines if not l.startswith("#seconds_per_epoch=")]

        view = packed_io.load_packed(tiny_pack)
        files = []
        for run in ("a", "b"):
            result = train_loop.train_model(view, 0, tiny_settings(),
                                            tmp_path / run)
            files.append(result.prediction_files)
        for name in ("val", "test"):
            assert stable_lines(files[0][name]) == stable_lines(files[1][name])

    def test_augmentation_touches_training_only(self, tiny_pack, tmp_path):
        view = packed_io.load_packed(tiny_pack)
        results = {}
        for threshold in (0.0, 1.0):
            results[threshold] = train_loop.train_model(
                view, 0, tiny_settings(augment_threshold=threshold),
                tmp_path / f"t{threshold}")
        digests = {r.rows[-1].val_digest for r in results.values()}
        assert len(digests) == 1, "validation inputs must ignore augmentation"
        losses = {round(r.rows[-1].train_loss, 9) for r in results.values()}
        assert len(losses) == 2, "flips must actually change training"


class TestFailureModes:
    def test_divergence_aborts_with_log(self, tiny_pack, tmp_path):
        view = packed_io.load_packed(tiny_pack)
        settings = tiny_settings(learning_rate=1e30, epochs=8)
        with pytest.raises(train_loop.TrainerError, match="non-finite loss"):
            train_loop.train_model(view, 0, settings, tmp_path)
        log = tmp_path / "fold0_epochs.tsv"
        assert log.is_file()
        assert log.read_text(encoding="utf-8").startswith("epoch\ttrain_loss")

    def test_fold_without_training_samples(self, tmp_path):
        blob = pack_rings(tmp_path / "onefold", n_per_class=2, size=32,
                          n_layers=2, k=1)
        view = packed_io.load_packed(blob)
        with pytest.raises(train_loop.TrainerError, match="no training samples"):
            train_loop.train_model(view, 0, tiny_settings(), tmp_path / "out")

    def test_fold_index_out_of_range(self, tiny_pack, tmp_path):
        view = packed_io.load_packed(tiny_pack)
        with pytest.raises(packed_io.FormatError, match="outside"):
            train_loop.train_model(view, 5, tiny_settings(), tmp_path)


class TestEarlyStop:
    def test_target_accuracy_stops_the_run(self, tiny_pack, tmp_path):
        view = packed_io.load_packed(tiny_pack)
        settings = tiny_settings(epochs=30, target_train_accuracy=0.0)
        result = train_loop.train_model(view, 0, settings, tmp_path)
        assert result.epochs_run == 1
        assert result.final_train_accuracy is not None
        pred = eval_kit.parse_predictions(result.prediction_files["val"])
        assert pred.metadata["epochs"] == "1"


class TestValDigest:
    def test_digest_is_batch_size_invariant(self, tiny_pack):
        view = packed_io.load_packed(tiny_pack)
        model = models.build_model(tiny_settings())
        _, val_ids, _ = view.split.fold_members(0)
        digests = set()
        for batch in (1, 2, 16):
            _, _, digest = train_loop._evaluate(
                model, view, val_ids, tiny_settings(), batch)
            digests.add(digest)
        assert len(digests) == 1

    def test_digest_tracks_input_content(self, tiny_pack, tmp_path):
        view = packed_io.load_packed(tiny_pack)
        model = models.build_model(tiny_settings())
        _, val_ids, _ = view.split.fold_members(0)
        settings = tiny_settings()
        _, _, clean = train_loop._evaluate(model, view, val_ids, settings, 4)

        class Flipping(packed_io.PackedView):
            def load_tensor(self, sample_id):
                return np.ascontiguousarray(
                    super().load_tensor(sample_id)[:, :, ::-1])

        tampered = Flipping(view.blob_path, view.rows, view.split)
        _, _, dirty = train_loop._evaluate(model, tampered, val_ids, settings, 4)
        assert clean != dirty
