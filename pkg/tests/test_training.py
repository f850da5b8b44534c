import csv
import math

import numpy as np
import pytest
import torch

from conftest import make_record
from rwt.datamodel import DatasetManifest, ManifestRecord, ScoreMap, TextLabel
from rwt.io import save_image, score_map_path, write_tensor
from rwt.nets import ModelVariant, OverlayTextNet
from rwt.training import (
    EpochStats,
    TrainConfig,
    TrainExample,
    TrainState,
    evaluate_loss,
    load_examples,
    plateau_step,
    predict_probabilities,
    resize_and_pad,
    train_classifier,
    write_history_csv,
)


def make_example(label: int, region: float, affinity: float, side: int = 8) -> TrainExample:
    image = np.full((side, side, 3), 0.5, dtype=np.float32)
    r = np.full((side // 2, side // 2), region, dtype=np.float32)
    a = np.full((side // 2, side // 2), affinity, dtype=np.float32)
    return TrainExample(image, ScoreMap.from_channels(r, a), label)


def separable_toy(n_per_class: int = 10):
    """Positives light up the region channel, negatives the affinity channel."""
    train = [make_example(1, 1.0, 0.0) for _ in range(n_per_class)]
    train += [make_example(0, 0.0, 1.0) for _ in range(n_per_class)]
    val = [make_example(1, 1.0, 0.0), make_example(0, 0.0, 1.0)]
    return train, val


class TestResizeAndPad:
    def test_square_input_unchanged(self):
        image = np.random.default_rng(0).uniform(size=(224, 224, 3)).astype(np.float32)
        out = resize_and_pad(image, 224)
        np.testing.assert_array_equal(out, image)

    def test_half_aspect_landscape(self):
        # 200 rows x 400 cols scales to 112x224 with 56 black rows above
        # and below the content.
        image = np.full((200, 400, 3), 0.8, dtype=np.float32)
        out = resize_and_pad(image, 224)
        assert out.shape == (224, 224, 3)
        assert np.all(out[:56] == 0.0)
        assert np.all(out[168:] == 0.0)
        assert np.all(out[56:168] > 0.0)

    def test_three_to_one_landscape_rounding(self):
        # 100 rows x 300 cols: shorter side rounds to 75, pads split 74/75
        # with the spare row at the bottom.
        image = np.full((100, 300, 3), 0.8, dtype=np.float32)
        out = resize_and_pad(image, 224)
        assert np.all(out[:74] == 0.0)
        assert np.all(out[149:] == 0.0)
        assert np.all(out[74:149] > 0.0)

    def test_portrait_pads_columns(self):
        image = np.full((300, 100, 3), 0.8, dtype=np.float32)
        out = resize_and_pad(image, 224)
        assert np.all(out[:, :74] == 0.0)
        assert np.all(out[:, 149:] == 0.0)
        assert np.all(out[:, 74:149] > 0.0)

    def test_content_mass_preserved_approximately(self):
        image = np.full((50, 100, 3), 1.0, dtype=np.float32)
        out = resize_and_pad(image, 224)
        content_rows = int(round(50 * 224 / 100))
        assert out.sum() == pytest.approx(content_rows * 224 * 3, rel=0.02)

    def test_rejects_zero_area(self):
        with pytest.raises(ValueError):
            resize_and_pad(np.zeros((0, 10, 3), dtype=np.float32), 224)

    def test_output_dtype_and_range(self):
        image = np.random.default_rng(1).uniform(size=(30, 60, 3)).astype(np.float32)
        out = resize_and_pad(image, 64)
        assert out.dtype == np.float32
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestTrainConfig:
    def test_defaults_match_protocol(self):
        cfg = TrainConfig()
        assert cfg.lr0 == 0.015
        assert cfg.momentum == 0.9
        assert cfg.weight_decay == 1e-5
        assert cfg.batch_size == 32
        assert cfg.anneal_factor == 0.5
        assert cfg.plateau_epsilon == 1e-4
        assert cfg.plateau_patience_epochs == 1
        assert cfg.min_lr == 1e-5
        assert cfg.target_side == 224

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"lr0": 0.0},
            {"batch_size": 0},
            {"max_epochs": 0},
            {"anneal_factor": 1.0},
            {"anneal_factor": 0.0},
            {"plateau_patience_epochs": 0},
            {"min_lr": 0.0},
            {"min_lr": 0.015},
            {"target_side": 15},
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)


class TestPlateauStep:
    def test_improvement_updates_best_without_anneal(self):
        cfg = TrainConfig()
        state = TrainState(current_lr=0.015)
        state = plateau_step(state, 1.0, cfg)
        state = plateau_step(state, 0.8, cfg)
        assert state.best_val_loss == 0.8
        assert state.current_lr == 0.015

    def test_single_stall_halves_lr(self):
        cfg = TrainConfig()
        state = TrainState(current_lr=0.015)
        state = plateau_step(state, 1.0, cfg)
        state = plateau_step(state, 1.0, cfg)
        assert state.current_lr == pytest.approx(0.0075)
        assert state.best_val_loss == 1.0

    def test_repeated_stalls_keep_halving(self):
        cfg = TrainConfig()
        state = TrainState(current_lr=0.015)
        for loss in (1.0, 1.0, 1.0):
            state = plateau_step(state, loss, cfg)
        assert state.current_lr == pytest.approx(0.00375)

    def test_tiny_improvement_counts_as_plateau(self):
        cfg = TrainConfig(plateau_epsilon=1e-4)
        state = TrainState(current_lr=0.015)
        state = plateau_step(state, 1.0, cfg)
        state = plateau_step(state, 1.0 - 5e-5, cfg)
        assert state.current_lr == pytest.approx(0.0075)

    def test_patience_two_needs_two_stalls(self):
        cfg = TrainConfig(plateau_patience_epochs=2)
        state = TrainState(current_lr=0.015)
        state = plateau_step(state, 1.0, cfg)
        state = plateau_step(state, 1.0, cfg)
        assert state.current_lr == 0.015
        state = plateau_step(state, 1.0, cfg)
        assert state.current_lr == pytest.approx(0.0075)

    def test_counter_resets_after_anneal(self):
        cfg = TrainConfig()
        state = TrainState(current_lr=0.015)
        state = plateau_step(state, 1.0, cfg)
        state = plateau_step(state, 1.0, cfg)
        assert state.epochs_since_improvement == 0


class TestTrainExampleValidation:
    def test_rejects_bad_label(self):
        with pytest.raises(ValueError, match="label"):
            make_example(2, 0.5, 0.5)

    def test_rejects_mismatched_pair(self):
        image = np.full((8, 8, 3), 0.5, dtype=np.float32)
        small = ScoreMap(np.zeros((2, 2, 2), dtype=np.float32))
        with pytest.raises(ValueError, match="pair"):
            TrainExample(image, small, 1)


class TestOptimizerSemantics:
    def test_sgd_step_matches_hand_rule(self):
        # One linear neuron, two parameters, double precision. The update
        # must follow: g = grad + wd*theta; buf = m*buf + g; theta -= lr*buf.
        lr, momentum, wd = 0.015, 0.9, 1e-5
        model = torch.nn.Linear(1, 1).double()
        with torch.no_grad():
            model.weight.fill_(0.7)
            model.bias.fill_(-0.2)
        opt = torch.optim.SGD(model.parameters(), lr=lr, momentum=momentum, weight_decay=wd)
        x = torch.tensor([[1.5]], dtype=torch.float64)
        y = torch.tensor([[1.0]], dtype=torch.float64)

        w, b = 0.7, -0.2
        buf_w, buf_b = 0.0, 0.0
        for step in range(2):
            opt.zero_grad()
            loss = ((model(x) - y) ** 2).mean()
            loss.backward()
            gw = float(model.weight.grad)
            gb = float(model.bias.grad)
            opt.step()
            gw += wd * w
            gb += wd * b
            buf_w = momentum * buf_w + gw
            buf_b = momentum * buf_b + gb
            w -= lr * buf_w
            b -= lr * buf_b
            assert float(model.weight.detach()) == pytest.approx(w, abs=1e-7), f"step {step}"
            assert float(model.bias.detach()) == pytest.approx(b, abs=1e-7), f"step {step}"

    def test_weight_decay_reaches_gradient_free_parameters(self):
        # All-zero score maps give the linear model zero feature gradients,
        # so any weight movement comes from the decay term alone.
        train = [make_example(1, 0.0, 0.0), make_example(0, 0.0, 0.0)]
        val = list(train)
        cfg = TrainConfig(
            variant=ModelVariant.BINARIZED_LINEAR,
            weight_decay=0.1,
            max_epochs=1,
            seed=0,
        )
        model = OverlayTextNet(ModelVariant.BINARIZED_LINEAR)
        with torch.no_grad():
            model.linear.weight.fill_(0.5)
            model.linear.bias.zero_()
        result = train_classifier(train, val, cfg, model=model)
        expected = 0.5 * (1.0 - cfg.lr0 * cfg.weight_decay)
        got = float(result.model.linear.weight.detach()[0, 0])
        assert got == pytest.approx(expected, abs=1e-6)
        assert got != 0.5


class TestTrainClassifier:
    def test_rejects_empty_sets(self):
        train, val = separable_toy(2)
        with pytest.raises(ValueError, match="non-empty"):
            train_classifier([], val)
        with pytest.raises(ValueError, match="non-empty"):
            train_classifier(train, [])

    def test_rejects_single_class_train(self):
        train = [make_example(1, 1.0, 0.0) for _ in range(4)]
        _, val = separable_toy(1)
        with pytest.raises(ValueError, match="both classes"):
            train_classifier(train, val, TrainConfig(variant=ModelVariant.BINARIZED_LINEAR))

    def test_separable_toy_converges(self):
        train, val = separable_toy(10)
        cfg = TrainConfig(variant=ModelVariant.BINARIZED_LINEAR, max_epochs=50, seed=0)
        result = train_classifier(train, val, cfg)
        assert min(h.train_loss for h in result.history) < 0.1
        assert result.epochs_run <= 50

    def test_initial_lr_recorded_in_history(self):
        train, val = separable_toy(4)
        cfg = TrainConfig(variant=ModelVariant.BINARIZED_LINEAR, max_epochs=3, seed=0)
        result = train_classifier(train, val, cfg)
        assert result.history[0].epoch == 0
        assert result.history[0].lr == 0.015

    def test_lr_never_increases(self):
        train, val = separable_toy(10)
        cfg = TrainConfig(variant=ModelVariant.BINARIZED_LINEAR, max_epochs=30, seed=0)
        result = train_classifier(train, val, cfg)
        lrs = [h.lr for h in result.history]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))

    def test_lr_steps_only_by_anneal_factor(self):
        train, val = separable_toy(10)
        cfg = TrainConfig(variant=ModelVariant.BINARIZED_LINEAR, max_epochs=30, seed=0)
        result = train_classifier(train, val, cfg)
        for h in result.history:
            ratio = math.log(h.lr / cfg.lr0, cfg.anneal_factor)
            assert ratio == pytest.approx(round(ratio), abs=1e-9)

    def test_deterministic_history_for_same_seed(self):
        train, val = separable_toy(6)
        cfg = TrainConfig(variant=ModelVariant.BINARIZED_LINEAR, max_epochs=5, seed=11)
        a = train_classifier(train, val, cfg)
        b = train_classifier(train, val, cfg)
        assert [h.train_loss for h in a.history] == [h.train_loss for h in b.history]
        assert [h.val_loss for h in a.history] == [h.val_loss for h in b.history]

    def test_divergence_aborts_with_diagnostic(self):
        train, val = separable_toy(4)
        cfg = TrainConfig(
            variant=ModelVariant.BINARIZED_LINEAR,
            lr0=1e10,
            weight_decay=1e30,
            max_epochs=5,
            seed=0,
        )
        with pytest.raises(RuntimeError, match="diverged"):
            train_classifier(train, val, cfg)

    def test_lr_floor_stops_early(self):
        # Constant val loss forces an anneal every epoch; from 0.015 the
        # floor of 1e-5 is crossed after 11 halvings, well before epoch 30.
        train, _ = separable_toy(3)
        val = [make_example(1, 0.0, 0.0), make_example(0, 0.0, 0.0)]
        cfg = TrainConfig(
            variant=ModelVariant.BINARIZED_LINEAR, max_epochs=30, seed=0
        )
        result = train_classifier(train, val, cfg)
        if result.stopped_reason == "lr_floor":
            assert result.epochs_run < 30

    def test_returns_eval_model(self):
        train, val = separable_toy(3)
        cfg = TrainConfig(variant=ModelVariant.BINARIZED_LINEAR, max_epochs=2, seed=0)
        result = train_classifier(train, val, cfg)
        assert not result.model.training


class TestEvaluation:
    def test_zero_model_loss_is_log_two(self):
        model = OverlayTextNet(ModelVariant.BINARIZED_LINEAR)
        with torch.no_grad():
            model.linear.weight.zero_()
            model.linear.bias.zero_()
        train, _ = separable_toy(5)
        assert evaluate_loss(model, train) == pytest.approx(math.log(2.0), abs=1e-6)

    def test_zero_model_probabilities_are_half(self):
        model = OverlayTextNet(ModelVariant.BINARIZED_LINEAR)
        with torch.no_grad():
            model.linear.weight.zero_()
            model.linear.bias.zero_()
        train, _ = separable_toy(3)
        probs = predict_probabilities(model, train)
        assert probs.shape == (6,)
        np.testing.assert_allclose(probs, 0.5, atol=1e-7)

    def test_probabilities_in_unit_interval(self):
        train, val = separable_toy(4)
        cfg = TrainConfig(variant=ModelVariant.BINARIZED_LINEAR, max_epochs=2, seed=0)
        result = train_classifier(train, val, cfg)
        probs = predict_probabilities(result.model, val)
        assert np.all(probs >= 0.0) and np.all(probs <= 1.0)


class TestHistoryCsv:
    def test_round_trip(self, tmp_path):
        history = [
            EpochStats(epoch=0, train_loss=0.9, val_loss=0.8, val_f1=0.5, lr=0.015, annealed=False),
            EpochStats(epoch=1, train_loss=0.7, val_loss=0.81, val_f1=0.6, lr=0.015, annealed=True),
        ]
        path = tmp_path / "history.csv"
        write_history_csv(path, history)
        with path.open() as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2
        assert rows[0]["epoch"] == "0"
        assert float(rows[0]["lr"]) == 0.015
        assert rows[1]["annealed"] == "1"


class TestLoadExamples:
    def write_pair(self, root, maps_dir, image_id, side, positive):
        record = make_record(
            image_id, TextLabel.OVERLAYING if positive else TextLabel.ORGANIC
        )
        image = np.full((side, side, 3), 0.4, dtype=np.float32)
        path = root / record.image_path
        path.parent.mkdir(parents=True, exist_ok=True)
        save_image(path, image)
        score_map = ScoreMap(
            np.full((side // 2, side // 2, 2), 0.25, dtype=np.float32)
        )
        write_tensor(score_map_path(maps_dir, image_id), score_map)
        return record

    def test_loads_only_binary_records(self, tmp_path):
        maps_dir = tmp_path / "maps"
        maps_dir.mkdir()
        records = [
            self.write_pair(tmp_path, maps_dir, "a", 8, True),
            self.write_pair(tmp_path, maps_dir, "b", 8, False),
            ManifestRecord(image_id="c", image_path="c.png", category="unlabeled"),
        ]
        examples = load_examples(DatasetManifest(records), tmp_path, maps_dir)
        assert [e.image_id for e in examples] == ["a", "b"]
        assert [e.label for e in examples] == [1, 0]
        assert examples[0].image.shape == (8, 8, 3)

    def test_resize_to_squares_images(self, tmp_path):
        maps_dir = tmp_path / "maps"
        maps_dir.mkdir()
        record = make_record("wide", TextLabel.ORGANIC)
        image = np.full((10, 20, 3), 0.6, dtype=np.float32)
        path = tmp_path / record.image_path
        path.parent.mkdir(parents=True, exist_ok=True)
        save_image(path, image)
        score_map = ScoreMap(np.full((8, 8, 2), 0.25, dtype=np.float32))
        write_tensor(score_map_path(maps_dir, "wide"), score_map)
        examples = load_examples(
            DatasetManifest([record]), tmp_path, maps_dir, resize_to=16
        )
        assert examples[0].image.shape == (16, 16, 3)
