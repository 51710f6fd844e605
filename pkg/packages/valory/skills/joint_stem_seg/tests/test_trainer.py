# -*- coding: utf-8 -*-
# ------------------------------------------------------------------------------
#
#   Copyright 2026 Valory AG
#
#   Licensed under the Apache License, Version 2.0 (the "License");
#   you may not use this file except in compliance with the License.
#   You may obtain a copy of the License at
#
#       http://www.apache.org/licenses/LICENSE-2.0
#
#   Unless required by applicable law or agreed to in writing, software
#   distributed under the License is distributed on an "AS IS" BASIS,
#   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
#   See the License for the specific language governing permissions and
#   limitations under the License.
#
# ------------------------------------------------------------------------------

"""This module contains the tests of the training protocol."""

import logging
from dataclasses import replace
from pathlib import Path
from typing import List

import numpy as np
import pytest

from packages.valory.skills.joint_stem_seg import trainer
from packages.valory.skills.joint_stem_seg.autodiff.tensor import (
    Mode,
    ShapeError,
    Tensor,
    backward,
    no_grad,
)
from packages.valory.skills.joint_stem_seg.dataset.io import Sample
from packages.valory.skills.joint_stem_seg.models import (
    LossConfig,
    MatchConfig,
    NetworkConfig,
    PreprocessConfig,
    TrainConfig,
)
from packages.valory.skills.joint_stem_seg.network.model import NetworkOutput, forward
from packages.valory.skills.joint_stem_seg.network.params import ModelParams, he_init
from packages.valory.skills.joint_stem_seg.network.serialization import (
    CheckpointError,
    load_params,
    read_container,
    save_params,
)
from packages.valory.skills.joint_stem_seg.tests.conftest import make_sample
from packages.valory.skills.joint_stem_seg.trainer import (
    BEST_CHECKPOINT,
    LAST_CHECKPOINT,
    LOG_COLUMNS,
    LOG_FILE,
    DivergenceError,
    OptimizerState,
    adam_step,
    compute_loss,
    history_to_csv,
    load_checkpoint,
    lr_at,
    predict,
    prepare_samples,
    train,
    train_step,
    validate,
)


@pytest.fixture
def params(tiny_network_config: NetworkConfig) -> ModelParams:
    """64-bit tiny network parameters."""
    return he_init(tiny_network_config, np.random.default_rng(0), np.float64)


@pytest.fixture
def prepared(synthetic_samples: List[Sample]) -> List[trainer.PreparedSample]:
    """The synthetic samples ready for training at 64-bit precision."""
    return prepare_samples(synthetic_samples, PreprocessConfig(), 5, np.float64)


def plant_only(cfg: NetworkConfig) -> ModelParams:
    """64-bit parameters of the plant-only variant of a network."""
    return he_init(cfg.with_heads("plant"), np.random.default_rng(0), np.float64)


def train_forward(params: ModelParams, inputs: np.ndarray) -> NetworkOutput:
    """A train-mode forward pass with seeded dropout."""
    return forward(
        Tensor(inputs, dtype=np.float64), params, Mode.TRAIN, np.random.default_rng(0)
    )


def batch_loss(
    params: ModelParams, batch: List[trainer.PreparedSample], loss_cfg: LossConfig
) -> float:
    """The multi-task loss of a batch in train mode, without recording a graph."""
    inputs = Tensor(np.stack([item.inputs for item in batch]), dtype=np.float64)
    plant = np.stack([item.plant_target for item in batch])
    stem = np.stack([item.stem_target for item in batch])
    with no_grad():
        output = forward(inputs, params, Mode.TRAIN)
        return compute_loss(output, plant, stem, loss_cfg).item()


class TestAdam:
    """Tests for adam_step."""

    cfg = TrainConfig()

    def test_zero_gradient(self, params: ModelParams) -> None:
        """A zero gradient on a fresh state changes nothing."""
        before = params.copy()
        state = OptimizerState.initial(params)
        adam_step(params, {name: np.zeros(t.shape) for name, t in params}, state, 0.01, self.cfg)
        for (_, a), (_, b) in zip(before, params):
            np.testing.assert_array_equal(a.data, b.data)
        assert state.step == 1

    def test_first_step_size(self, params: ModelParams) -> None:
        """The first bias-corrected step moves every value by about lr against the gradient."""
        before = params.copy()
        state = OptimizerState.initial(params)
        grads = {name: np.full(t.shape, -3.0) for name, t in params}
        adam_step(params, grads, state, 0.01, self.cfg)
        for (_, a), (_, b) in zip(before, params):
            np.testing.assert_allclose(b.data - a.data, 0.01, rtol=1e-6)

    def test_missing_gradient_is_zero(self, params: ModelParams) -> None:
        """Parameters without a gradient are left in place."""
        before = params.copy()
        adam_step(params, {}, OptimizerState.initial(params), 0.01, self.cfg)
        name = "plant.classifier.kernel"
        np.testing.assert_array_equal(before[name].data, params[name].data)

    def test_repeatable(self, params: ModelParams) -> None:
        """The same state and gradients give the same update."""
        grads = {name: np.full(t.shape, 0.5) for name, t in params}
        first, second = params.copy(), params.copy()
        adam_step(first, grads, OptimizerState.initial(first), 0.01, self.cfg)
        adam_step(second, grads, OptimizerState.initial(second), 0.01, self.cfg)
        for (_, a), (_, b) in zip(first, second):
            np.testing.assert_array_equal(a.data, b.data)

    def test_gradient_shape(self, params: ModelParams) -> None:
        """A gradient of the wrong shape is rejected."""
        with pytest.raises(ShapeError, match="plant.classifier.bias"):
            adam_step(
                params,
                {"plant.classifier.bias": np.zeros(7)},
                OptimizerState.initial(params),
                0.01,
                self.cfg,
            )

    def test_moments_survive_arrays(self, params: ModelParams) -> None:
        """Optimizer moments rebuild from their container arrays."""
        state = OptimizerState.initial(params)
        adam_step(params, {name: np.ones(t.shape) for name, t in params}, state, 0.01, self.cfg)
        restored = OptimizerState.from_arrays(params, state.to_arrays(), state.step)
        for name in state.first_moments:
            np.testing.assert_array_equal(
                state.first_moments[name], restored.first_moments[name]
            )
            np.testing.assert_array_equal(
                state.second_moments[name], restored.second_moments[name]
            )

    def test_missing_moment(self, params: ModelParams) -> None:
        """A checkpoint without moments is refused."""
        with pytest.raises(CheckpointError, match="optimizer moment"):
            OptimizerState.from_arrays(params, {}, 1)


class TestSchedule:
    """Tests for lr_at."""

    @pytest.mark.parametrize(
        "epoch, expected",
        [(0, 0.01), (49, 0.01), (50, 0.001), (249, 0.001), (250, 1e-4), (1500, 1e-5)],
    )
    def test_steps(self, epoch: int, expected: float) -> None:
        """The rate drops tenfold at epochs 50, 250 and 1000."""
        assert lr_at(epoch, TrainConfig()) == pytest.approx(expected)

    def test_negative_epoch(self) -> None:
        """Epochs count from zero."""
        with pytest.raises(ValueError, match="non-negative"):
            lr_at(-1, TrainConfig())

    def test_decay_epochs_increase(self) -> None:
        """Decay epochs must be strictly increasing."""
        with pytest.raises(ValueError, match="strictly increasing"):
            TrainConfig(lr_decay_epochs=(50, 50))


class TestLoss:
    """Tests for the training objective on network outputs."""

    def test_prepared_arrays_are_frozen(self, prepared: List[trainer.PreparedSample]) -> None:
        """Prepared inputs and targets are read-only and stems are rendered."""
        item = prepared[0]
        assert not item.inputs.flags.writeable
        assert not item.stem_target.flags.writeable
        assert item.inputs.shape == (4, 32, 32)
        assert set(np.unique(item.stem_target)) <= {0, 1, 2}
        assert item.stem_target.any() == bool(item.sample.stems)

    @pytest.mark.parametrize("alpha", [0.0, 1.0])
    def test_encoder_learns_from_either_task(
        self, params: ModelParams, prepared: List[trainer.PreparedSample], alpha: float
    ) -> None:
        """Each loss alone sends a nonzero gradient into every shared encoder parameter."""
        item = next(p for p in prepared if p.sample.stems)
        output = train_forward(params, item.inputs[None])
        loss = compute_loss(
            output, item.plant_target[None], item.stem_target[None], LossConfig(alpha=alpha)
        )
        backward(loss)
        encoder = params.names("encoder.")
        assert {name.rsplit(".", 1)[1] for name in encoder} == {"kernel", "bias", "gamma", "beta"}
        for name in encoder:
            grad = params[name].grad
            assert grad is not None and np.abs(grad).sum() > 0, name
        silent = "plant." if alpha == 0.0 else "stem."
        for name in params.names(silent):
            grad = params[name].grad
            assert grad is None or not grad.any(), name

    def test_single_head_uses_its_own_loss(
        self, tiny_network_config: NetworkConfig, prepared: List[trainer.PreparedSample]
    ) -> None:
        """A plant-only network trains on the cross entropy alone."""
        params = plant_only(tiny_network_config)
        item = prepared[0]
        output = train_forward(params, item.inputs[None])
        loss = compute_loss(
            output, item.plant_target[None], item.stem_target[None], LossConfig(alpha=0.0)
        )
        assert loss.item() > 0.0

    @pytest.mark.slow
    def test_small_step_descends(
        self, tiny_network_config: NetworkConfig, prepared: List[trainer.PreparedSample]
    ) -> None:
        """A small ADAM step on a fixed batch rarely increases its loss."""
        cfg = replace(tiny_network_config, dropout_p=0.0)
        train_cfg = TrainConfig(dtype="float64")
        batch = prepared[:2]
        increases = 0
        for seed in range(100):
            params = he_init(cfg, np.random.default_rng(seed), np.float64)
            state = OptimizerState.initial(params)
            before = train_step(params, state, batch, 1e-4, train_cfg, np.random.default_rng(0))
            after = batch_loss(params, batch, train_cfg.loss)
            increases += after > before
        assert increases <= 5


class TestTrain:
    """Tests for the training loop."""

    def test_empty_train_split(
        self, tiny_network_config: NetworkConfig, tiny_train_config: TrainConfig
    ) -> None:
        """Training needs data."""
        with pytest.raises(ValueError, match="train split is empty"):
            train([], [], tiny_network_config, tiny_train_config)

    def test_indivisible_images(
        self, tiny_network_config: NetworkConfig, tiny_train_config: TrainConfig
    ) -> None:
        """Images must fit the network's divisibility."""
        with pytest.raises(ShapeError, match="multiples of 4"):
            train([make_sample(size=(18, 16))], [], tiny_network_config, tiny_train_config)

    def test_outputs(
        self,
        tmp_path: Path,
        synthetic_samples: List[Sample],
        tiny_network_config: NetworkConfig,
        tiny_train_config: TrainConfig,
    ) -> None:
        """A run writes the best and last checkpoints and the epoch log."""
        result = train(
            synthetic_samples[:4],
            synthetic_samples[4:],
            tiny_network_config,
            tiny_train_config,
            out_dir=tmp_path,
        )
        assert (tmp_path / BEST_CHECKPOINT).exists()
        assert (tmp_path / LAST_CHECKPOINT).exists()
        lines = (tmp_path / LOG_FILE).read_text().splitlines()
        assert lines[0] == ",".join(LOG_COLUMNS)
        assert len(lines) == 1 + tiny_train_config.max_epochs
        assert [row["epoch"] for row in result.history] == [0, 1]
        assert result.best_epoch in (0, 1)
        best = load_params(tmp_path / BEST_CHECKPOINT, tiny_network_config)
        assert best.config == tiny_network_config
        header, _ = read_container(tmp_path / LAST_CHECKPOINT)
        assert header["kind"] == "checkpoint"
        assert header["train_state"]["epoch"] == 1

    def test_deterministic(
        self,
        synthetic_samples: List[Sample],
        tiny_network_config: NetworkConfig,
        tiny_train_config: TrainConfig,
    ) -> None:
        """The same seed reproduces the losses bit for bit."""
        runs = [
            train(synthetic_samples[:4], [], tiny_network_config, tiny_train_config)
            for _ in range(2)
        ]
        assert [row["train_loss"] for row in runs[0].history] == [
            row["train_loss"] for row in runs[1].history
        ]
        for (_, a), (_, b) in zip(runs[0].params, runs[1].params):
            np.testing.assert_array_equal(a.data, b.data)

    def test_resume_reproduces_trajectory(
        self,
        tmp_path: Path,
        synthetic_samples: List[Sample],
        tiny_network_config: NetworkConfig,
        tiny_train_config: TrainConfig,
    ) -> None:
        """Stopping and resuming gives the same losses and parameters as one run."""
        data = (synthetic_samples[:4], synthetic_samples[4:], tiny_network_config)
        whole = train(*data, replace(tiny_train_config, max_epochs=3), out_dir=tmp_path / "whole")
        train(*data, replace(tiny_train_config, max_epochs=1), out_dir=tmp_path / "split")
        resumed = train(
            *data,
            replace(tiny_train_config, max_epochs=3),
            out_dir=tmp_path / "split",
            resume=True,
        )
        assert [row["train_loss"] for row in resumed.history] == [
            row["train_loss"] for row in whole.history
        ]
        for (_, a), (_, b) in zip(whole.params, resumed.params):
            np.testing.assert_array_equal(a.data, b.data)

    def test_resume_needs_checkpoint(
        self,
        tmp_path: Path,
        synthetic_samples: List[Sample],
        tiny_network_config: NetworkConfig,
        tiny_train_config: TrainConfig,
    ) -> None:
        """Resuming without a last checkpoint fails."""
        with pytest.raises(CheckpointError, match="nothing to resume"):
            train(
                synthetic_samples[:2],
                [],
                tiny_network_config,
                tiny_train_config,
                out_dir=tmp_path,
                resume=True,
            )

    def test_without_validation(
        self,
        tmp_path: Path,
        synthetic_samples: List[Sample],
        tiny_network_config: NetworkConfig,
        tiny_train_config: TrainConfig,
        caplog: pytest.LogCaptureFixture,
    ) -> None:
        """Without a validation split the last parameters become the best checkpoint."""
        with caplog.at_level(logging.WARNING):
            result = train(
                synthetic_samples[:2],
                [],
                tiny_network_config,
                replace(tiny_train_config, max_epochs=1),
                out_dir=tmp_path,
            )
        assert "Validation split is empty" in caplog.text
        assert result.best_epoch is None
        best = load_params(tmp_path / BEST_CHECKPOINT)
        for (_, a), (_, b) in zip(result.params, best):
            np.testing.assert_array_equal(a.data, b.data)

    def test_divergence(
        self,
        monkeypatch: pytest.MonkeyPatch,
        synthetic_samples: List[Sample],
        tiny_network_config: NetworkConfig,
        tiny_train_config: TrainConfig,
        caplog: pytest.LogCaptureFixture,
    ) -> None:
        """A non-finite loss stops the run with the epoch and step."""
        monkeypatch.setattr(trainer, "compute_loss", lambda *args: Tensor([float("nan")]))
        with pytest.raises(DivergenceError, match="epoch 0, step 0"):
            train(synthetic_samples[:2], [], tiny_network_config, tiny_train_config)
        assert "Loss became nan" in caplog.text

    def test_load_checkpoint_rejects_params_file(
        self, tmp_path: Path, params: ModelParams
    ) -> None:
        """A plain parameter file is not a training checkpoint."""
        path = tmp_path / "p.ckpt"
        save_params(params, path)
        with pytest.raises(CheckpointError, match="not a training checkpoint"):
            load_checkpoint(path, params.config)


class TestValidation:
    """Tests for validation and prediction."""

    def test_absent_head_has_no_score(
        self,
        tiny_network_config: NetworkConfig,
        prepared: List[trainer.PreparedSample],
    ) -> None:
        """A plant-only network reports no stem mAP."""
        params = plant_only(tiny_network_config)
        # eval mode needs tracked batch statistics
        train_forward(params, np.stack([p.inputs for p in prepared[:2]]))
        stem_map, seg_map = validate(params, prepared[:2], MatchConfig(), 3)
        assert stem_map is None
        assert seg_map is not None and 0.0 <= seg_map <= 1.0

    def test_empty_split(self, params: ModelParams) -> None:
        """An empty split has no scores."""
        assert validate(params, [], MatchConfig(), 3) == (None, None)

    def test_predict_is_deterministic(
        self, params: ModelParams, prepared: List[trainer.PreparedSample]
    ) -> None:
        """Eval-mode predictions repeat exactly and record no graph."""
        # eval mode needs tracked batch statistics
        train_forward(params, prepared[0].inputs[None])
        first = predict(params, prepared[0].inputs)
        second = predict(params, prepared[0].inputs)
        np.testing.assert_array_equal(first.stem_probs.data, second.stem_probs.data)
        assert first.plant_probs.node is None

    def test_history_csv(self) -> None:
        """Missing validation values are empty cells."""
        text = history_to_csv(
            [{"epoch": 0, "lr": 0.01, "train_loss": 1.5, "val_stem_mAP": None, "val_seg_mAP": 0.5}]
        )
        assert text.splitlines()[1] == "0,0.01,1.5,,0.5"
