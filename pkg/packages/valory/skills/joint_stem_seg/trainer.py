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

"""This module contains the training protocol: ADAM, the step schedule, mini-batches and checkpoints."""

import csv
import io
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from packages.valory.skills.joint_stem_seg.autodiff.tensor import (
    Mode,
    ShapeError,
    Tensor,
    backward,
    no_grad,
)
from packages.valory.skills.joint_stem_seg.dataset.io import Sample, render_stem_regions
from packages.valory.skills.joint_stem_seg.losses import (
    multi_task_loss,
    soft_iou_loss,
    weighted_cross_entropy,
)
from packages.valory.skills.joint_stem_seg.metrics import ImagePrediction, evaluate
from packages.valory.skills.joint_stem_seg.models import (
    PLANT_HEAD,
    STEM_HEAD,
    LossConfig,
    MatchConfig,
    NetworkConfig,
    PreprocessConfig,
    TrainConfig,
)
from packages.valory.skills.joint_stem_seg.network.model import (
    NetworkOutput,
    check_input_shape,
    forward,
)
from packages.valory.skills.joint_stem_seg.network.params import ModelParams, he_init
from packages.valory.skills.joint_stem_seg.network.serialization import (
    OPTIMIZER_PREFIX,
    CheckpointError,
    check_config,
    config_from_header,
    params_from_arrays,
    params_header,
    params_to_arrays,
    read_container,
    write_container,
)
from packages.valory.skills.joint_stem_seg.preprocess import preprocess_image
from packages.valory.skills.joint_stem_seg.stem_extraction import extract_stems
from packages.valory.skills.joint_stem_seg.utils import PathLike, atomic_write_text

_logger = logging.getLogger(__name__)

BEST_CHECKPOINT = "best.ckpt"
LAST_CHECKPOINT = "last.ckpt"
LOG_FILE = "log.csv"
LOG_COLUMNS = ("epoch", "lr", "train_loss", "val_stem_mAP", "val_seg_mAP")
CHECKPOINT_KIND = "checkpoint"
FIRST_MOMENT = "m"
SECOND_MOMENT = "v"


class DivergenceError(RuntimeError):
    """The training loss became non-finite."""


@dataclass
class OptimizerState:
    """ADAM first and second moments per parameter, and the number of steps taken."""

    first_moments: Dict[str, np.ndarray]
    second_moments: Dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def initial(cls, params: ModelParams) -> "OptimizerState":
        """Zero moments shaped like the parameters."""
        return cls(
            OrderedDict((name, np.zeros_like(t.data)) for name, t in params),
            OrderedDict((name, np.zeros_like(t.data)) for name, t in params),
        )

    def to_arrays(self) -> Dict[str, np.ndarray]:
        """The moments as named container arrays."""
        arrays: Dict[str, np.ndarray] = OrderedDict()
        for name, moment in self.first_moments.items():
            arrays[f"{OPTIMIZER_PREFIX}{FIRST_MOMENT}.{name}"] = moment
        for name, moment in self.second_moments.items():
            arrays[f"{OPTIMIZER_PREFIX}{SECOND_MOMENT}.{name}"] = moment
        return arrays

    @classmethod
    def from_arrays(
        cls, params: ModelParams, arrays: Mapping[str, np.ndarray], step: int
    ) -> "OptimizerState":
        """Rebuild the moments saved in a checkpoint."""
        try:
            first = OrderedDict(
                (name, arrays[f"{OPTIMIZER_PREFIX}{FIRST_MOMENT}.{name}"].copy())
                for name, _ in params
            )
            second = OrderedDict(
                (name, arrays[f"{OPTIMIZER_PREFIX}{SECOND_MOMENT}.{name}"].copy())
                for name, _ in params
            )
        except KeyError as e:
            raise CheckpointError(f"checkpoint lacks optimizer moment {e}") from e
        return cls(first, second, step)


def adam_step(
    params: ModelParams,
    grads: Mapping[str, Optional[np.ndarray]],
    state: OptimizerState,
    lr: float,
    cfg: TrainConfig,
) -> None:
    """One bias-corrected ADAM update of every parameter, in place.

    A parameter without a gradient is treated as having gradient zero.
    """
    state.step += 1
    beta1, beta2 = cfg.adam_beta1, cfg.adam_beta2
    correction1 = 1.0 - beta1**state.step
    correction2 = 1.0 - beta2**state.step
    for name, tensor in params:
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(tensor.data)
        if grad.shape != tensor.shape:
            raise ShapeError(
                f"gradient of {name} has shape {grad.shape}, parameter has {tensor.shape}"
            )
        m = state.first_moments[name]
        v = state.second_moments[name]
        if m.shape != tensor.shape:
            raise ShapeError(
                f"optimizer moment of {name} has shape {m.shape}, parameter has {tensor.shape}"
            )
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + cfg.adam_epsilon)
        tensor.data -= update.astype(tensor.dtype)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """The learning rate of an epoch: divided by the decay factor at every decay epoch reached."""
    if epoch < 0:
        raise ValueError(f"epoch must be non-negative, got {epoch}")
    decays = sum(1 for boundary in cfg.lr_decay_epochs if epoch >= boundary)
    return cfg.initial_lr / cfg.lr_decay_factor**decays


@dataclass(frozen=True, eq=False)
class PreparedSample:
    """A sample turned into network input and both training targets, once."""

    sample: Sample
    inputs: np.ndarray
    plant_target: np.ndarray
    stem_target: np.ndarray


def prepare_samples(
    samples: Sequence[Sample],
    preprocess_cfg: PreprocessConfig,
    stem_radius_px: int,
    dtype: np.dtype,
) -> List[PreparedSample]:
    """Preprocess images and render stem regions before training starts."""
    prepared = []
    for sample in samples:
        inputs = preprocess_image(sample.image, preprocess_cfg, dtype)
        inputs.setflags(write=False)
        plant = sample.labels.astype(np.int64)
        stem = render_stem_regions(sample, stem_radius_px).astype(np.int64)
        plant.setflags(write=False)
        stem.setflags(write=False)
        prepared.append(PreparedSample(sample, inputs, plant, stem))
    return prepared


def compute_loss(
    output: NetworkOutput,
    plant_target: np.ndarray,
    stem_target: np.ndarray,
    cfg: LossConfig,
) -> Tensor:
    """The multi-task loss; a single-task network uses its one component alone."""
    l_plant = (
        weighted_cross_entropy(
            output.plant_probs, plant_target, cfg.plant_class_weights, cfg.probability_floor
        )
        if output.plant_probs is not None
        else None
    )
    l_stem = (
        soft_iou_loss(output.stem_probs, stem_target, cfg.stem_foreground_classes)
        if output.stem_probs is not None
        else None
    )
    if l_plant is None:
        return l_stem  # type: ignore[return-value]
    if l_stem is None:
        return l_plant
    return multi_task_loss(l_stem, l_plant, cfg.alpha)  # type: ignore[return-value]


def _stack(batch: Sequence[PreparedSample]) -> Tuple[Tensor, np.ndarray, np.ndarray]:
    inputs = np.stack([item.inputs for item in batch])
    return (
        Tensor(inputs, dtype=inputs.dtype),
        np.stack([item.plant_target for item in batch]),
        np.stack([item.stem_target for item in batch]),
    )


def train_step(
    params: ModelParams,
    state: OptimizerState,
    batch: Sequence[PreparedSample],
    lr: float,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> float:
    """Forward, loss, backward and one ADAM update on a batch; returns the loss before the update."""
    inputs, plant_target, stem_target = _stack(batch)
    params.zero_grad()
    output = forward(inputs, params, Mode.TRAIN, rng)
    loss = compute_loss(output, plant_target, stem_target, cfg.loss)
    value = loss.item()
    if not math.isfinite(value):
        return value
    backward(loss)
    adam_step(params, {name: t.grad for name, t in params}, state, lr, cfg)
    return value


def predict(
    params: ModelParams, inputs: np.ndarray
) -> NetworkOutput:
    """Eval-mode forward pass of one C x H x W input without recording a graph."""
    with no_grad():
        return forward(Tensor(inputs[None], dtype=inputs.dtype), params, Mode.EVAL)


def validate(
    params: ModelParams,
    prepared: Sequence[PreparedSample],
    match_cfg: MatchConfig,
    min_area: int,
) -> Tuple[Optional[float], Optional[float]]:
    """Stem-detection mAP and segmentation mAP on a split (None where undefined)."""
    if not prepared:
        return None, None
    predictions = {}
    for item in prepared:
        output = predict(params, item.inputs)
        detections = (
            extract_stems(output.stem_probs.data[0], min_area, match_cfg.mm_per_pixel)
            if output.stem_probs is not None
            else []
        )
        plant = output.plant_probs.data[0] if output.plant_probs is not None else None
        predictions[item.sample.sample_id] = ImagePrediction(detections, plant)
    report = evaluate(predictions, [item.sample for item in prepared], match_cfg)
    stem_map = report.stem_map if STEM_HEAD in params.config.heads else None
    seg_map = report.seg_map if PLANT_HEAD in params.config.heads else None
    return stem_map, seg_map


@dataclass
class TrainResult:
    """The trained parameters and the per-epoch history."""

    params: ModelParams
    history: List[Dict[str, Any]] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_score: Optional[float] = None


def _score(stem_map: Optional[float], seg_map: Optional[float]) -> Optional[float]:
    """The model-selection score: the mean of the available validation mAPs."""
    values = [value for value in (stem_map, seg_map) if value is not None]
    return math.fsum(values) / len(values) if values else None


def history_to_csv(history: Sequence[Mapping[str, Any]]) -> str:
    """The per-epoch log as CSV."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(LOG_COLUMNS)
    for row in history:
        writer.writerow(
            ["" if row.get(column) is None else row[column] for column in LOG_COLUMNS]
        )
    return buffer.getvalue()


def save_checkpoint(
    path: PathLike,
    params: ModelParams,
    state: OptimizerState,
    train_state: Mapping[str, Any],
) -> None:
    """Write parameters, optimizer moments and the train state."""
    arrays = params_to_arrays(params)
    arrays.update(state.to_arrays())
    write_container(
        path,
        params_header(params, kind=CHECKPOINT_KIND, train_state=dict(train_state)),
        arrays,
    )


def load_checkpoint(
    path: PathLike, expected_config: NetworkConfig
) -> Tuple[ModelParams, OptimizerState, Dict[str, Any]]:
    """Read a training checkpoint saved for `expected_config`."""
    header, arrays = read_container(path)
    if header.get("kind") != CHECKPOINT_KIND or "train_state" not in header:
        raise CheckpointError(f"{path} is not a training checkpoint")
    stored = config_from_header(header, str(path))
    check_config(stored, expected_config, str(path))
    train_state = header["train_state"]
    params = params_from_arrays(
        stored,
        {k: v for k, v in arrays.items() if not k.startswith(OPTIMIZER_PREFIX)},
        str(path),
    )
    state = OptimizerState.from_arrays(params, arrays, int(train_state["optimizer_step"]))
    return params, state, train_state


def train(  # pylint: disable=too-many-arguments,too-many-locals
    train_samples: Sequence[Sample],
    val_samples: Sequence[Sample],
    net_cfg: NetworkConfig,
    train_cfg: TrainConfig,
    preprocess_cfg: PreprocessConfig = PreprocessConfig(),
    match_cfg: MatchConfig = MatchConfig(),
    out_dir: Optional[PathLike] = None,
    resume: bool = False,
    logger: Optional[logging.Logger] = None,
) -> TrainResult:
    """Train the network from He initialization, or resume from `last.ckpt`.

    Every epoch visits the train split once in an order drawn from
    (seed, epoch); dropout in step k draws from (seed, epoch, k). The
    validation mAPs are computed every `val_every` epochs and on the last
    epoch; their mean selects `best.ckpt`.
    """
    logger = logger or _logger
    if not train_samples:
        raise ValueError("the train split is empty")
    dtype = np.dtype(train_cfg.dtype)
    for sample in (*train_samples, *val_samples):
        check_input_shape((1, sample.image.shape[2], sample.height, sample.width), net_cfg)
    if not val_samples:
        logger.warning("Validation split is empty; no best checkpoint will be selected")

    train_set = prepare_samples(train_samples, preprocess_cfg, train_cfg.stem_radius_px, dtype)
    val_set = prepare_samples(val_samples, preprocess_cfg, train_cfg.stem_radius_px, dtype)
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    result = TrainResult(params=he_init(net_cfg, np.random.default_rng(train_cfg.seed), dtype))
    state = OptimizerState.initial(result.params)
    start_epoch = 0
    if resume:
        if out_path is None or not (out_path / LAST_CHECKPOINT).exists():
            raise CheckpointError(f"nothing to resume: no {LAST_CHECKPOINT} in {out_dir}")
        result.params, state, train_state = load_checkpoint(out_path / LAST_CHECKPOINT, net_cfg)
        start_epoch = int(train_state["epoch"]) + 1
        result.history = list(train_state["history"])
        result.best_epoch = train_state.get("best_epoch")
        result.best_score = train_state.get("best_score")
        logger.info(f"Resuming from epoch {start_epoch} of {train_cfg.max_epochs}")

    batch_size = train_cfg.batch_size
    for epoch in range(start_epoch, train_cfg.max_epochs):
        lr = lr_at(epoch, train_cfg)
        order = np.random.default_rng([train_cfg.seed, epoch]).permutation(len(train_set))
        losses = []
        for step, begin in enumerate(range(0, len(order), batch_size)):
            batch = [train_set[index] for index in order[begin : begin + batch_size]]
            rng = np.random.default_rng([train_cfg.seed, epoch, step])
            loss = train_step(result.params, state, batch, lr, train_cfg, rng)
            if not math.isfinite(loss):
                logger.error(f"Loss became {loss} at epoch {epoch}, step {step}")
                raise DivergenceError(
                    f"training diverged: loss {loss} at epoch {epoch}, step {step} "
                    f"(optimizer step {state.step + 1})"
                )
            losses.append(loss)
        train_loss = math.fsum(losses) / len(losses)

        stem_map = seg_map = None
        last_epoch = epoch == train_cfg.max_epochs - 1
        if val_set and ((epoch + 1) % train_cfg.val_every == 0 or last_epoch):
            stem_map, seg_map = validate(result.params, val_set, match_cfg, train_cfg.min_area)
            score = _score(stem_map, seg_map)
            if score is not None and (result.best_score is None or score > result.best_score):
                result.best_score, result.best_epoch = score, epoch
                if out_path is not None:
                    write_container(
                        out_path / BEST_CHECKPOINT,
                        params_header(
                            result.params,
                            train_state={"epoch": epoch, "score": score},
                        ),
                        params_to_arrays(result.params),
                    )
        result.history.append(
            {
                "epoch": epoch,
                "lr": lr,
                "train_loss": train_loss,
                "val_stem_mAP": stem_map,
                "val_seg_mAP": seg_map,
            }
        )
        logger.info(
            f"Epoch {epoch}: lr={lr:g} train_loss={train_loss:.5f}"
            + (f" val_stem_mAP={stem_map:.4f}" if stem_map is not None else "")
            + (f" val_seg_mAP={seg_map:.4f}" if seg_map is not None else "")
        )
        if out_path is not None:
            save_checkpoint(
                out_path / LAST_CHECKPOINT,
                result.params,
                state,
                {
                    "epoch": epoch,
                    "optimizer_step": state.step,
                    "history": result.history,
                    "best_epoch": result.best_epoch,
                    "best_score": result.best_score,
                },
            )
            atomic_write_text(out_path / LOG_FILE, history_to_csv(result.history))
    if out_path is not None and not val_set:
        # no validation split: the last parameters are kept as best
        write_container(
            out_path / BEST_CHECKPOINT,
            params_header(result.params),
            params_to_arrays(result.params),
        )
    return result
