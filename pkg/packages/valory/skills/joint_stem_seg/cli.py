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

"""This module contains the command-line interface: synth, train, infer, eval and params."""

import functools
import json
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import click
import numpy as np

from packages.valory.skills.joint_stem_seg.dataset.io import (
    IMAGES_DIR,
    load_dataset,
    png_bytes,
    read_png,
    select,
    split_dataset,
)
from packages.valory.skills.joint_stem_seg.dataset.synth import synth_generate
from packages.valory.skills.joint_stem_seg.metrics import ImagePrediction, evaluate
from packages.valory.skills.joint_stem_seg.models import RunConfig
from packages.valory.skills.joint_stem_seg.network.model import (
    count_parameters,
    shared_encoder_saving,
)
from packages.valory.skills.joint_stem_seg.network.params import he_init
from packages.valory.skills.joint_stem_seg.network.serialization import load_params
from packages.valory.skills.joint_stem_seg.preprocess import preprocess_image
from packages.valory.skills.joint_stem_seg.stem_extraction import (
    StemDetection,
    argmax_mask,
    extract_stems,
    read_detections_csv,
    write_detections_csv,
)
from packages.valory.skills.joint_stem_seg.trainer import predict, train
from packages.valory.skills.joint_stem_seg.utils import (
    atomic_write_bytes,
    atomic_write_npy,
    atomic_write_text,
)

LOG_FORMAT = "%(asctime)s [%(levelname)8s] %(message)s (%(filename)s:%(lineno)s)"
RUN_CONFIG_FILE = "run_config.yaml"
DETECTIONS_FILE = "stems.csv"
REPORT_JSON = "report.json"
REPORT_TABLE = "report.txt"
SPLITS = ("all", "train", "val", "test")

# soil black, crop green, dicot red, grass blue
PLANT_PALETTE = np.array([[0, 0, 0], [0, 255, 0], [255, 0, 0], [0, 0, 255]], dtype=np.uint8)
# soil black, crop stem green, dicot stem red
STEM_PALETTE = PLANT_PALETTE[:3]

_logger = logging.getLogger(__name__)


def _handle_errors(command: Callable[..., Any]) -> Callable[..., Any]:
    """Turn the pipeline's error contracts into a failing exit status with the diagnostic."""

    @functools.wraps(command)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return command(*args, **kwargs)
        except (ValueError, RuntimeError, OSError) as e:
            raise click.ClickException(str(e)) from e

    return wrapper


def _config_options(command: Callable[..., Any]) -> Callable[..., Any]:
    """The options every command shares."""
    command = click.option(
        "--set",
        "overrides",
        multiple=True,
        metavar="SECTION.KEY=VALUE",
        help="Override one configuration value.",
    )(command)
    command = click.option(
        "--out", type=click.Path(file_okay=False), default=None, help="Output directory."
    )(command)
    command = click.option(
        "--config",
        "config_path",
        type=click.Path(exists=True, dir_okay=False),
        default=None,
        help="YAML run configuration merged over the defaults.",
    )(command)
    return command


def _load_config(
    config_path: Optional[str], overrides: Sequence[str], extra: Sequence[str] = ()
) -> RunConfig:
    """Load the run configuration; dedicated flags apply after the `--set` overrides."""
    return RunConfig.load(config_path, [*overrides, *extra])


def _echo_config(config: RunConfig, out_dir: Path) -> None:
    """Record the effective configuration next to the outputs."""
    atomic_write_text(out_dir / RUN_CONFIG_FILE, config.to_yaml())


@click.group()
@click.option(
    "--log-level",
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
    default="INFO",
    show_default=True,
)
def cli(log_level: str) -> None:
    """Joint stem detection and crop/weed segmentation."""
    logging.basicConfig(level=log_level.upper(), format=LOG_FORMAT)


@cli.command("synth")
@_config_options
@click.option("--seed", type=int, default=None, help="Generator seed.")
@click.option("--images", type=int, default=None, help="Number of images.")
@_handle_errors
def cmd_synth(
    config_path: Optional[str],
    out: Optional[str],
    overrides: Tuple[str, ...],
    seed: Optional[int],
    images: Optional[int],
) -> None:
    """Generate a synthetic dataset."""
    extra = []
    if seed is not None:
        extra.append(f"synth.seed={seed}")
    if images is not None:
        extra.append(f"synth.num_images={images}")
    if out is not None:
        extra.append(f"paths.dataset_dir={json.dumps(out)}")
    config = _load_config(config_path, overrides, extra)
    out_dir = Path(config.paths.dataset_dir)
    synth_generate(config.synth, out_dir, _logger)
    _echo_config(config, out_dir)
    click.echo(f"Dataset written to {out_dir}")


@cli.command("train")
@_config_options
@click.option("--seed", type=int, default=None, help="Training seed.")
@click.option("--epochs", type=int, default=None, help="Number of epochs.")
@click.option("--dataset", type=click.Path(file_okay=False), default=None, help="Dataset directory.")
@click.option("--resume", is_flag=True, help="Continue from last.ckpt in the output directory.")
@_handle_errors
def cmd_train(  # pylint: disable=too-many-arguments
    config_path: Optional[str],
    out: Optional[str],
    overrides: Tuple[str, ...],
    seed: Optional[int],
    epochs: Optional[int],
    dataset: Optional[str],
    resume: bool,
) -> None:
    """Train the network on the train split, selecting the best checkpoint on the validation split."""
    extra = []
    if seed is not None:
        extra.append(f"train.seed={seed}")
    if epochs is not None:
        extra.append(f"train.max_epochs={epochs}")
    if dataset is not None:
        extra.append(f"paths.dataset_dir={json.dumps(dataset)}")
    if out is not None:
        extra.append(f"paths.output_dir={json.dumps(out)}")
    config = _load_config(config_path, overrides, extra)
    out_dir = Path(config.paths.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(config, out_dir)

    meta, samples = load_dataset(config.paths.dataset_dir)
    if meta.mm_per_pixel != config.match.mm_per_pixel:
        _logger.warning(
            f"Dataset ground resolution {meta.mm_per_pixel} mm/px differs from "
            f"match.mm_per_pixel {config.match.mm_per_pixel}"
        )
    split = split_dataset(samples, config.split)
    _logger.info(
        f"Split {len(samples)} samples into {len(split.train)} train, "
        f"{len(split.val)} val, {len(split.test)} test"
    )
    result = train(
        select(samples, split.train),
        select(samples, split.val),
        config.network,
        config.train,
        config.preprocess,
        config.match,
        out_dir,
        resume=resume,
        logger=_logger,
    )
    click.echo(
        f"Training finished after {len(result.history)} epochs; "
        f"best epoch {result.best_epoch} with score {result.best_score}"
    )


def _image_paths(images: Sequence[str]) -> List[Path]:
    """Expand directories (or dataset roots) into their PNG files."""
    paths: List[Path] = []
    for item in images:
        path = Path(item)
        if path.is_dir():
            folder = path / IMAGES_DIR if (path / IMAGES_DIR).is_dir() else path
            paths.extend(sorted(folder.glob("*.png")))
        else:
            paths.append(path)
    return paths


def _colourize(labels: np.ndarray, palette: np.ndarray) -> np.ndarray:
    """Map class labels to RGB."""
    return palette[labels]


@cli.command("infer")
@_config_options
@click.option(
    "--checkpoint",
    type=click.Path(exists=True, dir_okay=False),
    required=True,
    help="Parameter file (best.ckpt or last.ckpt).",
)
@click.option("--save-probs", is_flag=True, help="Also dump the raw probabilities as .npy.")
@click.argument("images", nargs=-1, type=click.Path(exists=True))
@_handle_errors
def cmd_infer(  # pylint: disable=too-many-arguments,too-many-locals
    config_path: Optional[str],
    out: Optional[str],
    overrides: Tuple[str, ...],
    checkpoint: str,
    save_probs: bool,
    images: Tuple[str, ...],
) -> None:
    """Predict plant and stem masks and stem positions for images."""
    config = _load_config(config_path, overrides)
    out_dir = Path(out) if out is not None else Path(config.paths.output_dir) / "predictions"
    paths = _image_paths(images)
    if not paths:
        click.echo("No images given; nothing to do")
        return
    params = load_params(checkpoint)
    out_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(config, out_dir)
    detections: List[Tuple[str, StemDetection]] = []
    for path in paths:
        image_id = path.stem
        inputs = preprocess_image(read_png(path), config.preprocess, params.dtype)
        output = predict(params, inputs)
        if output.plant_probs is not None:
            plant = output.plant_probs.data[0]
            atomic_write_bytes(
                out_dir / f"{image_id}_plant.png",
                png_bytes(_colourize(argmax_mask(plant), PLANT_PALETTE)),
            )
            if save_probs:
                atomic_write_npy(out_dir / f"{image_id}_plant_probs.npy", plant)
        if output.stem_probs is not None:
            stem = output.stem_probs.data[0]
            atomic_write_bytes(
                out_dir / f"{image_id}_stem.png",
                png_bytes(_colourize(argmax_mask(stem), STEM_PALETTE)),
            )
            if save_probs:
                atomic_write_npy(out_dir / f"{image_id}_stem_probs.npy", stem)
            detections.extend(
                (image_id, detection)
                for detection in extract_stems(
                    stem, config.train.min_area, config.match.mm_per_pixel
                )
            )
        _logger.info(f"Predicted {image_id}")
    write_detections_csv(out_dir / DETECTIONS_FILE, detections)
    click.echo(f"Predictions for {len(paths)} images written to {out_dir}")


def _read_predictions(
    predictions_dir: Path, sample_ids: Sequence[str], mm_per_pixel: float
) -> Dict[str, ImagePrediction]:
    """Collect detections and plant probabilities written by `infer`."""
    predictions = {sample_id: ImagePrediction() for sample_id in sample_ids}
    detections_path = predictions_dir / DETECTIONS_FILE
    if detections_path.exists():
        for image_id, detection in read_detections_csv(detections_path, mm_per_pixel):
            if image_id in predictions:
                predictions[image_id].detections.append(detection)
    else:
        _logger.warning(f"{detections_path} not found; evaluating without stem detections")
    for sample_id, prediction in predictions.items():
        probs_path = predictions_dir / f"{sample_id}_plant_probs.npy"
        if probs_path.exists():
            prediction.plant_probs = np.load(probs_path)
    return predictions


@cli.command("eval")
@_config_options
@click.option(
    "--predictions",
    type=click.Path(exists=True, file_okay=False),
    required=True,
    help="Directory written by infer.",
)
@click.option("--dataset", type=click.Path(file_okay=False), default=None, help="Dataset directory.")
@click.option("--theta-mm", type=float, default=None, help="Matching threshold in millimetres.")
@click.option("--seed", type=int, default=None, help="Split seed.")
@click.option(
    "--split", "split_name", type=click.Choice(SPLITS), default="all", show_default=True
)
@_handle_errors
def cmd_eval(  # pylint: disable=too-many-arguments,too-many-locals
    config_path: Optional[str],
    out: Optional[str],
    overrides: Tuple[str, ...],
    predictions: str,
    dataset: Optional[str],
    theta_mm: Optional[float],
    seed: Optional[int],
    split_name: str,
) -> None:
    """Evaluate saved predictions: stem AP, mAP and MAD, and pixel-wise AP and mAP."""
    extra = []
    if theta_mm is not None:
        extra.append(f"match.theta_mm={theta_mm}")
    if seed is not None:
        extra.append(f"split.seed={seed}")
    if dataset is not None:
        extra.append(f"paths.dataset_dir={json.dumps(dataset)}")
    config = _load_config(config_path, overrides, extra)
    predictions_dir = Path(predictions)
    out_dir = Path(out) if out is not None else predictions_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    _, samples = load_dataset(config.paths.dataset_dir)
    if split_name != "all":
        samples = select(samples, getattr(split_dataset(samples, config.split), split_name))
    loaded = _read_predictions(
        predictions_dir, [s.sample_id for s in samples], config.match.mm_per_pixel
    )
    report = evaluate(loaded, samples, config.match)

    _echo_config(config, out_dir)
    atomic_write_text(out_dir / REPORT_JSON, report.to_json() + "\n")
    table = report.to_table()
    atomic_write_text(out_dir / REPORT_TABLE, table)
    for name, curve in report.curves.items():
        atomic_write_text(out_dir / f"pr_{name}.csv", curve.to_csv())
    click.echo(table, nl=False)


@cli.command("params")
@_config_options
@_handle_errors
def cmd_params(
    config_path: Optional[str], out: Optional[str], overrides: Tuple[str, ...]
) -> None:
    """Report the parameter count and the shared-encoder saving of a configuration."""
    del out
    config = _load_config(config_path, overrides)
    budget = shared_encoder_saving(config.network)
    params = he_init(config.network, np.random.default_rng(config.train.seed))
    click.echo(f"parameters: {count_parameters(params)}")
    click.echo(
        f"joint {budget.joint} vs two single-task models {budget.separate} "
        f"(plant {budget.plant_only} + stem {budget.stem_only}): "
        f"ratio {budget.ratio:.3f}, saving {100.0 * budget.saving:.1f}%"
    )


if __name__ == "__main__":
    cli()  # pylint: disable=no-value-for-parameter
