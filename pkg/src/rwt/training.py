"""Training loop for the overlay-text classifier.

Optimization follows a fixed protocol: SGD with momentum on a binary
cross-entropy objective, batches of 32, learning rate halved whenever the
validation loss plateaus, and a hard stop once the rate decays below a
floor or the epoch budget runs out. Everything is seeded so repeated runs
produce identical traces.
"""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import cv2
import numpy as np
import torch
from torch import nn

from .datamodel import BinaryClass, DatasetManifest, ScoreMap, check_image
from .nets import (
    DEFAULT_INIT_SIGMA_PX,
    DEFAULT_KERNEL_SIZE,
    ModelVariant,
    OverlayTextNet,
)

TARGET_SIDE = 224


def resize_and_pad(image: np.ndarray, target_side: int = TARGET_SIDE) -> np.ndarray:
    """Scale so the longer side hits ``target_side`` and pad the rest black.

    The shorter side is rounded to the nearest pixel and the padding split
    evenly, with the extra pixel (if any) on the bottom or right.
    """
    arr = check_image(image, min_side=1)
    h, w = arr.shape[:2]
    if h == target_side and w == target_side:
        return arr
    scale = target_side / max(h, w)
    nh = target_side if h >= w else max(int(round(h * scale)), 1)
    nw = target_side if w >= h else max(int(round(w * scale)), 1)
    resized = cv2.resize(arr, (nw, nh), interpolation=cv2.INTER_LINEAR)
    out = np.zeros((target_side, target_side, 3), dtype=np.float32)
    top = (target_side - nh) // 2
    left = (target_side - nw) // 2
    out[top : top + nh, left : left + nw] = resized
    return out


@dataclass(frozen=True)
class TrainConfig:
    variant: ModelVariant = ModelVariant.CRAFT_MASKED
    lr0: float = 0.015
    momentum: float = 0.9
    weight_decay: float = 1e-5
    batch_size: int = 32
    max_epochs: int = 30
    anneal_factor: float = 0.5
    plateau_epsilon: float = 1e-4
    plateau_patience_epochs: int = 1
    min_lr: float = 1e-5
    seed: int = 0
    target_side: int = TARGET_SIDE
    attention_kernel_size: int = DEFAULT_KERNEL_SIZE
    init_sigma_px: float = DEFAULT_INIT_SIGMA_PX

    def __post_init__(self) -> None:
        if self.lr0 <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("lr0, batch_size and max_epochs must be positive")
        if not 0 < self.anneal_factor < 1:
            raise ValueError("anneal_factor must lie in (0, 1)")
        if self.plateau_patience_epochs < 1:
            raise ValueError("plateau_patience_epochs must be >= 1")
        if self.min_lr <= 0 or self.min_lr >= self.lr0:
            raise ValueError("min_lr must lie in (0, lr0)")
        if self.target_side < 2 or self.target_side % 2:
            raise ValueError("target_side must be even and >= 2")


@dataclass(frozen=True)
class EpochStats:
    """One history row; ``lr`` is the rate the epoch actually ran at."""

    epoch: int
    train_loss: float
    val_loss: float
    val_f1: float
    lr: float
    annealed: bool


@dataclass(frozen=True)
class TrainState:
    """Optimization bookkeeping threaded through the epoch loop."""

    current_lr: float
    epoch: int = 0
    best_val_loss: float = math.inf
    epochs_since_improvement: int = 0
    history: Tuple[EpochStats, ...] = ()

    @property
    def improved_last_epoch(self) -> bool:
        return self.epochs_since_improvement == 0 and self.epoch > 0


def plateau_step(state: TrainState, new_val_loss: float, config: TrainConfig) -> TrainState:
    """Advance the plateau schedule after one validation measurement.

    An improvement beyond ``plateau_epsilon`` updates the best loss and
    resets the stall counter; otherwise the counter grows, and on reaching
    the patience the learning rate is multiplied by ``anneal_factor`` and
    the counter resets.
    """
    if state.best_val_loss - new_val_loss > config.plateau_epsilon:
        return replace(
            state, best_val_loss=new_val_loss, epochs_since_improvement=0
        )
    stalled = state.epochs_since_improvement + 1
    if stalled >= config.plateau_patience_epochs:
        return replace(
            state,
            current_lr=state.current_lr * config.anneal_factor,
            epochs_since_improvement=0,
        )
    return replace(state, epochs_since_improvement=stalled)


@dataclass(frozen=True)
class TrainExample:
    """One classifier input: an image, its score map, and the binary label."""

    image: np.ndarray
    score_map: ScoreMap
    label: int
    image_id: str = ""

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")
        if self.score_map.image_shape() != self.image.shape[:2]:
            raise ValueError(
                f"score map {self.score_map.data.shape[:2]} does not pair with "
                f"image {self.image.shape[:2]}"
            )


@dataclass
class TrainResult:
    model: OverlayTextNet
    state: TrainState
    stopped_reason: str = ""

    @property
    def history(self) -> Tuple[EpochStats, ...]:
        return self.state.history

    @property
    def best_val_loss(self) -> float:
        return self.state.best_val_loss

    @property
    def epochs_run(self) -> int:
        return len(self.state.history)


def _stack_examples(
    examples: Sequence[TrainExample], indices: Sequence[int]
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    images = np.stack([examples[i].image for i in indices])
    maps = np.stack([examples[i].score_map.data for i in indices])
    labels = np.array([examples[i].label for i in indices], dtype=np.float32)
    x = torch.from_numpy(images).permute(0, 3, 1, 2).contiguous()
    m = torch.from_numpy(maps).permute(0, 3, 1, 2).contiguous()
    return x, m, torch.from_numpy(labels)


def evaluate_loss(
    model: OverlayTextNet,
    examples: Sequence[TrainExample],
    batch_size: int = 32,
) -> float:
    """Mean binary cross-entropy over a dataset, in eval mode."""
    loss_fn = nn.BCEWithLogitsLoss(reduction="sum")
    model.eval()
    total = 0.0
    with torch.no_grad():
        for start in range(0, len(examples), batch_size):
            idx = list(range(start, min(start + batch_size, len(examples))))
            x, m, y = _stack_examples(examples, idx)
            total += float(loss_fn(model(x, m), y).item())
    return total / len(examples)


def predict_probabilities(
    model: OverlayTextNet,
    examples: Sequence[TrainExample],
    batch_size: int = 32,
) -> np.ndarray:
    model.eval()
    out = []
    with torch.no_grad():
        for start in range(0, len(examples), batch_size):
            idx = list(range(start, min(start + batch_size, len(examples))))
            x, m, _ = _stack_examples(examples, idx)
            out.append(torch.sigmoid(model(x, m)).numpy())
    return np.concatenate(out) if out else np.zeros(0, dtype=np.float32)


def _val_f1(model: OverlayTextNet, examples: Sequence[TrainExample], batch_size: int) -> float:
    from .metrics import compute_report

    scores = predict_probabilities(model, examples, batch_size)
    labels = np.array([e.label for e in examples])
    return compute_report(scores, labels).f1


def train_classifier(
    train_examples: Sequence[TrainExample],
    val_examples: Sequence[TrainExample],
    config: TrainConfig = TrainConfig(),
    model: Optional[OverlayTextNet] = None,
) -> TrainResult:
    """Fit a classifier variant and return it with its epoch history.

    Deterministic for a fixed seed: weight init, shuffling and batching all
    derive from ``config.seed``. The returned model carries the weights of
    the best validation epoch.
    """
    if not train_examples or not val_examples:
        raise ValueError("need non-empty train and validation sets")
    train_labels = {e.label for e in train_examples}
    if train_labels != {0, 1}:
        raise ValueError("training set must contain both classes")
    torch.manual_seed(config.seed)
    if model is None:
        model = OverlayTextNet(
            variant=config.variant,
            attention_kernel_size=config.attention_kernel_size,
            init_sigma_px=config.init_sigma_px,
        )
    rng = np.random.default_rng(config.seed)
    optimizer = torch.optim.SGD(
        model.parameters(),
        lr=config.lr0,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
    )
    loss_fn = nn.BCEWithLogitsLoss()
    state = TrainState(current_lr=config.lr0)
    best_weights = copy.deepcopy(model.state_dict())
    stopped = "max_epochs"
    for epoch in range(config.max_epochs):
        ran_at_lr = state.current_lr
        for group in optimizer.param_groups:
            group["lr"] = ran_at_lr
        model.train()
        order = rng.permutation(len(train_examples))
        running, seen = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size].tolist()
            x, m, y = _stack_examples(train_examples, batch)
            optimizer.zero_grad()
            loss = loss_fn(model(x, m), y)
            if not math.isfinite(float(loss.item())):
                raise RuntimeError(
                    f"training diverged: non-finite loss at epoch {epoch}, "
                    f"batch starting at {start} (lr={ran_at_lr})"
                )
            loss.backward()
            optimizer.step()
            running += float(loss.item()) * len(batch)
            seen += len(batch)
        train_loss = running / seen
        val_loss = evaluate_loss(model, val_examples, config.batch_size)
        next_state = plateau_step(state, val_loss, config)
        if next_state.best_val_loss < state.best_val_loss:
            best_weights = copy.deepcopy(model.state_dict())
        annealed = next_state.current_lr < state.current_lr
        stats = EpochStats(
            epoch=epoch,
            train_loss=train_loss,
            val_loss=val_loss,
            val_f1=_val_f1(model, val_examples, config.batch_size),
            lr=ran_at_lr,
            annealed=annealed,
        )
        state = replace(
            next_state, epoch=epoch + 1, history=state.history + (stats,)
        )
        if state.current_lr < config.min_lr:
            stopped = "lr_floor"
            break
    model.load_state_dict(best_weights)
    model.eval()
    return TrainResult(model=model, state=state, stopped_reason=stopped)


def write_history_csv(path: Union[str, Path], history: Sequence[EpochStats]) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "val_f1", "lr", "annealed"])
        for row in history:
            writer.writerow(
                [row.epoch, row.train_loss, row.val_loss, row.val_f1, row.lr, int(row.annealed)]
            )


def load_examples(
    manifest: DatasetManifest,
    images_root: Union[str, Path],
    maps_dir: Union[str, Path],
    resize_to: Optional[int] = None,
) -> List[TrainExample]:
    """Materialize training pairs for every record with a binary class.

    ``resize_to`` squares each image via :func:`resize_and_pad` before
    pairing; use it only when the stored score maps were computed from
    images already at that size, since the pair must agree on shape.
    """
    from .io import load_image, read_score_map, score_map_path

    root = Path(images_root)
    examples = []
    for record in manifest:
        if record.binary_class is None:
            continue
        image = load_image(root / record.image_path)
        if resize_to is not None:
            image = resize_and_pad(image, resize_to)
        score_map = read_score_map(score_map_path(maps_dir, record.image_id))
        label = 1 if record.binary_class is BinaryClass.POSITIVE else 0
        examples.append(TrainExample(image, score_map, label, record.image_id))
    return examples
