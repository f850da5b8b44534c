"""Estimator facade over the classifier training loop.

Follows the fit/predict convention: constructor arguments are stored
verbatim, learned state lives in trailing-underscore attributes, and fit
returns self. Inputs are (image, score map) pairs rather than a feature
matrix, since the model consumes both.
"""

from __future__ import annotations

from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .datamodel import ScoreMap, check_image
from .nets import (
    DEFAULT_INIT_SIGMA_PX,
    DEFAULT_KERNEL_SIZE,
    ModelVariant,
    OverlayTextNet,
    load_model,
    save_model,
)
from .training import (
    TrainConfig,
    TrainExample,
    predict_probabilities,
    train_classifier,
)

PairInput = Sequence[Tuple[np.ndarray, ScoreMap]]


class OverlayTextClassifier(BaseEstimator, ClassifierMixin):
    """Binary classifier for artificially overlaid text in photos.

    ``X`` is a sequence of (image, score_map) pairs; ``y`` holds 0/1 labels
    where 1 means the image carries overlaid text.
    """

    def __init__(
        self,
        variant: str = "craft_masked",
        lr0: float = 0.015,
        momentum: float = 0.9,
        weight_decay: float = 1e-5,
        batch_size: int = 32,
        max_epochs: int = 30,
        anneal_factor: float = 0.5,
        plateau_epsilon: float = 1e-4,
        min_lr: float = 1e-5,
        val_fraction: float = 0.2,
        seed: int = 0,
        attention_kernel_size: int = DEFAULT_KERNEL_SIZE,
        init_sigma_px: float = DEFAULT_INIT_SIGMA_PX,
    ):
        self.variant = variant
        self.lr0 = lr0
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.anneal_factor = anneal_factor
        self.plateau_epsilon = plateau_epsilon
        self.min_lr = min_lr
        self.val_fraction = val_fraction
        self.seed = seed
        self.attention_kernel_size = attention_kernel_size
        self.init_sigma_px = init_sigma_px

    def _to_examples(self, X: PairInput, y: Optional[Sequence[int]]) -> List[TrainExample]:
        labels = [0] * len(X) if y is None else list(np.asarray(y).astype(int))
        if len(labels) != len(X):
            raise ValueError(f"X has {len(X)} pairs but y has {len(labels)} labels")
        examples = []
        for (image, score_map), label in zip(X, labels):
            if not isinstance(score_map, ScoreMap):
                score_map = ScoreMap(np.asarray(score_map, dtype=np.float32))
            examples.append(TrainExample(check_image(image), score_map, int(label)))
        return examples

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            variant=ModelVariant.parse(self.variant),
            lr0=self.lr0,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            anneal_factor=self.anneal_factor,
            plateau_epsilon=self.plateau_epsilon,
            min_lr=self.min_lr,
            seed=self.seed,
            attention_kernel_size=self.attention_kernel_size,
            init_sigma_px=self.init_sigma_px,
        )

    def fit(self, X: PairInput, y: Sequence[int]) -> "OverlayTextClassifier":
        """Train on labeled pairs, holding out a seeded validation slice."""
        if y is None:
            raise ValueError("y with 0/1 labels is required")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must lie in (0, 1)")
        examples = self._to_examples(X, y)
        labels = np.array([e.label for e in examples])
        if set(labels.tolist()) != {0, 1}:
            raise ValueError("fit needs both a positive and a negative example")
        rng = np.random.default_rng(self.seed)
        val_idx: List[int] = []
        for value in (0, 1):
            members = np.flatnonzero(labels == value)
            members = members[rng.permutation(len(members))]
            take = max(1, int(round(len(members) * self.val_fraction)))
            val_idx.extend(members[:take].tolist())
        val_set = set(val_idx)
        train = [examples[i] for i in range(len(examples)) if i not in val_set]
        val = [examples[i] for i in sorted(val_set)]
        result = train_classifier(train, val, self._train_config())
        self.model_ = result.model
        self.history_ = result.history
        self.best_val_loss_ = result.best_val_loss
        self.classes_ = np.array([0, 1])
        return self

    def _scores(self, X: PairInput) -> np.ndarray:
        check_is_fitted(self, "model_")
        examples = self._to_examples(X, None)
        return predict_probabilities(self.model_, examples, self.batch_size)

    def predict_proba(self, X: PairInput) -> np.ndarray:
        """Column-stacked probabilities for the negative and positive class."""
        pos = self._scores(X)
        return np.stack([1.0 - pos, pos], axis=1)

    def predict(self, X: PairInput) -> np.ndarray:
        return (self._scores(X) >= 0.5).astype(np.int64)

    def save(self, path: Union[str, Path]) -> None:
        check_is_fitted(self, "model_")
        save_model(path, self.model_, extra_meta={"estimator_params": self.get_params()})

    @classmethod
    def from_checkpoint(cls, path: Union[str, Path]) -> "OverlayTextClassifier":
        model, meta = load_model(path)
        params = meta.get("estimator_params", {})
        est = cls(**{k: v for k, v in params.items() if k in cls().get_params()})
        est.model_ = model
        est.classes_ = np.array([0, 1])
        return est

    @property
    def network(self) -> OverlayTextNet:
        check_is_fitted(self, "model_")
        return self.model_
