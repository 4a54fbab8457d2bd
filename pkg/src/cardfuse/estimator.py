"""Scikit-learn style front door for the fusion network.

`GatedResidualFusion` is a metric-learning transformer: fit composes the
split image/text columns of X into a single embedding trained to separate
the classes in y; transform maps new rows through the trained network.
It composes with sklearn pipelines and model selection (get_params /
set_params come from BaseEstimator).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .errors import ParameterError
from .fusion import fusion_forward
from .store import Dataset, EmbeddingRecord
from .train import TrainConfig, train
from .validation import as_matrix, check_consistent_length


class GatedResidualFusion(BaseEstimator, TransformerMixin):
    """Learn a fused embedding from paired image/text feature columns.

    X rows are [image features | text features]; `dim_image` gives the
    boundary (None means an even split). y holds the class labels used for
    the metric (triplet) or classification (cross_entropy) objective.

    Parameters mirror the training configuration: objective, margin,
    mining strategy, optimizer settings, hidden widths, the gate variant,
    and the seed that makes fit reproducible.
    """

    def __init__(
        self,
        dim_image: int | None = None,
        hidden: int | None = None,
        hidden2: int | None = None,
        gate_variant: str = "sigmoid_after_product",
        l2_normalize_output: bool = False,
        objective: str = "triplet",
        margin: float = 0.2,
        mining: str = "semi_hard",
        steps: int = 2000,
        batch_size: int = 64,
        samples_per_class: int = 4,
        optimizer: str = "adam",
        learning_rate: float = 1e-4,
        seed: int = 0,
    ):
        self.dim_image = dim_image
        self.hidden = hidden
        self.hidden2 = hidden2
        self.gate_variant = gate_variant
        self.l2_normalize_output = l2_normalize_output
        self.objective = objective
        self.margin = margin
        self.mining = mining
        self.steps = steps
        self.batch_size = batch_size
        self.samples_per_class = samples_per_class
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.seed = seed

    def _split_point(self, n_features: int) -> int:
        if self.dim_image is not None:
            if not 0 < self.dim_image < n_features:
                raise ParameterError(
                    f"dim_image={self.dim_image} must lie inside the {n_features} feature columns"
                )
            return self.dim_image
        if n_features % 2:
            raise ParameterError(
                f"X has {n_features} columns; pass dim_image for an uneven image/text split"
            )
        return n_features // 2

    def fit(self, X, y):
        X = as_matrix(X, "X", dtype=np.float32)
        y = np.asarray(y)
        check_consistent_length(("X", X), ("y", y))
        split = self._split_point(X.shape[1])

        records = [
            EmbeddingRecord(
                id=str(i),
                category=str(label),
                subcategory=str(label),
                split="train",
                image_vec=X[i, :split],
                text_vec=X[i, split:],
            )
            for i, label in enumerate(y)
        ]
        dataset = Dataset(dim_image=split, dim_text=X.shape[1] - split, records=records)
        cfg = TrainConfig(
            objective=self.objective,
            margin=self.margin,
            batch_size=self.batch_size,
            steps=self.steps,
            optimizer=self.optimizer,
            learning_rate=self.learning_rate,
            seed=self.seed,
            mining=self.mining,
            samples_per_class=self.samples_per_class,
            hidden=self.hidden,
            hidden2=self.hidden2,
            gate_variant=self.gate_variant,
            l2_normalize_output=self.l2_normalize_output,
        )
        result = train(dataset, cfg)
        self.params_ = result.params
        self.head_ = result.head
        self.loss_curve_ = result.losses
        self.classes_ = np.unique(y)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        if not hasattr(self, "params_"):
            raise NotFittedError("fit must be called before transform")
        X = as_matrix(X, "X", dtype=np.float32)
        if X.shape[1] != self.n_features_in_:
            raise ParameterError(
                f"X has {X.shape[1]} features but fit saw {self.n_features_in_}"
            )
        split = self.params_.dim_image
        output, _ = fusion_forward(self.params_, X[:, :split], X[:, split:])
        return output
