"""scikit-learn compatible wrapper around the network and training loop."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .datagen import Dataset
from .hrnet import HrnConfig, init_model
from .statespace import build_state_space
from .taxonomy import Taxonomy
from .train import TrainConfig, fit, prediction_scores


class HierarchicalResidualClassifier(ClassifierMixin, BaseEstimator):
    """Hierarchical residual network trained with labels at any level.

    Parameters
    ----------
    taxonomy : Taxonomy
        Label tree with all leaves on the last level.
    loss : {"combinatorial", "hier_only", "leaf_ce_only", "per_node_binary_ce"}
        Training objective.
    trunk_dims, block_dim :
        Hidden widths of the shared trunk and of each per-level block.
    validation_fraction : float
        Share of each class held out to fill ``history_`` with accuracies.

    Attributes
    ----------
    model_ : HrnModel
    history_ : list of EpochRecord
    classes_ : ndarray
        Leaf node ids; :meth:`predict` returns one of these.

    Notes
    -----
    ``y`` holds observed node ids. A sample labeled at an internal node
    contributes only the hierarchy term to the combinatorial loss.
    """

    def __init__(
        self,
        taxonomy: Taxonomy,
        *,
        loss="combinatorial",
        trunk_dims=(64,),
        block_dim=32,
        epochs=50,
        batch_size=32,
        learning_rate=0.05,
        trunk_lr_ratio=0.1,
        momentum=0.9,
        weight_decay=5e-4,
        reduction="mean",
        ce_weight=1.0,
        validation_fraction=0.0,
        random_state=0,
    ):
        self.taxonomy = taxonomy
        self.loss = loss
        self.trunk_dims = trunk_dims
        self.block_dim = block_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.trunk_lr_ratio = trunk_lr_ratio
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.reduction = reduction
        self.ce_weight = ce_weight
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        t = self.taxonomy
        y = y.astype(np.int64)
        if y.min() < 0 or y.max() >= t.n:
            raise ValueError(f"labels must be node ids in [0, {t.n})")
        seed = 0 if self.random_state is None else int(self.random_state)
        cfg = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            base_lr=self.learning_rate,
            trunk_lr_ratio=self.trunk_lr_ratio,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            seed=seed,
            reduction=self.reduction,
            variant=self.loss,
            ce_weight=self.ce_weight,
            val_fraction=self.validation_fraction,
        )
        self.state_space_ = build_state_space(t)
        self.model_ = init_model(
            HrnConfig(X.shape[1], t.levels, tuple(self.trunk_dims), self.block_dim, seed), t
        )
        data = Dataset(X, y, y, t.digest)
        self.history_ = fit(self.model_, data, t, self.state_space_, cfg).history
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.array(t.leaves)
        return self

    def _check_X(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, but the model was fitted with {self.n_features_in_}"
            )
        return X

    def predict_proba(self, X):
        """Node scores ``(n_samples, n_nodes)``; marginals for hierarchy losses."""
        X = self._check_X(X)
        return prediction_scores(self.model_, self.state_space_, X, self.loss)

    def predict_levels(self, X):
        """Argmax node per level, ``(n_samples, levels)``; ties to the lowest id."""
        scores = self.predict_proba(X)
        t = self.taxonomy
        out = np.empty((scores.shape[0], t.levels), dtype=np.int64)
        for lv in range(t.levels):
            nodes = np.array(t.nodes_at_level(lv))
            out[:, lv] = nodes[np.argmax(scores[:, nodes], axis=1)]
        return out

    def predict(self, X):
        return self.predict_levels(X)[:, -1]
