"""Scikit-learn style wrapper around the multi-resolution dictionary model."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from . import numkernel as nk
from .fusion import configure_levels, init_model, model_forward
from .optim import TrainConfig, predict_logits, train
from .texdata import Dataset
from .validation import check_finite


class DictionaryTextureClassifier(BaseEstimator, ClassifierMixin):
    """Texture classifier learning residual-encoding dictionaries at
    multiple resolutions of a small convolutional extractor.

    Accepts image stacks shaped ``(n_samples, channels, height, width)``
    or ``(n_samples, height, width)`` (a channel axis is added). Spatial
    dims must be divisible by ``2 ** max(levels)``.

    Parameters mirror the library's model/training configuration;
    ``fit`` trains end-to-end with momentum SGD. Fitted state lives in
    ``params_`` / ``config_`` / ``classes_``; ``metrics_`` keeps the loss
    and fusion-weight trajectory.
    """

    def __init__(
        self,
        levels=(1, 2, 3),
        dict_size=8,
        widths=(8, 16, 32),
        shared_dim=64,
        lr=0.01,
        momentum=0.9,
        batch_size=32,
        epochs=20,
        lr_decay_epoch=None,
        seed=0,
    ):
        self.levels = levels
        self.dict_size = dict_size
        self.widths = widths
        self.shared_dim = shared_dim
        self.lr = lr
        self.momentum = momentum
        self.batch_size = batch_size
        self.epochs = epochs
        self.lr_decay_epoch = lr_decay_epoch
        self.seed = seed

    def _validate_images(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 3:
            X = X[:, None, :, :]
        if X.ndim != 4:
            raise ValueError(
                f"X must be (n_samples, channels, height, width) or "
                f"(n_samples, height, width), got shape {X.shape}"
            )
        check_finite(X, "X")
        return X

    def fit(self, X, y):
        X = self._validate_images(X)
        y = np.asarray(y)
        if y.shape[0] != X.shape[0]:
            raise ValueError(f"X has {X.shape[0]} samples but y has {y.shape[0]} labels")
        self.classes_ = np.unique(y)
        encoded = np.searchsorted(self.classes_, y).astype(np.int64)
        config = configure_levels(
            tuple(self.levels),
            dict_size=self.dict_size,
            widths=tuple(self.widths),
            shared_dim=self.shared_dim,
            in_channels=X.shape[1],
            num_classes=len(self.classes_),
        )
        cfg = TrainConfig(
            lr=self.lr,
            momentum=self.momentum,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
            dict_size=self.dict_size,
            levels=config.levels,
            shared_dim=self.shared_dim,
            lr_decay_epoch=self.lr_decay_epoch,
        )
        params = init_model(config, self.seed)
        data = Dataset(X, encoded, np.arange(X.shape[0], dtype=np.int64))
        params, metrics = train(params, config, data, cfg)
        self.params_ = params
        self.config_ = config
        self.metrics_ = metrics
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError(
                "This DictionaryTextureClassifier instance is not fitted yet; "
                "call fit before predict/transform."
            )

    def decision_function(self, X) -> np.ndarray:
        self._check_fitted()
        X = self._validate_images(X)
        return predict_logits(self.params_, self.config_, X)

    def predict_proba(self, X) -> np.ndarray:
        return nk.softmax(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        scores = self.decision_function(X)
        return self.classes_[scores.argmax(axis=1)]

    def transform(self, X) -> np.ndarray:
        """Fused shared-dimension embeddings, one row per sample."""
        self._check_fitted()
        X = self._validate_images(X)
        outs = []
        for start in range(0, X.shape[0], 64):
            _, cache = model_forward(X[start : start + 64], self.params_, self.config_)
            outs.append(cache.fused)
        return np.concatenate(outs, axis=0)
