"""scikit-learn wrapper: each sample is a grid that is compressed and rebuilt."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import bias, codec
from .codec import CodecConfig
from .errors import ConfigError


class ZFPCompressor(TransformerMixin, BaseEstimator):
    """Lossy round trip through the block codec.

    ``X`` has shape ``(n_samples, *grid)`` where ``grid`` has ``d`` axes; a
    plain 2-d feature matrix therefore works with ``d=1``.  ``transform``
    returns the reconstruction, so the difference ``transform(X) - X`` is the
    compression error whose mean ``predict_bias`` forecasts.
    """

    def __init__(self, beta=16, d=1, k=24, q=30, rounding="never"):
        self.beta = beta
        self.d = d
        self.k = k
        self.q = q
        self.rounding = rounding

    def _config(self) -> CodecConfig:
        return CodecConfig(d=self.d, beta=self.beta, k=self.k, q=self.q, rounding=self.rounding)

    def _validate(self, X) -> np.ndarray:
        X = check_array(X, allow_nd=True, dtype=np.float64, ensure_all_finite=True)
        if X.ndim != self.d + 1:
            raise ConfigError(f"expected samples with {self.d} grid axes, got {X.ndim - 1}")
        return X

    def fit(self, X, y=None):
        self.config_ = self._config()
        X = self._validate(X)
        self.grid_shape_ = X.shape[1:]
        self.n_features_in_ = int(np.prod(self.grid_shape_))
        return self

    def compress(self, X) -> list[codec.BlockStream]:
        check_is_fitted(self, "config_")
        X = self._validate(X)
        if X.shape[1:] != self.grid_shape_:
            raise ValueError(f"grid shape {X.shape[1:]} differs from fitted {self.grid_shape_}")
        return [codec.compress_array(sample, self.config_)[0] for sample in X]

    def transform(self, X):
        streams = self.compress(X)
        return np.stack([codec.decompress_array(s, self.grid_shape_) for s in streams])

    def predict_bias(self, e_max: int) -> bias.BiasPrediction:
        """Predicted mean error of one block whose largest exponent is ``e_max``."""
        check_is_fitted(self, "config_")
        return bias.predict_total_bias(self.config_, e_max, warn=False)
