"""scikit-learn style estimators wrapping the training pipeline.

These take raw (unscaled) volume sequences plus aligned flow matrices,
handle scaling and windowing internally, and predict original-scale
volume tensors. Hyperparameters follow the sklearn convention (set in
__init__, discoverable via get_params), so the estimators clone and
grid-search cleanly.
"""

from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .analysis import EvalReport, evaluate_model, ha_predict, mae, rmse
from .flowgraph import SparseFlowMatrix
from .ingest import build_dataset, fit_scaler
from .model import ModelSpec
from .train import TrainConfig, predict_windows, train
from .validation import check_flow_sequence, check_volume_sequence


class FlowConvGRURegressor(BaseEstimator):
    """Next-interval volume prediction with the flow-convolutional GRU.

    fit() consumes a raw volume sequence of shape (n_intervals, m, k, 2)
    and the aligned list of flow matrices; predict() returns one
    (m, k, 2) tensor per sliding window, denormalized.
    """

    def __init__(
        self,
        layers=3,
        hidden=64,
        diffusion_steps=2,
        history=6,
        variant="full",
        kernel_size=3,
        epochs=100,
        batch_size=8,
        learning_rate=2e-4,
        clip_norm=None,
        seed=0,
    ):
        self.layers = layers
        self.hidden = hidden
        self.diffusion_steps = diffusion_steps
        self.history = history
        self.variant = variant
        self.kernel_size = kernel_size
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.clip_norm = clip_norm
        self.seed = seed

    def _dataset(self, volumes, flows):
        volumes = check_volume_sequence(volumes)
        flows = check_flow_sequence(flows, volumes.shape[1] * volumes.shape[2], volumes.shape[0])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return build_dataset(volumes, flows, self.history)

    def fit(self, volumes, flows, validation=None):
        """Train on one contiguous sequence; validation, if given, is a
        (volumes, flows) pair used for best-epoch selection."""
        ds = self._dataset(volumes, flows)
        if len(ds) == 0:
            raise ValueError(f"need more than {self.history} intervals to build windows")
        self.scaler_ = fit_scaler(ds.volumes, ds.flows)
        self.spec_ = ModelSpec(
            m=ds.volumes.shape[1],
            k=ds.volumes.shape[2],
            layers=self.layers,
            hidden=self.hidden,
            diffusion_steps=self.diffusion_steps,
            history=self.history,
            variant=self.variant,
            kernel_size=self.kernel_size,
        )
        config = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.learning_rate,
            seed=self.seed,
            clip_norm=self.clip_norm,
        )
        val_ds = None
        if validation is not None:
            val_ds = self._dataset(*validation).scaled(self.scaler_)
        ckpt, log = train(ds.scaled(self.scaler_), self.spec_, config, val_ds, self.scaler_)
        self.params_ = ckpt.params
        self.checkpoint_ = ckpt
        self.loss_log_ = log
        return self

    def predict(self, volumes, flows):
        """One denormalized (m, k, 2) prediction per window of the given
        sequence, stacked into (n_windows, m, k, 2)."""
        check_is_fitted(self, "params_")
        ds = self._dataset(volumes, flows)
        if len(ds) == 0:
            raise ValueError(f"need more than {self.history} intervals to predict")
        preds = predict_windows(ds.scaled(self.scaler_), self.spec_, self.params_)
        return self.scaler_.invert(preds)

    def evaluate(self, volumes, flows) -> EvalReport:
        check_is_fitted(self, "params_")
        ds = self._dataset(volumes, flows)
        return evaluate_model(ds, self.spec_, self.params_, self.scaler_)


class HistoricalAverage(BaseEstimator):
    """Parameter-free baseline: predict the mean of the input window."""

    def __init__(self, history=6):
        self.history = history

    def fit(self, volumes=None, flows=None):
        self.fitted_ = True
        return self

    def _dataset(self, volumes, flows):
        volumes = check_volume_sequence(volumes)
        flows = check_flow_sequence(flows, volumes.shape[1] * volumes.shape[2], volumes.shape[0])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return build_dataset(volumes, flows, self.history)

    def predict(self, volumes, flows=None):
        volumes = check_volume_sequence(volumes)
        if flows is None:
            n = volumes.shape[1] * volumes.shape[2]
            flows = [SparseFlowMatrix(n) for _ in range(volumes.shape[0])]
        ds = self._dataset(volumes, flows)
        if len(ds) == 0:
            raise ValueError(f"need more than {self.history} intervals to predict")
        return np.stack([ha_predict(ds.input_volumes(w)) for w in range(len(ds))])

    def evaluate(self, volumes, flows=None) -> EvalReport:
        preds = self.predict(volumes, flows)
        volumes = check_volume_sequence(volumes)
        targets = volumes[self.history :]
        return EvalReport(rmse=rmse(preds, targets), mae=mae(preds, targets), n=len(preds))
