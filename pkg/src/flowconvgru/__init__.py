"""Flow-aware traffic volume forecasting on a city grid.

The package turns raw trip records into per-interval volume tensors and
origin-destination flow matrices, trains a recurrent model whose gates mix
a bidirectional random-walk convolution over the observed flows with an
ordinary grid convolution, and ships the analysis tooling (baselines,
flow-churn measures, optimal-transport distance) used to study when the
flow information pays off.

Most callers want either the estimator facade::

    from flowconvgru import FlowConvGRURegressor
    model = FlowConvGRURegressor(layers=2, epochs=50).fit(volumes, flows)
    pred = model.predict(volumes, flows)

or the command line (``flowconvgru synth/ingest/train/eval/analyze``).
"""

from .analysis import (
    EvalReport,
    FlowChurn,
    HourlyChurn,
    compute_churns,
    cost_matrix,
    emd_churn,
    evaluate_ha,
    evaluate_model,
    filter_high_churn,
    ha_predict,
    hourly_aggregate,
    jaccard_churn,
    layer_sweep,
    mae,
    rmse,
)
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .convops import ConvFilter, DiffusionFilter, conv2d_same, diffusion_conv, flow_aware_gconv
from .dataio import Dataset, load_dataset, save_dataset
from .errors import NumericError, RangeError, ShapeError
from .estimators import FlowConvGRURegressor, HistoricalAverage
from .flowgraph import SparseFlowMatrix, TransitionPair, make_transitions, receptive_field
from .ingest import (
    GridSpec,
    MinMaxScaler,
    TripRecord,
    WindowDataset,
    WindowSubset,
    aggregate_trips,
    build_dataset,
    fit_scaler,
    read_trips,
    split_intervals,
    write_trips,
)
from .model import ModelSpec, forward, init_params
from .synth import Hub, SynthConfig, four_hub_demo, generate
from .train import (
    AdamState,
    EpochLoss,
    TrainConfig,
    adam_step,
    backward,
    parameter_count,
    predict_windows,
    train,
)
from .transport import emd, min_cost_transport

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "Checkpoint",
    "ConvFilter",
    "Dataset",
    "DiffusionFilter",
    "EpochLoss",
    "EvalReport",
    "FlowChurn",
    "FlowConvGRURegressor",
    "GridSpec",
    "HistoricalAverage",
    "HourlyChurn",
    "Hub",
    "MinMaxScaler",
    "ModelSpec",
    "NumericError",
    "RangeError",
    "ShapeError",
    "SparseFlowMatrix",
    "SynthConfig",
    "TrainConfig",
    "TransitionPair",
    "TripRecord",
    "WindowDataset",
    "WindowSubset",
    "adam_step",
    "aggregate_trips",
    "backward",
    "build_dataset",
    "compute_churns",
    "conv2d_same",
    "cost_matrix",
    "diffusion_conv",
    "emd",
    "emd_churn",
    "evaluate_ha",
    "evaluate_model",
    "filter_high_churn",
    "fit_scaler",
    "flow_aware_gconv",
    "forward",
    "four_hub_demo",
    "generate",
    "ha_predict",
    "hourly_aggregate",
    "init_params",
    "jaccard_churn",
    "layer_sweep",
    "load_checkpoint",
    "load_dataset",
    "mae",
    "make_transitions",
    "min_cost_transport",
    "parameter_count",
    "predict_windows",
    "read_trips",
    "receptive_field",
    "rmse",
    "save_checkpoint",
    "save_dataset",
    "split_intervals",
    "train",
    "write_trips",
]
