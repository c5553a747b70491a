"""Trip ingestion: gridding, time bucketing, aggregation, scaling, windowing.

Raw trips are (start time, end time, start point, end point) records. They
are mapped onto an m x k grid of regions and a 1-based axis of fixed-width
time intervals, then aggregated into per-interval volume tensors (in-flow,
out-flow counts per region) and directed flow matrices (origin-destination
counts of trips ending in the interval). Sliding windows over those
sequences are the model's training instances.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import RangeError, ShapeError
from .flowgraph import SparseFlowMatrix
from .validation import check_flow_sequence, check_volume_sequence

OUT_OF_BOUNDS = -1


@dataclass(frozen=True)
class GridSpec:
    """Spatial grid and time axis shared by ingestion, model, and analysis.

    Region indices are row-major: region = row * k + col, row 0 at lat_max
    (north edge), col 0 at lon_min (west edge). t0 is the epoch start of
    interval 1; interval t covers [t0 + (t-1)*dt, t0 + t*dt).
    """

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float
    m: int
    k: int
    interval_seconds: int
    t0: int

    def __post_init__(self):
        if not (self.lat_min < self.lat_max and self.lon_min < self.lon_max):
            raise ValueError("grid bounding box is empty or inverted")
        if self.m < 1 or self.k < 1:
            raise ValueError("grid needs at least one row and one column")
        if self.interval_seconds <= 0:
            raise ValueError("interval_seconds must be positive")

    @property
    def n_regions(self) -> int:
        return self.m * self.k

    @property
    def dlat(self) -> float:
        return (self.lat_max - self.lat_min) / self.m

    @property
    def dlon(self) -> float:
        return (self.lon_max - self.lon_min) / self.k

    def cell_of(self, region: int) -> tuple[int, int]:
        if not 0 <= region < self.n_regions:
            raise RangeError(f"region {region} outside [0, {self.n_regions})")
        return divmod(region, self.k)

    def region_of(self, row: int, col: int) -> int:
        if not (0 <= row < self.m and 0 <= col < self.k):
            raise RangeError(f"cell ({row}, {col}) outside {self.m}x{self.k} grid")
        return row * self.k + col

    def hour_of(self, t: int) -> int:
        """Hour of day (0..23) at the start of interval t."""
        return int((self.t0 + (t - 1) * self.interval_seconds) % 86400) // 3600

    def to_dict(self) -> dict:
        # canonical types so serialized headers are byte-stable
        return {
            "lat_min": float(self.lat_min),
            "lat_max": float(self.lat_max),
            "lon_min": float(self.lon_min),
            "lon_max": float(self.lon_max),
            "m": int(self.m),
            "k": int(self.k),
            "interval_seconds": int(self.interval_seconds),
            "t0": int(self.t0),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(
            lat_min=float(d["lat_min"]),
            lat_max=float(d["lat_max"]),
            lon_min=float(d["lon_min"]),
            lon_max=float(d["lon_max"]),
            m=int(d["m"]),
            k=int(d["k"]),
            interval_seconds=int(d["interval_seconds"]),
            t0=int(d["t0"]),
        )


@dataclass(frozen=True)
class TripRecord:
    """One trip: timestamps in epoch seconds, endpoints in degrees."""

    t_s: float
    t_e: float
    start_lat: float
    start_lon: float
    end_lat: float
    end_lon: float


@dataclass(frozen=True)
class VolumeTensor:
    """Per-region (in-flow, out-flow) counts for one interval."""

    values: np.ndarray  # m x k x 2
    t: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != 2:
            raise ShapeError(f"volume tensor must be m x k x 2, got {v.shape}")
        object.__setattr__(self, "values", v)


def assign_region(lat: float, lon: float, grid: GridSpec) -> int:
    """Map a point to its region index, or OUT_OF_BOUNDS.

    The north and west bounding edges are inclusive; interior cell edges
    belong to the southern/eastern cell; points exactly on lat_min or
    lon_max land in the final row/column.
    """
    if not (grid.lat_min <= lat <= grid.lat_max):
        return OUT_OF_BOUNDS
    if not (grid.lon_min <= lon <= grid.lon_max):
        return OUT_OF_BOUNDS
    row = min(int((grid.lat_max - lat) / grid.dlat), grid.m - 1)
    col = min(int((lon - grid.lon_min) / grid.dlon), grid.k - 1)
    return row * grid.k + col


def interval_of(ts: float, grid: GridSpec) -> int:
    """1-based interval index of a timestamp; <= 0 means before the axis."""
    return math.floor((ts - grid.t0) / grid.interval_seconds) + 1


def _trip_fields(trip: TripRecord, grid: GridSpec):
    """(start region, end region, start interval, end interval) or None
    for trips that cannot be placed on the grid and axis at all."""
    if trip.t_s > trip.t_e:
        return None
    i = assign_region(trip.start_lat, trip.start_lon, grid)
    j = assign_region(trip.end_lat, trip.end_lon, grid)
    if i == OUT_OF_BOUNDS or j == OUT_OF_BOUNDS:
        return None
    ts = interval_of(trip.t_s, grid)
    te = interval_of(trip.t_e, grid)
    if ts < 1:
        return None
    return i, j, ts, te


def _check_interval(t: int, n_intervals=None):
    if t < 1 or (n_intervals is not None and t > n_intervals):
        hi = n_intervals if n_intervals is not None else "inf"
        raise RangeError(f"interval {t} outside the time axis [1, {hi}]")


def build_flow_matrix(trips, t: int, grid: GridSpec, n_intervals=None) -> SparseFlowMatrix:
    """Origin-destination counts of trips ending in interval t.

    An entry (i, j) counts trips that started in region i (at interval t or
    earlier) and ended in region j during t. Invalid trips are skipped.
    """
    _check_interval(t, n_intervals)
    counts: dict[tuple[int, int], float] = {}
    for trip in trips:
        fields = _trip_fields(trip, grid)
        if fields is None:
            continue
        i, j, _, te = fields
        if te == t:
            counts[(i, j)] = counts.get((i, j), 0.0) + 1.0
    return SparseFlowMatrix.from_entries(grid.n_regions, ((i, j, w) for (i, j), w in counts.items()))


def build_volume_tensor(trips, t: int, grid: GridSpec, n_intervals=None) -> VolumeTensor:
    """Per-region (in, out) counts for interval t.

    Channel 0 counts trips ending in the region during t (the column sums
    of the same interval's flow matrix); channel 1 counts trips departing
    the region during t regardless of when they end.
    """
    _check_interval(t, n_intervals)
    values = np.zeros((grid.m, grid.k, 2))
    for trip in trips:
        fields = _trip_fields(trip, grid)
        if fields is None:
            continue
        i, j, ts, te = fields
        if te == t:
            row, col = divmod(j, grid.k)
            values[row, col, 0] += 1.0
        if ts == t:
            row, col = divmod(i, grid.k)
            values[row, col, 1] += 1.0
    return VolumeTensor(values=values, t=t)


def aggregate_trips(trips, grid: GridSpec, n_intervals=None):
    """Aggregate a trip list into full volume and flow sequences.

    Returns (volumes, flows, n_rejected) where volumes is an
    (n_intervals, m, k, 2) array, flows is a list of SparseFlowMatrix, and
    n_rejected counts trips dropped for t_s > t_e, endpoints outside the
    grid, or starting before the axis (or, when n_intervals is given,
    after it). When n_intervals is None it is inferred from the largest
    end interval so every accepted trip lands inside the axis.
    """
    placed = []
    rejected = 0
    for trip in trips:
        fields = _trip_fields(trip, grid)
        if fields is None:
            rejected += 1
            continue
        if n_intervals is not None and fields[2] > n_intervals:
            rejected += 1
            continue
        placed.append(fields)

    if n_intervals is None:
        n_intervals = max((te for _, _, _, te in placed), default=0)

    volumes = np.zeros((n_intervals, grid.m, grid.k, 2))
    flow_counts: list[dict[tuple[int, int], float]] = [{} for _ in range(n_intervals)]
    for i, j, ts, te in placed:
        row, col = divmod(i, grid.k)
        volumes[ts - 1, row, col, 1] += 1.0
        if te <= n_intervals:
            row, col = divmod(j, grid.k)
            volumes[te - 1, row, col, 0] += 1.0
            c = flow_counts[te - 1]
            c[(i, j)] = c.get((i, j), 0.0) + 1.0

    flows = [
        SparseFlowMatrix.from_entries(grid.n_regions, ((i, j, w) for (i, j), w in c.items()))
        for c in flow_counts
    ]
    return volumes, flows, rejected


@dataclass
class MinMaxScaler:
    """Affine map of training-range volumes onto [0, 1], per channel.

    Values outside the fitted range are not clamped, so the inverse is
    exact everywhere. A channel whose fitted range is empty is flagged
    degenerate and maps to 0. Flow weights get their own range; scaling
    them never changes transition matrices (which normalise per row), so
    flow scaling is cosmetic and models consume raw flows.
    """

    vmin: np.ndarray = field(default_factory=lambda: np.zeros(2))
    vmax: np.ndarray = field(default_factory=lambda: np.ones(2))
    fmin: float = 0.0
    fmax: float = 1.0
    degenerate: tuple[bool, bool] = (False, False)
    flow_degenerate: bool = False

    def __post_init__(self):
        self.vmin = np.asarray(self.vmin, dtype=np.float64).reshape(2)
        self.vmax = np.asarray(self.vmax, dtype=np.float64).reshape(2)
        self.degenerate = (bool(self.degenerate[0]), bool(self.degenerate[1]))

    def _scale(self) -> np.ndarray:
        span = self.vmax - self.vmin
        return np.where([not d for d in self.degenerate], np.where(span != 0, span, 1.0), np.inf)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Scale an array whose last axis is the 2 volume channels."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != 2:
            raise ShapeError(f"expected trailing channel axis of size 2, got {x.shape}")
        out = (x - self.vmin) / self._scale()
        for c in range(2):
            if self.degenerate[c]:
                out[..., c] = 0.0
        return out

    def invert(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if y.shape[-1] != 2:
            raise ShapeError(f"expected trailing channel axis of size 2, got {y.shape}")
        out = y * self._scale() + self.vmin
        for c in range(2):
            if self.degenerate[c]:
                out[..., c] = self.vmin[c]
        return out

    def apply_flow(self, f: SparseFlowMatrix) -> SparseFlowMatrix:
        if self.flow_degenerate:
            return SparseFlowMatrix(f.n)
        w = (f.weight - self.fmin) / (self.fmax - self.fmin)
        keep = w > 0
        return SparseFlowMatrix(f.n, f.src[keep], f.dst[keep], w[keep])

    def to_dict(self) -> dict:
        return {
            "vmin": self.vmin.tolist(),
            "vmax": self.vmax.tolist(),
            "fmin": self.fmin,
            "fmax": self.fmax,
            "degenerate": list(self.degenerate),
            "flow_degenerate": self.flow_degenerate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MinMaxScaler":
        return cls(
            vmin=np.array(d["vmin"]),
            vmax=np.array(d["vmax"]),
            fmin=float(d["fmin"]),
            fmax=float(d["fmax"]),
            degenerate=tuple(bool(x) for x in d["degenerate"]),
            flow_degenerate=bool(d["flow_degenerate"]),
        )


def fit_scaler(volumes: np.ndarray, flows) -> MinMaxScaler:
    """Fit per-channel volume ranges and the flow weight range.

    Fit on the training split only; validation and test data reuse the
    fitted statistics. The flow minimum honours implicit zeros: any
    interval with fewer stored entries than n*n cells pins fmin at 0, so
    the flow transform reduces to a pure positive scale that preserves
    sparsity.
    """
    volumes = check_volume_sequence(volumes)
    if volumes.shape[0] == 0:
        raise ValueError("cannot fit a scaler on zero intervals")
    vmin = volumes.min(axis=(0, 1, 2))
    vmax = volumes.max(axis=(0, 1, 2))
    degenerate = tuple(bool(vmax[c] <= vmin[c]) for c in range(2))

    weights = [f.weight for f in flows if f.nnz]
    if weights:
        wcat = np.concatenate(weights)
        fmax = float(wcat.max())
        dense = all(f.nnz == f.n * f.n for f in flows)
        fmin = float(wcat.min()) if dense else 0.0
    else:
        fmin, fmax = 0.0, 0.0
    return MinMaxScaler(
        vmin=vmin,
        vmax=vmax,
        fmin=fmin,
        fmax=fmax,
        degenerate=degenerate,
        flow_degenerate=bool(fmax <= fmin),
    )


class WindowDataset:
    """Sliding windows over aligned volume and flow sequences.

    Window w predicts the volume tensor at absolute interval
    first_interval + history + w from the `history` preceding intervals'
    volumes and flows. Intervals within a window are contiguous, so one
    segment of n intervals yields n - history windows.
    """

    def __init__(self, volumes: np.ndarray, flows, history: int, first_interval: int = 1):
        if history < 1:
            raise ValueError("history must be at least 1")
        volumes = check_volume_sequence(volumes)
        flows = check_flow_sequence(flows, volumes.shape[1] * volumes.shape[2], volumes.shape[0])
        self.volumes = volumes
        self.flows = list(flows)
        self.history = history
        self.first_interval = first_interval

    @property
    def n_intervals(self) -> int:
        return self.volumes.shape[0]

    def __len__(self) -> int:
        return max(0, self.n_intervals - self.history)

    def _check(self, w: int):
        if not 0 <= w < len(self):
            raise RangeError(f"window {w} outside [0, {len(self)})")

    def target_interval(self, w: int) -> int:
        self._check(w)
        return self.first_interval + self.history + w

    def input_volumes(self, w: int) -> np.ndarray:
        self._check(w)
        return self.volumes[w : w + self.history]

    def input_flows(self, w: int) -> list:
        self._check(w)
        return self.flows[w : w + self.history]

    def target(self, w: int) -> np.ndarray:
        self._check(w)
        return self.volumes[w + self.history]

    def window(self, w: int):
        return self.input_volumes(w), self.input_flows(w), self.target(w)

    def scaled(self, scaler: MinMaxScaler) -> "WindowDataset":
        """Same windows over scaler-transformed volumes; flows stay raw."""
        return WindowDataset(
            scaler.apply(self.volumes), self.flows, self.history, self.first_interval
        )


class WindowSubset:
    """A re-indexed view of selected windows of a WindowDataset."""

    def __init__(self, base, indices):
        indices = [int(i) for i in indices]
        for i in indices:
            if not 0 <= i < len(base):
                raise RangeError(f"window {i} outside [0, {len(base)})")
        self.base = base
        self.indices = indices
        self.history = base.history

    def __len__(self) -> int:
        return len(self.indices)

    def target_interval(self, w: int) -> int:
        return self.base.target_interval(self.indices[w])

    def input_volumes(self, w: int) -> np.ndarray:
        return self.base.input_volumes(self.indices[w])

    def input_flows(self, w: int) -> list:
        return self.base.input_flows(self.indices[w])

    def target(self, w: int) -> np.ndarray:
        return self.base.target(self.indices[w])

    def window(self, w: int):
        return self.base.window(self.indices[w])


def build_dataset(volumes, flows, history: int, first_interval: int = 1) -> WindowDataset:
    """Window aligned sequences; warns and yields 0 windows if too short."""
    ds = WindowDataset(volumes, flows, history, first_interval)
    if len(ds) == 0:
        warnings.warn(
            f"{ds.n_intervals} intervals with history {history} yield no windows",
            stacklevel=2,
        )
    return ds


def split_intervals(n_intervals: int, train_frac: float, val_frac: float):
    """Contiguous (train, val, test) slices over a 0-based interval axis."""
    if train_frac < 0 or val_frac < 0 or train_frac + val_frac > 1:
        raise ValueError("split fractions must be non-negative and sum to at most 1")
    n_train = int(n_intervals * train_frac)
    n_val = int(n_intervals * val_frac)
    return slice(0, n_train), slice(n_train, n_train + n_val), slice(n_train + n_val, n_intervals)


TRIP_HEADER = ["t_s", "t_e", "start_lat", "start_lon", "end_lat", "end_lon"]


def read_trips(path):
    """Read the trip CSV; returns (trips, n_malformed). Rows with the wrong
    field count or non-numeric values are counted and skipped."""
    trips = []
    malformed = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is not None and [h.strip() for h in header] != TRIP_HEADER:
            raise ValueError(f"expected trip CSV header {','.join(TRIP_HEADER)}")
        for row in reader:
            if len(row) != 6:
                malformed += 1
                continue
            try:
                values = [float(x) for x in row]
            except ValueError:
                malformed += 1
                continue
            trips.append(TripRecord(*values))
    return trips, malformed


def _num(x: float) -> str:
    if float(x).is_integer():
        return str(int(x))
    return repr(float(x))


def write_trips(path, trips):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRIP_HEADER)
        for tr in trips:
            writer.writerow(
                [
                    _num(tr.t_s),
                    _num(tr.t_e),
                    repr(float(tr.start_lat)),
                    repr(float(tr.start_lon)),
                    repr(float(tr.end_lat)),
                    repr(float(tr.end_lon)),
                ]
            )
