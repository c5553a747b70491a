"""Synthetic trip generation with flow-driven structure.

Each hub sends a burst of home-to-work trips during the morning hours and
schedules the matching work-to-home trips a fixed number of intervals
later the same day, so the direction of flow carries real predictive
signal. Uniform noise trips are sprinkled over all intervals. Everything
derives from one seeded PCG64 stream: counts via Poisson inversion,
timestamps and coordinate jitter via uniform draws, in a fixed order, so
a seed pins the byte-exact output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ingest import GridSpec, TripRecord

MORNING_HOURS = (7, 8)


@dataclass(frozen=True)
class Hub:
    home: tuple[int, int]  # (row, col)
    work: tuple[int, int]
    rate: float  # expected trips per morning interval


@dataclass(frozen=True)
class SynthConfig:
    grid: GridSpec
    days: int
    hubs: tuple = ()
    noise_rate: float = 0.0
    return_lag: int = 10
    seed: int = 0
    fixed_counts: bool = False  # draw exactly round(rate) instead of Poisson

    def __post_init__(self):
        if self.days < 1:
            raise ValueError("need at least one day")
        if self.return_lag < 1:
            raise ValueError("return_lag must be at least 1 interval")
        if self.noise_rate < 0:
            raise ValueError("noise_rate must be non-negative")
        if 86400 % self.grid.interval_seconds != 0:
            raise ValueError("interval length must divide a day")
        hubs = tuple(self.hubs)
        for hub in hubs:
            self.grid.region_of(*hub.home)
            self.grid.region_of(*hub.work)
            if hub.rate < 0:
                raise ValueError("hub rate must be non-negative")
        object.__setattr__(self, "hubs", hubs)
        ipd = self.intervals_per_day
        for offset in range(ipd):
            if self.grid.hour_of(offset + 1) in MORNING_HOURS and offset + self.return_lag >= ipd:
                raise ValueError("return_lag pushes returns past the end of the day")

    @property
    def intervals_per_day(self) -> int:
        return 86400 // self.grid.interval_seconds

    @property
    def n_intervals(self) -> int:
        return self.days * self.intervals_per_day

    def to_config_dict(self) -> dict:
        d = self.grid.to_dict()
        d.update(
            {
                "days": self.days,
                "hubs": [[*h.home, *h.work, h.rate] for h in self.hubs],
                "noise_rate": self.noise_rate,
                "return_lag": self.return_lag,
                "seed": self.seed,
                "fixed_counts": self.fixed_counts,
            }
        )
        return d

    @classmethod
    def from_config_dict(cls, d: dict) -> "SynthConfig":
        hubs = tuple(
            Hub(home=(int(h[0]), int(h[1])), work=(int(h[2]), int(h[3])), rate=float(h[4]))
            for h in d.get("hubs", [])
        )
        return cls(
            grid=GridSpec.from_dict(d),
            days=int(d["days"]),
            hubs=hubs,
            noise_rate=float(d.get("noise_rate", 0.0)),
            return_lag=int(d.get("return_lag", 10)),
            seed=int(d.get("seed", 0)),
            fixed_counts=bool(d.get("fixed_counts", False)),
        )


def _poisson(rng: np.random.Generator, lam: float) -> int:
    """Poisson draw by CDF inversion of one uniform, so the stream is a
    pure function of the seed rather than of numpy's rejection samplers."""
    if lam <= 0:
        return 0
    u = rng.random()
    p = math.exp(-lam)
    cdf = p
    x = 0
    while u > cdf and x < 10_000_000:
        x += 1
        p *= lam / x
        cdf += p
    return x


@dataclass
class SynthTruth:
    """Per-interval generation record for cross-checking ingestion."""

    commute: dict = field(default_factory=dict)  # (interval, hub index) -> count
    returns: dict = field(default_factory=dict)
    noise: dict = field(default_factory=dict)  # interval -> count


def _cell_point(rng, grid: GridSpec, row: int, col: int):
    """A point strictly inside cell (row, col): center plus mild jitter."""
    lat = grid.lat_max - (row + 0.5) * grid.dlat + (rng.random() - 0.5) * 0.5 * grid.dlat
    lon = grid.lon_min + (col + 0.5) * grid.dlon + (rng.random() - 0.5) * 0.5 * grid.dlon
    return lat, lon


def _emit(rng, cfg: SynthConfig, t: int, start_cell, end_cell) -> TripRecord:
    grid = cfg.grid
    start = grid.t0 + (t - 1) * grid.interval_seconds
    width = grid.interval_seconds
    t_s = start + int(rng.random() * width)
    t_e = t_s + int(rng.random() * (start + width - t_s))
    slat, slon = _cell_point(rng, grid, *start_cell)
    elat, elon = _cell_point(rng, grid, *end_cell)
    return TripRecord(t_s=t_s, t_e=t_e, start_lat=slat, start_lon=slon, end_lat=elat, end_lon=elon)


def generate(cfg: SynthConfig):
    """Returns (trips, SynthTruth). Trips are emitted interval by
    interval: scheduled returns first, then morning commutes, then noise,
    all ending inside their interval."""
    rng = np.random.default_rng(cfg.seed)
    grid = cfg.grid
    trips: list[TripRecord] = []
    truth = SynthTruth()
    pending: dict[int, list] = {}

    for t in range(1, cfg.n_intervals + 1):
        for hub_idx, count in pending.pop(t, []):
            hub = cfg.hubs[hub_idx]
            for _ in range(count):
                trips.append(_emit(rng, cfg, t, hub.work, hub.home))
            truth.returns[(t, hub_idx)] = truth.returns.get((t, hub_idx), 0) + count
        if grid.hour_of(t) in MORNING_HOURS:
            for hub_idx, hub in enumerate(cfg.hubs):
                if cfg.fixed_counts:
                    count = int(round(hub.rate))
                else:
                    count = _poisson(rng, hub.rate)
                for _ in range(count):
                    trips.append(_emit(rng, cfg, t, hub.home, hub.work))
                truth.commute[(t, hub_idx)] = count
                if count:
                    pending.setdefault(t + cfg.return_lag, []).append((hub_idx, count))
        if cfg.noise_rate > 0:
            count = _poisson(rng, cfg.noise_rate)
            for _ in range(count):
                i = int(rng.random() * grid.n_regions)
                j = int(rng.random() * grid.n_regions)
                trips.append(_emit(rng, cfg, t, grid.cell_of(i), grid.cell_of(j)))
            truth.noise[t] = count
    return trips, truth


def four_hub_demo(days: int = 14, seed: int = 7, rate: float = 10.0, noise_rate: float = 1.0) -> SynthConfig:
    """A 4x4 grid with a 2x2 arrangement of commuter hubs: homes in the
    corners, workplaces in the center block, hourly intervals, returns 4
    hours after the morning trips (inside the prediction history)."""
    grid = GridSpec(
        lat_min=0.0,
        lat_max=4.0,
        lon_min=0.0,
        lon_max=4.0,
        m=4,
        k=4,
        interval_seconds=3600,
        t0=0,
    )
    hubs = (
        Hub(home=(0, 0), work=(1, 1), rate=rate),
        Hub(home=(0, 3), work=(1, 2), rate=rate),
        Hub(home=(3, 0), work=(2, 1), rate=rate),
        Hub(home=(3, 3), work=(2, 2), rate=rate),
    )
    return SynthConfig(
        grid=grid,
        days=days,
        hubs=hubs,
        noise_rate=noise_rate,
        return_lag=4,
        seed=seed,
    )
