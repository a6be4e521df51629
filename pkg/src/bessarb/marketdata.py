"""Market data: tick tables, auction/index series, CSV ingestion and
seeded synthetic scenario generation.

File conventions (one delivery day per file, UTC timestamps):
- ticks:   ``<day>_ticks_q.csv`` / ``<day>_ticks_h.csv`` with columns
  ``delivery_start_iso8601, duration_min, execution_time_iso8601,
  price_eur_mwh, volume_mw``
- prices:  ``<day>_<series>.csv`` with columns
  ``delivery_start_iso8601, price_eur_mwh`` where series is one of
  ``da`` (hourly), ``ida1``, ``id1``, ``id3``, ``idfull``, ``id_aep``
  (quarter-hourly).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DataMissingError, InputError, SchemaError
from .models import DeliveryGrid, Product, TradeTick

AUCTION_SERIES = ("da", "ida1")
INDEX_SERIES = ("id1", "id3", "idfull", "id_aep")
ALL_SERIES = AUCTION_SERIES + INDEX_SERIES

#: Continuous intraday gate opening, hours before delivery-day midnight (16:00 D-1).
GATE_OPEN_HOURS_BEFORE_MIDNIGHT = 8.0

_TICK_COLUMNS = [
    "delivery_start_iso8601",
    "duration_min",
    "execution_time_iso8601",
    "price_eur_mwh",
    "volume_mw",
]
_PRICE_COLUMNS = ["delivery_start_iso8601", "price_eur_mwh"]

_DURATION_SUFFIX = {0.25: "q", 1.0: "h"}


@dataclass(frozen=True)
class TickTable:
    """Columnar trade ticks for one delivery day and product duration.

    ``exec_hours`` and product delivery starts are hours relative to the
    delivery day's midnight (execution times before midnight are negative).
    Rows are sorted by execution time.
    """

    day: date
    duration_hours: float
    product_idx: np.ndarray
    exec_hours: np.ndarray
    price: np.ndarray
    volume: np.ndarray

    def __post_init__(self):
        for name in ("product_idx", "exec_hours", "price", "volume"):
            arr = np.asarray(getattr(self, name))
            arr = arr.astype(np.int64 if name == "product_idx" else float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if not (
            len(self.product_idx) == len(self.exec_hours) == len(self.price) == len(self.volume)
        ):
            raise InputError("tick columns have different lengths")
        if np.any(np.diff(self.exec_hours) < 0):
            raise InputError("ticks must be sorted by execution time")

    def __len__(self) -> int:
        return len(self.exec_hours)

    @property
    def grid(self) -> DeliveryGrid:
        return DeliveryGrid(self.day, self.duration_hours)

    @classmethod
    def from_ticks(cls, ticks, day: date, duration_hours: float) -> "TickTable":
        grid = DeliveryGrid(day, duration_hours)
        day_start = grid.day_start
        rows = [
            (
                grid.period_index(t.product.delivery_start),
                (t.execution_time - day_start).total_seconds() / 3600.0,
                t.price_eur_mwh,
                t.volume_mw,
            )
            for t in ticks
        ]
        rows.sort(key=lambda r: r[1])
        if rows:
            idx, hours, price, vol = (np.array(col) for col in zip(*rows))
        else:
            idx = hours = price = vol = np.empty(0)
        return cls(day, duration_hours, idx, hours, price, vol)

    def to_trade_ticks(self) -> list[TradeTick]:
        grid = self.grid
        day_start = grid.day_start
        out = []
        for i in range(len(self)):
            start = day_start + timedelta(hours=float(self.product_idx[i]) * self.duration_hours)
            out.append(
                TradeTick(
                    Product(start, self.duration_hours),
                    day_start + timedelta(hours=float(self.exec_hours[i])),
                    float(self.price[i]),
                    float(self.volume[i]),
                )
            )
        return out


@dataclass
class DayData:
    """All market data of one delivery day."""

    day: date
    ticks: dict[float, TickTable] = field(default_factory=dict)
    series: dict[str, np.ndarray] = field(default_factory=dict)

    def get_series(self, name: str) -> np.ndarray:
        try:
            return self.series[name]
        except KeyError:
            raise DataMissingError(f"price series {name!r} not available for {self.day}")

    def get_ticks(self, duration_hours: float) -> TickTable:
        try:
            return self.ticks[duration_hours]
        except KeyError:
            raise DataMissingError(
                f"no {duration_hours}h-product ticks available for {self.day}"
            )


class DataStore:
    """In-memory per-day market data with replace-on-reload semantics."""

    def __init__(self):
        self._days: dict[date, DayData] = {}

    def day(self, day: date) -> DayData:
        if day not in self._days:
            self._days[day] = DayData(day)
        return self._days[day]

    def days(self) -> list[date]:
        return sorted(self._days)

    def put_ticks(self, table: TickTable) -> None:
        self.day(table.day).ticks[table.duration_hours] = table

    def put_series(self, day: date, name: str, values: np.ndarray) -> None:
        step = 1.0 if name == "da" else 0.25
        n = DeliveryGrid(day, step).n_periods
        values = np.asarray(values, dtype=float)
        if values.shape != (n,):
            raise SchemaError(f"series {name!r} for {day} must have {n} values")
        self.day(day).series[name] = values


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IngestReport:
    loaded: int
    rejects: tuple[tuple[int, str], ...]  # (1-based file line number, reason)
    days: tuple[date, ...]


def _read_csv(path: str | Path, columns: list[str]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise DataMissingError(f"file not found: {path}")
    try:
        df = pd.read_csv(path)
    except Exception as exc:
        raise SchemaError(f"cannot parse {path}: {exc}") from exc
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise SchemaError(f"{path} is missing required columns {missing}")
    return df


def ingest_ticks(store: DataStore, path: str | Path) -> IngestReport:
    """Load a tick CSV, validating each row; malformed rows are collected.

    Rows with non-positive volume, execution at/after delivery start, bad
    timestamps or unsupported durations are rejected with their line number.
    Re-loading a file replaces the affected day/duration tables.
    """
    df = _read_csv(path, _TICK_COLUMNS)
    rejects: list[tuple[int, str]] = []

    delivery = pd.to_datetime(df["delivery_start_iso8601"], errors="coerce", utc=True)
    execution = pd.to_datetime(df["execution_time_iso8601"], errors="coerce", utc=True)
    duration = pd.to_numeric(df["duration_min"], errors="coerce")
    price = pd.to_numeric(df["price_eur_mwh"], errors="coerce")
    volume = pd.to_numeric(df["volume_mw"], errors="coerce")

    ok = np.ones(len(df), dtype=bool)

    def _reject(mask, reason):
        nonlocal ok
        mask = np.asarray(mask) & ok
        for i in np.flatnonzero(mask):
            rejects.append((int(i) + 2, reason))  # +2: header + 1-based
        ok &= ~mask

    _reject(delivery.isna().to_numpy(), "unparseable delivery_start_iso8601")
    _reject(execution.isna().to_numpy(), "unparseable execution_time_iso8601")
    _reject(~duration.isin([15, 30, 60]).to_numpy(), "unsupported duration_min")
    _reject(~np.isfinite(price.to_numpy(dtype=float)), "non-finite price")
    _reject(~(volume.to_numpy(dtype=float) > 0), "non-positive volume")
    _reject((execution >= delivery).to_numpy(), "executed at or after delivery start")

    kept = df.index[ok]
    days: set[date] = set()
    grouped: dict[tuple[date, float], list[int]] = {}
    for i in kept:
        day = delivery[i].date()
        dur = float(duration[i]) / 60.0
        grouped.setdefault((day, dur), []).append(i)

    loaded = 0
    for (day, dur), idxs in sorted(grouped.items()):
        day_start = datetime(day.year, day.month, day.day, tzinfo=timezone.utc)
        sub_delivery = delivery[idxs]
        sub_exec = execution[idxs]
        prod_hours = (sub_delivery - day_start).dt.total_seconds().to_numpy() / 3600.0
        prod_idx = prod_hours / dur
        aligned = np.abs(prod_idx - np.round(prod_idx)) < 1e-9
        for k, i in enumerate(idxs):
            if not aligned[k]:
                rejects.append((int(i) + 2, "delivery_start not aligned to product grid"))
        keep = np.flatnonzero(aligned)
        exec_h = (sub_exec - day_start).dt.total_seconds().to_numpy()[keep] / 3600.0
        order = np.argsort(exec_h, kind="stable")
        table = TickTable(
            day,
            dur,
            np.round(prod_idx[keep][order]).astype(np.int64),
            exec_h[order],
            price.to_numpy(dtype=float)[idxs][keep][order],
            volume.to_numpy(dtype=float)[idxs][keep][order],
        )
        store.put_ticks(table)
        days.add(day)
        loaded += len(keep)

    rejects.sort()
    return IngestReport(loaded, tuple(rejects), tuple(sorted(days)))


def ingest_prices(store: DataStore, path: str | Path, series: str) -> IngestReport:
    """Load an auction or index price CSV for one series."""
    if series not in ALL_SERIES:
        raise InputError(f"unknown series {series!r}; have {ALL_SERIES}")
    df = _read_csv(path, _PRICE_COLUMNS)
    delivery = pd.to_datetime(df["delivery_start_iso8601"], errors="coerce", utc=True)
    price = pd.to_numeric(df["price_eur_mwh"], errors="coerce")
    if delivery.isna().any():
        bad = int(delivery.isna().to_numpy().argmax()) + 2
        raise SchemaError(f"{path}: unparseable delivery_start_iso8601 at line {bad}")
    if not np.all(np.isfinite(price.to_numpy(dtype=float))):
        bad = int((~np.isfinite(price.to_numpy(dtype=float))).argmax()) + 2
        raise SchemaError(f"{path}: non-finite price at line {bad}")

    step = 1.0 if series == "da" else 0.25
    days: list[date] = []
    for day, sub in df.groupby(delivery.dt.date):
        grid = DeliveryGrid(day, step)
        values = np.full(grid.n_periods, np.nan)
        day_start = grid.day_start
        hours = (delivery[sub.index] - day_start).dt.total_seconds().to_numpy() / 3600.0
        idx = hours / step
        if np.any(np.abs(idx - np.round(idx)) > 1e-9):
            raise SchemaError(f"{path}: delivery_start not aligned to {step}h grid for {day}")
        values[np.round(idx).astype(int)] = price[sub.index].to_numpy(dtype=float)
        if np.any(np.isnan(values)):
            raise SchemaError(f"{path}: series {series!r} for {day} does not cover the full day")
        store.put_series(day, series, values)
        days.append(day)
    return IngestReport(int(len(df)), (), tuple(sorted(days)))


# ---------------------------------------------------------------------------
# On-disk layout
# ---------------------------------------------------------------------------


def tick_file(data_dir: str | Path, day: date, duration_hours: float) -> Path:
    return Path(data_dir) / f"{day.isoformat()}_ticks_{_DURATION_SUFFIX[duration_hours]}.csv"


def series_file(data_dir: str | Path, day: date, series: str) -> Path:
    return Path(data_dir) / f"{day.isoformat()}_{series}.csv"


def write_day(data_dir: str | Path, data: DayData) -> list[Path]:
    """Write one day's data using the file conventions; returns paths written."""
    out_dir = Path(data_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    day_start = datetime(data.day.year, data.day.month, data.day.day, tzinfo=timezone.utc)
    for dur, table in sorted(data.ticks.items()):
        starts = day_start + pd.to_timedelta(table.product_idx * dur, unit="h")
        execs = day_start + pd.to_timedelta(table.exec_hours, unit="h")
        df = pd.DataFrame(
            {
                "delivery_start_iso8601": starts.strftime("%Y-%m-%dT%H:%M:%S+00:00"),
                "duration_min": np.full(len(table), int(round(dur * 60))),
                "execution_time_iso8601": execs.strftime("%Y-%m-%dT%H:%M:%S.%f+00:00"),
                "price_eur_mwh": table.price,
                "volume_mw": table.volume,
            }
        )
        path = tick_file(out_dir, data.day, dur)
        df.to_csv(path, index=False)
        written.append(path)
    for name, values in sorted(data.series.items()):
        step = 1.0 if name == "da" else 0.25
        starts = day_start + pd.to_timedelta(np.arange(len(values)) * step, unit="h")
        df = pd.DataFrame(
            {
                "delivery_start_iso8601": starts.strftime("%Y-%m-%dT%H:%M:%S+00:00"),
                "price_eur_mwh": values,
            }
        )
        path = series_file(out_dir, data.day, name)
        df.to_csv(path, index=False)
        written.append(path)
    return written


def load_day(
    data_dir: str | Path,
    day: date,
    durations: tuple[float, ...] = (0.25, 1.0),
    series: tuple[str, ...] = ALL_SERIES,
    required: bool = False,
) -> DayData:
    """Load one day from the conventional file layout.

    With ``required=False`` missing files are simply absent from the result
    (consumers raise ``DataMissingError`` on access); with ``required=True``
    the first missing file raises immediately.
    """
    store = DataStore()
    for dur in durations:
        path = tick_file(data_dir, day, dur)
        if path.exists():
            ingest_ticks(store, path)
        elif required:
            raise DataMissingError(f"missing tick file {path}")
    for name in series:
        path = series_file(data_dir, day, name)
        if path.exists():
            ingest_prices(store, path, name)
        elif required:
            raise DataMissingError(f"missing price file {path}")
    return store.day(day)


# ---------------------------------------------------------------------------
# Synthetic scenarios
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the seeded synthetic market generator.

    The tick arrival rate per product rises toward delivery as
    ``tick_intensity / (hours_to_delivery + 0.5)`` trades per hour, which
    reproduces the concentration of liquidity in the last hours before
    delivery. Tick price noise widens with time to delivery.
    """

    rng_seed: int = 42
    base_price_eur: float = 65.0
    daily_shape_amplitude: float = 40.0
    tick_intensity: float = 150.0
    price_noise_sd: float = 6.0
    spread_drift: float = 4.0

    def __post_init__(self):
        for name in (
            "daily_shape_amplitude",
            "tick_intensity",
            "price_noise_sd",
            "spread_drift",
        ):
            if getattr(self, name) < 0:
                raise InputError(f"{name} must be >= 0")


def _daily_shape(hours: np.ndarray) -> np.ndarray:
    """Smooth day profile in [-1, 1]: midday dip, morning/evening peaks."""
    return 0.65 * np.cos(2 * np.pi * (hours - 18.5) / 24.0) + 0.35 * np.cos(
        4 * np.pi * (hours - 6.5) / 24.0
    )


def _rng(config: SynthConfig, day: date, stream: int) -> np.random.Generator:
    return np.random.default_rng([config.rng_seed, day.toordinal(), stream])


def _product_ticks(
    rng: np.random.Generator,
    config: SynthConfig,
    anchor: float,
    start_h: float,
    gate_h: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Tick (times, prices, volumes) for one product.

    The fair price follows a slow mean-reverting path around the anchor;
    trades bounce between the two sides of an effective spread that widens
    with time to delivery (thin books far out), matching the qualitative
    liquidity picture of continuous intraday markets.
    """
    slot = 1.0 / 12.0  # 5-minute arrival slots
    edges = np.arange(gate_h, start_h, slot)
    if len(edges) == 0 or config.tick_intensity == 0:
        return np.empty(0), np.empty(0), np.empty(0)
    mids = np.minimum(edges + slot / 2.0, start_h)
    htd = start_h - mids
    lam = config.tick_intensity / (htd + 0.5) * slot
    counts = rng.poisson(lam)

    # Mean-reverting fair-price path over slots (half-life a few hours).
    n_slots = len(edges)
    rho = 0.985
    eps = rng.standard_normal(n_slots)
    path = np.empty(n_slots)
    acc = 0.0
    scale = config.price_noise_sd * math.sqrt(1.0 - rho * rho)
    for k in range(n_slots):
        acc = rho * acc + scale * eps[k]
        path[k] = acc

    total = int(counts.sum())
    if total == 0:
        return np.empty(0), np.empty(0), np.empty(0)
    slot_of_tick = np.repeat(np.arange(n_slots), counts)
    width = np.minimum(edges[slot_of_tick] + slot, start_h) - edges[slot_of_tick]
    times = edges[slot_of_tick] + rng.random(total) * width
    # Effective spread widens with time to delivery faster than price gaps
    # between delivery periods grow, so stale far-out liquidity is quoted
    # too wide to arbitrage, as in the real order book.
    half_spread = 0.5 * config.spread_drift + 0.15 * config.daily_shape_amplitude * htd[slot_of_tick]
    bounce = half_spread * rng.choice([-1.0, 1.0], size=total)
    idio = rng.normal(0.0, 0.1 * config.price_noise_sd, total)
    prices = anchor + path[slot_of_tick] + idio + bounce
    volumes = np.round(rng.lognormal(0.4, 0.6, total), 1) + 0.1
    order = np.argsort(times, kind="stable")
    return times[order], prices[order], volumes[order]


def generate_synthetic_day(config: SynthConfig, day: date) -> DayData:
    """Deterministic synthetic market data for one delivery day."""
    data = DayData(day)
    hours = np.arange(24, dtype=float)
    qhours = np.arange(96, dtype=float) * 0.25

    level_rng = _rng(config, day, 0)
    day_factor = 1.0 + 0.25 * float(level_rng.standard_normal())
    base_curve = config.base_price_eur + config.daily_shape_amplitude * day_factor * _daily_shape(hours)
    da = base_curve + level_rng.normal(0.0, 0.5 * config.price_noise_sd, 24)

    # Quarter anchors: hourly anchor plus a deterministic within-hour ramp
    # (net-load gradients make consecutive quarters systematically differ).
    ramp = np.tile(np.array([-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0]), 24)
    q_anchor = np.repeat(da, 4) + 0.15 * config.daily_shape_amplitude * ramp

    series_rng = _rng(config, day, 1)
    data.series["da"] = da
    data.series["ida1"] = q_anchor + series_rng.normal(0.0, 0.5 * config.price_noise_sd, 96)
    data.series["id1"] = q_anchor + series_rng.normal(0.0, 1.2 * config.price_noise_sd, 96)
    data.series["id3"] = q_anchor + series_rng.normal(0.0, 0.8 * config.price_noise_sd, 96)
    data.series["idfull"] = q_anchor + series_rng.normal(0.0, 0.6 * config.price_noise_sd, 96)
    data.series["id_aep"] = q_anchor + series_rng.normal(0.0, 1.5 * config.price_noise_sd, 96)

    gate_h = -GATE_OPEN_HOURS_BEFORE_MIDNIGHT
    h_anchor = da + series_rng.normal(0.0, 0.2 * config.price_noise_sd, 24)

    for duration, anchors, starts, stream in (
        (0.25, q_anchor, qhours, 2),
        (1.0, h_anchor, hours, 3),
    ):
        all_idx, all_t, all_p, all_v = [], [], [], []
        for p_idx, start_h in enumerate(starts):
            rng = _rng(config, day, stream * 1000 + p_idx)
            t, p, v = _product_ticks(rng, config, float(anchors[p_idx]), float(start_h), gate_h)
            all_idx.append(np.full(len(t), p_idx, dtype=np.int64))
            all_t.append(t)
            all_p.append(p)
            all_v.append(v)
        t = np.concatenate(all_t)
        order = np.argsort(t, kind="stable")
        data.ticks[duration] = TickTable(
            day,
            duration,
            np.concatenate(all_idx)[order],
            t[order],
            np.concatenate(all_p)[order],
            np.concatenate(all_v)[order],
        )
    return data


def synth_days(start: date, n_days: int) -> list[date]:
    return [start + timedelta(days=i) for i in range(n_days)]
