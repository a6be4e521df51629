"""Bid/ask quote construction from trade ticks.

For each trading time on an equidistant bucket grid, the bid (ask) of a
product is the nearest-rank low (high) empirical quantile of the trade
prices executed in the preceding bucket, provided the bucket holds at least
``min_trades`` trades; otherwise the product is quoted at the -/+ sentinel.
Quantiles are unweighted over prices; trade volumes do not enter quoting.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .errors import InputError
from .marketdata import GATE_OPEN_HOURS_BEFORE_MIDNIGHT, TickTable
from .models import SENTINEL_EUR, DeliveryGrid, PriceCurve


@dataclass(frozen=True)
class QuoteConfig:
    """Quote construction parameters (defaults: 5-minute buckets, 20%/80%)."""

    bucket_minutes: int = 5
    min_trades: int = 10
    bid_quantile: float = 0.20
    ask_quantile: float = 0.80
    sentinel_eur: float = SENTINEL_EUR
    product_duration_hours: float = 0.25
    gate_open_hours_before_midnight: float = GATE_OPEN_HOURS_BEFORE_MIDNIGHT

    def __post_init__(self):
        if not 0 < self.bid_quantile <= self.ask_quantile < 1:
            raise InputError("need 0 < bid_quantile <= ask_quantile < 1")
        if self.min_trades < 1:
            raise InputError("min_trades must be >= 1")
        if self.bucket_minutes < 1:
            raise InputError("bucket_minutes must be >= 1")
        if self.product_duration_hours not in (0.25, 1.0):
            raise InputError("product_duration_hours must be 0.25 or 1.0")

    def label(self) -> str:
        return (
            f"{self.bucket_minutes}min_q{self.bid_quantile:g}-{self.ask_quantile:g}"
            f"_{'q' if self.product_duration_hours == 0.25 else 'h'}"
        )


@dataclass(frozen=True)
class QuoteCurve:
    """Bid/ask per product observed at one trading time."""

    trading_time: datetime
    prices: PriceCurve
    trade_counts: np.ndarray
    quoted: np.ndarray  # trade_counts >= min_trades
    tradable: np.ndarray  # delivery has not started at trading_time

    def __post_init__(self):
        n = self.prices.grid.n_periods
        counts = np.asarray(self.trade_counts, dtype=np.int64)
        quoted = np.asarray(self.quoted, dtype=bool)
        tradable = np.asarray(self.tradable, dtype=bool)
        for arr, name in ((counts, "trade_counts"), (quoted, "quoted"), (tradable, "tradable")):
            if arr.shape != (n,):
                raise InputError(f"{name} must have length {n}")
            arr.flags.writeable = False
        object.__setattr__(self, "trade_counts", counts)
        object.__setattr__(self, "quoted", quoted)
        object.__setattr__(self, "tradable", tradable)


def nearest_rank_quantile(sorted_prices: np.ndarray, q: float) -> float:
    """ceil(q*n)-th order statistic; defined for any n >= 1 and 0 < q < 1."""
    n = len(sorted_prices)
    rank = max(1, math.ceil(q * n))
    return float(sorted_prices[min(rank, n) - 1])


def build_quotes(ticks: TickTable, grid: DeliveryGrid, config: QuoteConfig) -> list[QuoteCurve]:
    """One QuoteCurve per trading grid point covering the delivery day.

    Bucket ``j`` holds exactly the trades with execution time in
    ``(t_{j-1}, t_j]``; the first bucket opens at the intraday gate opening.
    Trading points run until the last product's delivery starts.
    """
    if ticks.duration_hours != config.product_duration_hours:
        raise InputError(
            f"tick table holds {ticks.duration_hours}h products, "
            f"config expects {config.product_duration_hours}h"
        )
    if ticks.day != grid.day or grid.step_hours != config.product_duration_hours:
        raise InputError("grid does not match the tick table's day/duration")

    n = grid.n_periods
    step_h = config.bucket_minutes / 60.0
    gate_h = -config.gate_open_hours_before_midnight
    last_start_h = 24.0 - grid.step_hours
    n_buckets = int(math.floor((last_start_h - gate_h) / step_h - 1e-9))
    if n_buckets <= 0:
        return []

    edges = gate_h + step_h * np.arange(n_buckets + 1)
    product_starts = grid.period_start_hours()
    day_start = grid.day_start
    sentinel = config.sentinel_eur

    # Per product: bucket boundaries into its tick stream, then quantiles for
    # buckets meeting the trade-count threshold only.
    counts = np.zeros((n, n_buckets), dtype=np.int64)
    bid = np.full((n, n_buckets), -sentinel)
    ask = np.full((n, n_buckets), sentinel)
    for p in range(n):
        sel = ticks.product_idx == p
        times = ticks.exec_hours[sel]
        prices = ticks.price[sel]
        if len(times) == 0:
            continue
        pos = np.searchsorted(times, edges, side="right")
        counts[p] = np.diff(pos)
        for j in np.flatnonzero(counts[p] >= config.min_trades):
            window = np.sort(prices[pos[j] : pos[j + 1]])
            bid[p, j] = nearest_rank_quantile(window, config.bid_quantile)
            ask[p, j] = nearest_rank_quantile(window, config.ask_quantile)

    quoted = counts >= config.min_trades
    curves: list[QuoteCurve] = []
    for j in range(n_buckets):
        hi_edge = float(edges[j + 1])
        curves.append(
            QuoteCurve(
                trading_time=day_start + timedelta(hours=hi_edge),
                prices=PriceCurve(grid, bid[:, j].copy(), ask[:, j].copy()),
                trade_counts=counts[:, j].copy(),
                quoted=quoted[:, j].copy(),
                tradable=product_starts > hi_edge,
            )
        )
    return curves


def write_quotes_csv(curves: list[QuoteCurve], path: str | Path) -> None:
    """Dump quote curves as CSV (one row per trading time and product)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trading_time", "delivery_start", "bid", "ask", "n_trades"])
        for curve in curves:
            for p, start in enumerate(curve.prices.grid.periods):
                writer.writerow(
                    [
                        curve.trading_time.isoformat(),
                        start.isoformat(),
                        repr(float(curve.prices.bid[p])),
                        repr(float(curve.prices.ask[p])),
                        int(curve.trade_counts[p]),
                    ]
                )
