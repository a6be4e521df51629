"""Core domain types: battery parameters, time grids, prices, positions, schedules.

Conventions used across the package:
- power in MW, energy in MWh, prices in EUR/MWh,
- all timestamps timezone-aware UTC (DST days are out of scope),
- a delivery day runs 00:00-24:00 UTC with an equidistant period grid,
- value objects are frozen dataclasses; numpy payloads are marked read-only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone

import numpy as np

from .errors import GridMismatchError, InputError

# Shared numerical tolerances (MWh / MW respectively EUR).
ENERGY_TOL = 1e-6
MONEY_TOL = 1e-4

# Price assigned to products without enough trades in a bucket: quoting at
# -4000 (bid) / +4000 (ask) makes them economically untradable without
# special-casing downstream.
SENTINEL_EUR = 4000.0


def _freeze(values, dtype=float) -> np.ndarray:
    arr = np.asarray(values, dtype=dtype).copy()
    arr.flags.writeable = False
    return arr


def _utc(ts: datetime) -> datetime:
    if ts.tzinfo is None:
        raise InputError(f"naive timestamp not allowed: {ts!r}")
    return ts.astimezone(timezone.utc)


@dataclass(frozen=True)
class BatteryConfig:
    """Physical and contractual battery parameters."""

    max_power_mw: float
    capacity_mwh: float
    eta_charge: float
    eta_discharge: float
    max_daily_cycles: float
    soc_initial_mwh: float
    soc_terminal_mwh: float
    name: str = "custom"

    def __post_init__(self):
        if not self.max_power_mw > 0:
            raise InputError("max_power_mw must be positive")
        if not self.capacity_mwh > 0:
            raise InputError("capacity_mwh must be positive")
        if not 0 < self.eta_charge <= 1:
            raise InputError("eta_charge must be in (0, 1]")
        if not 0 < self.eta_discharge <= 1:
            raise InputError("eta_discharge must be in (0, 1]")
        if self.max_daily_cycles < 0:
            raise InputError("max_daily_cycles must be >= 0")
        if not 0 <= self.soc_initial_mwh <= self.capacity_mwh:
            raise InputError("soc_initial_mwh outside [0, capacity]")
        if not 0 <= self.soc_terminal_mwh <= self.capacity_mwh:
            raise InputError("soc_terminal_mwh outside [0, capacity]")

    @property
    def cycle_budget_mwh(self) -> float:
        """Maximum charged energy per day implied by the cycle limit."""
        return self.max_daily_cycles * self.capacity_mwh


#: Reference battery fleet: equal capacity, C-rates 1C, 0.5C and 0.25C.
BATTERY_PRESETS = {
    "1h": BatteryConfig(2.0, 2.0, 0.97, 0.98, 1.0, 0.5, 0.5, name="1h"),
    "2h": BatteryConfig(1.0, 2.0, 0.97, 0.98, 1.0, 0.5, 0.5, name="2h"),
    "4h": BatteryConfig(0.5, 2.0, 0.97, 0.98, 1.0, 0.5, 0.5, name="4h"),
}


def battery_preset(name: str, max_daily_cycles: float | None = None) -> BatteryConfig:
    """Look up a preset, optionally overriding the daily cycle limit."""
    try:
        preset = BATTERY_PRESETS[name]
    except KeyError:
        raise InputError(f"unknown battery preset {name!r}; have {sorted(BATTERY_PRESETS)}")
    if max_daily_cycles is None:
        return preset
    return BatteryConfig(
        preset.max_power_mw,
        preset.capacity_mwh,
        preset.eta_charge,
        preset.eta_discharge,
        max_daily_cycles,
        preset.soc_initial_mwh,
        preset.soc_terminal_mwh,
        name=f"{name}x{max_daily_cycles:g}",
    )


@dataclass(frozen=True)
class DeliveryGrid:
    """Equidistant delivery-period grid covering one calendar day."""

    day: date
    step_hours: float

    def __post_init__(self):
        if self.step_hours not in (0.25, 1.0):
            raise InputError("step_hours must be 0.25 or 1.0")

    @property
    def n_periods(self) -> int:
        return round(24.0 / self.step_hours)

    @property
    def day_start(self) -> datetime:
        return datetime(self.day.year, self.day.month, self.day.day, tzinfo=timezone.utc)

    @property
    def periods(self) -> tuple[datetime, ...]:
        start = self.day_start
        step = timedelta(hours=self.step_hours)
        return tuple(start + i * step for i in range(self.n_periods))

    def period_start_hours(self) -> np.ndarray:
        """Period start times as hours since day start."""
        return np.arange(self.n_periods) * self.step_hours

    def hours_from_day_start(self, ts: datetime) -> float:
        return ( _utc(ts) - self.day_start).total_seconds() / 3600.0

    def period_index(self, ts: datetime) -> int:
        h = self.hours_from_day_start(ts)
        idx = h / self.step_hours
        if abs(idx - round(idx)) > 1e-9 or not 0 <= round(idx) < self.n_periods:
            raise InputError(f"{ts} is not a period start on the {self.step_hours}h grid of {self.day}")
        return round(idx)


@dataclass(frozen=True)
class Product:
    """A tradable delivery product (quarter, half or full hour)."""

    delivery_start: datetime
    duration_hours: float

    def __post_init__(self):
        if self.duration_hours not in (0.25, 0.5, 1.0):
            raise InputError("duration_hours must be 0.25, 0.5 or 1.0")
        start = _utc(self.delivery_start)
        object.__setattr__(self, "delivery_start", start)
        seconds = start.minute * 60 + start.second + start.microsecond / 1e6
        if (seconds + start.hour * 3600) % (self.duration_hours * 3600) != 0:
            raise InputError(f"delivery_start {start} not aligned to {self.duration_hours}h products")

    @property
    def delivery_day(self) -> date:
        return self.delivery_start.date()


@dataclass(frozen=True)
class TradeTick:
    """One executed intraday trade."""

    product: Product
    execution_time: datetime
    price_eur_mwh: float
    volume_mw: float

    def __post_init__(self):
        object.__setattr__(self, "execution_time", _utc(self.execution_time))
        if not self.volume_mw > 0:
            raise InputError("volume_mw must be positive")
        if not np.isfinite(self.price_eur_mwh):
            raise InputError("price_eur_mwh must be finite")
        if self.execution_time >= self.product.delivery_start:
            raise InputError("trade executed at or after delivery start")


@dataclass(frozen=True)
class PriceCurve:
    """Per-period bid/ask prices on a delivery grid (bid <= ask)."""

    grid: DeliveryGrid
    bid: np.ndarray
    ask: np.ndarray

    def __post_init__(self):
        bid = _freeze(self.bid)
        ask = _freeze(self.ask)
        n = self.grid.n_periods
        if bid.shape != (n,) or ask.shape != (n,):
            raise GridMismatchError(f"price vectors must have length {n}")
        if not (np.all(np.isfinite(bid)) and np.all(np.isfinite(ask))):
            raise InputError("prices must be finite (use +/-4000 sentinels for untradable products)")
        if np.any(bid > ask + 1e-12):
            raise InputError("bid > ask at some period")
        object.__setattr__(self, "bid", bid)
        object.__setattr__(self, "ask", ask)

    @classmethod
    def single_price(cls, grid: DeliveryGrid, prices) -> "PriceCurve":
        """Auction/index curve: one price per period, bid == ask."""
        p = np.asarray(prices, dtype=float)
        return cls(grid, p, p.copy())


@dataclass(frozen=True)
class Position:
    """Contracted charge/discharge power per delivery period."""

    grid: DeliveryGrid
    charge_mw: np.ndarray
    discharge_mw: np.ndarray

    def __post_init__(self):
        c = _freeze(self.charge_mw)
        d = _freeze(self.discharge_mw)
        n = self.grid.n_periods
        if c.shape != (n,) or d.shape != (n,):
            raise GridMismatchError(f"position vectors must have length {n}")
        if np.any(c < -ENERGY_TOL) or np.any(d < -ENERGY_TOL):
            raise InputError("position powers must be non-negative")
        if np.any(np.minimum(c, d) > ENERGY_TOL):
            raise InputError("position charges and discharges the same period")
        object.__setattr__(self, "charge_mw", c)
        object.__setattr__(self, "discharge_mw", d)

    @classmethod
    def zero(cls, grid: DeliveryGrid) -> "Position":
        n = grid.n_periods
        return cls(grid, np.zeros(n), np.zeros(n))

    def validate_power(self, battery: BatteryConfig) -> None:
        if np.any(self.charge_mw > battery.max_power_mw + ENERGY_TOL) or np.any(
            self.discharge_mw > battery.max_power_mw + ENERGY_TOL
        ):
            raise InputError("position exceeds battery max power")

    def charged_mwh(self) -> float:
        return float(np.sum(self.charge_mw) * self.grid.step_hours)


def propagate_soc(
    battery: BatteryConfig,
    step_hours: float,
    charge_mw: np.ndarray,
    discharge_mw: np.ndarray,
    soc_start_mwh: float | None = None,
) -> np.ndarray:
    """State-of-charge trajectory implied by a dispatch (length n_periods + 1)."""
    s0 = battery.soc_initial_mwh if soc_start_mwh is None else soc_start_mwh
    delta = (battery.eta_charge * charge_mw - discharge_mw / battery.eta_discharge) * step_hours
    soc = np.empty(len(charge_mw) + 1)
    soc[0] = s0
    np.cumsum(delta, out=soc[1:])
    soc[1:] += s0
    return soc


def replicate_hourly_position(position: Position, quarter_grid: DeliveryGrid) -> Position:
    """Bridge an hourly position to a quarter-hour grid.

    Power is constant across the hour, so each hourly value becomes four
    identical quarter-hour values; energy and the SoC path are unchanged.
    """
    if position.grid.step_hours != 1.0 or quarter_grid.step_hours != 0.25:
        raise GridMismatchError("expected an hourly position and a quarter-hour target grid")
    if position.grid.day != quarter_grid.day:
        raise GridMismatchError("grids cover different days")
    return Position(
        quarter_grid,
        np.repeat(position.charge_mw, 4),
        np.repeat(position.discharge_mw, 4),
    )


@dataclass(frozen=True)
class DispatchSchedule:
    """Charge/discharge plan with mode flags and the implied SoC trajectory."""

    grid: DeliveryGrid
    charge_mw: np.ndarray
    discharge_mw: np.ndarray
    mode: np.ndarray
    soc_mwh: np.ndarray

    def __post_init__(self):
        n = self.grid.n_periods
        c = _freeze(self.charge_mw)
        d = _freeze(self.discharge_mw)
        b = _freeze(self.mode, dtype=np.int8)
        soc = _freeze(self.soc_mwh)
        if c.shape != (n,) or d.shape != (n,) or b.shape != (n,):
            raise GridMismatchError(f"dispatch vectors must have length {n}")
        if soc.shape != (n + 1,):
            raise GridMismatchError(f"soc trajectory must have length {n + 1}")
        object.__setattr__(self, "charge_mw", c)
        object.__setattr__(self, "discharge_mw", d)
        object.__setattr__(self, "mode", b)
        object.__setattr__(self, "soc_mwh", soc)

    def position(self) -> Position:
        return Position(self.grid, self.charge_mw.copy(), self.discharge_mw.copy())

    def charged_mwh(self) -> float:
        return float(np.sum(self.charge_mw) * self.grid.step_hours)

    def cycles_used(self, battery: BatteryConfig) -> float:
        return self.charged_mwh() / battery.capacity_mwh


@dataclass(frozen=True)
class Violation:
    """One constraint violation found by the schedule checker."""

    constraint: str
    period: int | None
    residual_mwh: float
    message: str


def validate_schedule(schedule: DispatchSchedule, battery: BatteryConfig) -> list[Violation]:
    """Check a schedule against all battery constraints.

    Returns an empty list iff the schedule is feasible; otherwise one entry
    per violated constraint instance with its residual magnitude. Structural
    problems (mismatched grids) raise instead of being reported.
    """
    grid = schedule.grid
    n = grid.n_periods
    dt = grid.step_hours
    c, d, b, soc = schedule.charge_mw, schedule.discharge_mw, schedule.mode, schedule.soc_mwh
    out: list[Violation] = []

    if abs(soc[0] - battery.soc_initial_mwh) > ENERGY_TOL:
        out.append(
            Violation(
                "initial_soc", None, abs(soc[0] - battery.soc_initial_mwh),
                f"SoC_0 = {soc[0]:.6f} MWh differs from configured initial {battery.soc_initial_mwh:.6f} MWh",
            )
        )

    delta = (battery.eta_charge * c - d / battery.eta_discharge) * dt
    dyn = soc[1:] - soc[:-1] - delta
    for i in np.flatnonzero(np.abs(dyn) > ENERGY_TOL):
        out.append(
            Violation(
                "soc_dynamics", int(i), float(abs(dyn[i])),
                f"SoC step at period {i} off by {dyn[i]:+.6f} MWh",
            )
        )

    for name, arr in (("charge", c), ("discharge", d)):
        for i in np.flatnonzero((arr < -ENERGY_TOL) | (arr > battery.max_power_mw + ENERGY_TOL)):
            excess = max(-float(arr[i]), float(arr[i]) - battery.max_power_mw)
            out.append(
                Violation(
                    "power_bound", int(i), excess,
                    f"{name} power {arr[i]:.6f} MW outside [0, {battery.max_power_mw}] at period {i}",
                )
            )

    cross = np.maximum(c * (1 - b), d * b)
    for i in np.flatnonzero(cross > ENERGY_TOL):
        out.append(
            Violation(
                "mutual_exclusion", int(i), float(cross[i]),
                f"charge {c[i]:.6f} MW / discharge {d[i]:.6f} MW with mode {b[i]} at period {i}",
            )
        )

    low = -soc
    high = soc - battery.capacity_mwh
    for i in np.flatnonzero((low > ENERGY_TOL) | (high > ENERGY_TOL)):
        out.append(
            Violation(
                "soc_bound", int(i), float(max(low[i], high[i])),
                f"SoC {soc[i]:.6f} MWh outside [0, {battery.capacity_mwh}] at node {i}",
            )
        )

    charged = float(np.sum(c) * dt)
    if charged > battery.cycle_budget_mwh + ENERGY_TOL:
        out.append(
            Violation(
                "cycle_limit", None, charged - battery.cycle_budget_mwh,
                f"charged {charged:.6f} MWh exceeds cycle budget {battery.cycle_budget_mwh:.6f} MWh",
            )
        )

    if abs(soc[-1] - battery.soc_terminal_mwh) > ENERGY_TOL:
        out.append(
            Violation(
                "terminal_soc", None, abs(float(soc[-1]) - battery.soc_terminal_mwh),
                f"terminal SoC {soc[-1]:.6f} MWh differs from required {battery.soc_terminal_mwh:.6f} MWh",
            )
        )

    return out
