"""Backtest execution: run a strategy/battery grid over a date range and
collect per-day profits into a ledger.

Day runs are independent; with ``jobs > 1`` they fan out to a process pool
and the ledger is re-sorted by (date, strategy, battery) afterwards, so
results are byte-identical regardless of worker count. Days that cannot be
run (missing data) are recorded as skips, not errors.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

from .errors import BessArbError, DataMissingError, InputError
from .marketdata import DayData, DataStore, SynthConfig, generate_synthetic_day, load_day
from .models import BatteryConfig
from .quotes import QuoteConfig
from .strategies import StrategyDayResult, parse_strategy, run_strategy


@dataclass(frozen=True)
class LedgerRow:
    day: date
    strategy_id: str
    battery_id: str
    total_eur: float
    cycles_used: float
    traded_mwh: float
    stage_objectives: tuple[float, ...]
    stage_traded_mwh: tuple[float, ...]
    contains_index: bool

    @classmethod
    def from_result(cls, r: StrategyDayResult) -> "LedgerRow":
        return cls(
            r.day,
            r.strategy_id,
            r.battery_id,
            r.total_eur,
            r.cycles_used,
            r.traded_mwh,
            tuple(s.objective_eur for s in r.stages),
            tuple(s.traded_mwh for s in r.stages),
            r.contains_index,
        )


@dataclass(frozen=True)
class SkipRecord:
    day: date
    strategy_id: str
    battery_id: str
    reason: str


@dataclass(frozen=True)
class ScheduleRecord:
    day: date
    strategy_id: str
    battery_id: str
    step_hours: float
    charge_mw: tuple[float, ...]
    discharge_mw: tuple[float, ...]


@dataclass
class Ledger:
    rows: list[LedgerRow] = field(default_factory=list)

    def sort(self) -> None:
        self.rows.sort(key=lambda r: (r.day, r.strategy_id, r.battery_id))

    def days(self) -> list[date]:
        return sorted({r.day for r in self.rows})

    def select(self, strategy_id: str | None = None, battery_id: str | None = None) -> "Ledger":
        return Ledger(
            [
                r
                for r in self.rows
                if (strategy_id is None or r.strategy_id == strategy_id)
                and (battery_id is None or r.battery_id == battery_id)
            ]
        )

    def profits_by_day(self, strategy_id: str, battery_id: str | None = None) -> dict[date, float]:
        out: dict[date, float] = {}
        for r in self.rows:
            if r.strategy_id == strategy_id and (battery_id is None or r.battery_id == battery_id):
                if r.day in out:
                    raise InputError(
                        f"duplicate ledger row for {r.day}/{strategy_id}; pass battery_id"
                    )
                out[r.day] = r.total_eur
        return out


# ---------------------------------------------------------------------------
# Data providers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthProvider:
    """Generates each day's market data deterministically from a seed."""

    config: SynthConfig

    def day_data(self, day: date) -> DayData:
        return generate_synthetic_day(self.config, day)


@dataclass(frozen=True)
class DirProvider:
    """Loads days from the conventional CSV layout in a directory."""

    path: str

    def day_data(self, day: date) -> DayData:
        return load_day(self.path, day)


@dataclass(frozen=True)
class StoreProvider:
    """Serves preloaded in-memory data (single-process only)."""

    store: DataStore

    def day_data(self, day: date) -> DayData:
        if day not in self.store._days:
            raise DataMissingError(f"no data loaded for {day}")
        return self.store.day(day)


@dataclass
class BacktestResult:
    ledger: Ledger
    skips: list[SkipRecord]
    schedules: list[ScheduleRecord]


def _run_day(provider, day, strategy_ids, batteries, quote_config, freeze_lead_hours, retain):
    rows: list[LedgerRow] = []
    skips: list[SkipRecord] = []
    schedules: list[ScheduleRecord] = []
    try:
        data = provider.day_data(day)
    except DataMissingError as exc:
        for sid in strategy_ids:
            for battery in batteries:
                skips.append(SkipRecord(day, sid, battery.name, str(exc)))
        return rows, skips, schedules

    quotes_cache: dict = {}
    for sid in strategy_ids:
        spec = parse_strategy(sid)
        for battery in batteries:
            try:
                result = run_strategy(
                    spec,
                    data,
                    battery,
                    quote_config,
                    freeze_lead_hours=freeze_lead_hours,
                    retain_schedule=retain,
                    quotes_cache=quotes_cache,
                )
            except DataMissingError as exc:
                skips.append(SkipRecord(day, spec.strategy_id, battery.name, str(exc)))
                continue
            rows.append(LedgerRow.from_result(result))
            if retain and result.schedule is not None:
                schedules.append(
                    ScheduleRecord(
                        day,
                        result.strategy_id,
                        result.battery_id,
                        result.schedule.grid.step_hours,
                        tuple(float(x) for x in result.schedule.charge_mw),
                        tuple(float(x) for x in result.schedule.discharge_mw),
                    )
                )
    return rows, skips, schedules


def run_backtest(
    provider,
    days: list[date],
    strategy_ids: list[str],
    batteries: list[BatteryConfig],
    quote_config: QuoteConfig | None = None,
    jobs: int = 1,
    freeze_lead_hours: float = 0.0,
    retain_schedules: bool = False,
) -> BacktestResult:
    """Run the full grid; returns a date-sorted ledger plus skip records."""
    if not days:
        raise InputError("empty date range")
    if not strategy_ids:
        raise InputError("no strategies given")
    for sid in strategy_ids:
        parse_strategy(sid)  # fail fast on typos
    if len({b.name for b in batteries}) != len(batteries):
        raise InputError("battery labels must be unique within one backtest")

    result = BacktestResult(Ledger(), [], [])
    if jobs > 1 and not isinstance(provider, StoreProvider):
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(
                    _run_day,
                    provider,
                    day,
                    strategy_ids,
                    batteries,
                    quote_config,
                    freeze_lead_hours,
                    retain_schedules,
                )
                for day in days
            ]
            parts = [f.result() for f in futures]
    else:
        parts = [
            _run_day(
                provider, day, strategy_ids, batteries, quote_config,
                freeze_lead_hours, retain_schedules,
            )
            for day in days
        ]
    for rows, skips, schedules in parts:
        result.ledger.rows.extend(rows)
        result.skips.extend(skips)
        result.schedules.extend(schedules)
    result.ledger.sort()
    result.skips.sort(key=lambda s: (s.day, s.strategy_id, s.battery_id))
    result.schedules.sort(key=lambda s: (s.day, s.strategy_id, s.battery_id))
    return result


# ---------------------------------------------------------------------------
# CSV round trips (byte-stable: repr() floats, fixed column order)
# ---------------------------------------------------------------------------

_LEDGER_HEADER = [
    "date",
    "strategy_id",
    "battery_id",
    "total_eur",
    "cycles_used",
    "traded_mwh",
    "stage_objectives",
    "stage_traded_mwh",
    "contains_index",
]


def write_ledger_csv(ledger: Ledger, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_LEDGER_HEADER)
        for r in ledger.rows:
            w.writerow(
                [
                    r.day.isoformat(),
                    r.strategy_id,
                    r.battery_id,
                    repr(r.total_eur),
                    repr(r.cycles_used),
                    repr(r.traded_mwh),
                    ";".join(repr(x) for x in r.stage_objectives),
                    ";".join(repr(x) for x in r.stage_traded_mwh),
                    int(r.contains_index),
                ]
            )
    return path


def read_ledger_csv(path: str | Path) -> Ledger:
    path = Path(path)
    if not path.exists():
        raise DataMissingError(f"ledger file not found: {path}")
    ledger = Ledger()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != _LEDGER_HEADER:
            raise BessArbError(f"unexpected ledger header in {path}: {reader.fieldnames}")
        for row in reader:
            ledger.rows.append(
                LedgerRow(
                    date.fromisoformat(row["date"]),
                    row["strategy_id"],
                    row["battery_id"],
                    float(row["total_eur"]),
                    float(row["cycles_used"]),
                    float(row["traded_mwh"]),
                    tuple(float(x) for x in row["stage_objectives"].split(";") if x),
                    tuple(float(x) for x in row["stage_traded_mwh"].split(";") if x),
                    row["contains_index"] == "1",
                )
            )
    return ledger


def write_skips_csv(skips: list[SkipRecord], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "strategy_id", "battery_id", "reason"])
        for s in skips:
            w.writerow([s.day.isoformat(), s.strategy_id, s.battery_id, s.reason])
    return path


def write_schedules_csv(schedules: list[ScheduleRecord], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["date", "strategy_id", "battery_id", "step_hours", "period_index", "charge_mw", "discharge_mw"]
        )
        for s in schedules:
            for i, (c, d) in enumerate(zip(s.charge_mw, s.discharge_mw)):
                w.writerow(
                    [s.day.isoformat(), s.strategy_id, s.battery_id, repr(s.step_hours), i, repr(c), repr(d)]
                )
    return path


def read_schedules_csv(path: str | Path) -> list[ScheduleRecord]:
    path = Path(path)
    if not path.exists():
        raise DataMissingError(f"schedule file not found: {path}")
    grouped: dict[tuple, dict] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (date.fromisoformat(row["date"]), row["strategy_id"], row["battery_id"])
            g = grouped.setdefault(key, {"step": float(row["step_hours"]), "c": [], "d": []})
            g["c"].append(float(row["charge_mw"]))
            g["d"].append(float(row["discharge_mw"]))
    return [
        ScheduleRecord(day, sid, bid, g["step"], tuple(g["c"]), tuple(g["d"]))
        for (day, sid, bid), g in sorted(grouped.items())
    ]
