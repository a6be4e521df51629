"""Strategy composition: single- and multi-market bidding chains.

A strategy is an ordered chain of market stages separated by ``|``: the
first stage dispatches from a flat position against its prices, every later
stage re-optimizes holding the previous stage's position, and the day's
profit is the sum of stage objectives. Auctions and price indices quote a
single price per period (bid == ask); the continuous intraday market is
traded with the rolling-intrinsic loop.

Index-based stages (ID1, ID3, IDFULL, ID_AEP) are ex-post benchmarks, not
tradable strategies; results carry a flag so reports can mark them.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date

import numpy as np

from .dispatch import OptimizeRequest, optimize, residual_trades, trade_value_eur
from .errors import InputError, UnknownStrategyError
from .marketdata import DayData
from .models import (
    BatteryConfig,
    DeliveryGrid,
    DispatchSchedule,
    Position,
    PriceCurve,
    propagate_soc,
    replicate_hourly_position,
)
from .quotes import QuoteConfig, build_quotes
from .rolling import run_rolling_intrinsic

DA_AUCTION = "DA_AUCTION"
ID_AUCTION = "ID_AUCTION"
INDEX = "INDEX"
ID_ROLLING = "ID_ROLLING"

_TOKENS = {
    "DA": (DA_AUCTION, "da", False),
    "ID_AUCT": (ID_AUCTION, "ida1", False),
    "ID1": (INDEX, "id1", True),
    "ID3": (INDEX, "id3", True),
    "IDFULL": (INDEX, "idfull", True),
    "ID_AEP": (INDEX, "id_aep", True),
    "ID_ROLL": (ID_ROLLING, None, False),
}

KNOWN_STRATEGY_TOKENS = tuple(_TOKENS)


@dataclass(frozen=True)
class MarketStage:
    kind: str
    name: str
    series: str | None
    is_index: bool


@dataclass(frozen=True)
class StrategySpec:
    strategy_id: str
    stages: tuple[MarketStage, ...]

    @property
    def contains_index(self) -> bool:
        return any(s.is_index for s in self.stages)


def parse_strategy(strategy_id: str) -> StrategySpec:
    """Parse ``"X|Y|..."`` chain notation into a StrategySpec."""
    tokens = [t.strip().upper() for t in strategy_id.split("|")]
    if not tokens or any(not t for t in tokens):
        raise UnknownStrategyError(f"empty stage in strategy {strategy_id!r}")
    stages = []
    for pos, tok in enumerate(tokens):
        if tok not in _TOKENS:
            raise UnknownStrategyError(
                f"unknown strategy token {tok!r}; known: {', '.join(_TOKENS)}"
            )
        kind, series, is_index = _TOKENS[tok]
        if kind == DA_AUCTION and pos > 0:
            raise UnknownStrategyError(
                "DA must be the first stage (hourly positions cannot follow quarter-hour stages)"
            )
        if kind == ID_ROLLING and pos != len(tokens) - 1:
            raise UnknownStrategyError("ID_ROLL must be the last stage")
        stages.append(MarketStage(kind, tok, series, is_index))
    if sum(1 for s in stages if s.kind == ID_ROLLING) > 1:
        raise UnknownStrategyError("at most one ID_ROLL stage is allowed")
    return StrategySpec("|".join(tokens), tuple(stages))


@dataclass(frozen=True)
class StageOutcome:
    name: str
    objective_eur: float
    traded_mwh: float


@dataclass(frozen=True)
class StrategyDayResult:
    day: date
    strategy_id: str
    battery_id: str
    total_eur: float
    stages: tuple[StageOutcome, ...]
    cycles_used: float
    traded_mwh: float
    contains_index: bool
    da_priced_on_forecast: bool
    schedule: DispatchSchedule | None


def _bridge(position: Position | None, grid: DeliveryGrid) -> Position:
    if position is None:
        return Position.zero(grid)
    if position.grid == grid:
        return position
    if position.grid.step_hours == 1.0 and grid.step_hours == 0.25:
        return replicate_hourly_position(position, grid)
    raise InputError(
        f"cannot bridge a {position.grid.step_hours}h position to a {grid.step_hours}h stage"
    )


def run_strategy(
    spec: StrategySpec | str,
    data: DayData,
    battery: BatteryConfig,
    quote_config: QuoteConfig | None = None,
    da_forecast: np.ndarray | None = None,
    freeze_lead_hours: float = 0.0,
    retain_schedule: bool = False,
    quotes_cache: dict | None = None,
) -> StrategyDayResult:
    """Run one strategy for one day; see module docstring for semantics."""
    if isinstance(spec, str):
        spec = parse_strategy(spec)
    qc = quote_config if quote_config is not None else QuoteConfig()
    day = data.day
    hourly = DeliveryGrid(day, 1.0)
    quarter = DeliveryGrid(day, 0.25)

    position: Position | None = None
    outcomes: list[StageOutcome] = []
    for stage in spec.stages:
        if stage.kind == ID_ROLLING:
            grid = quarter if qc.product_duration_hours == 0.25 else hourly
            start = _bridge(position, grid)
            key = (qc.product_duration_hours, qc.label())
            quotes = None if quotes_cache is None else quotes_cache.get(key)
            if quotes is None:
                quotes = build_quotes(data.get_ticks(qc.product_duration_hours), grid, qc)
                if quotes_cache is not None:
                    quotes_cache[key] = quotes
            rolled = run_rolling_intrinsic(
                battery, quotes, start, freeze_lead_hours=freeze_lead_hours
            )
            position = rolled.final_position
            traded = sum(s.bought_mwh + s.sold_mwh for s in rolled.steps)
            outcomes.append(StageOutcome(stage.name, rolled.total_value_eur, traded))
            continue

        grid = hourly if stage.kind == DA_AUCTION else quarter
        start = _bridge(position, grid)
        realized = PriceCurve.single_price(grid, data.get_series(stage.series))
        priced = realized
        if stage.kind == DA_AUCTION and da_forecast is not None:
            priced = PriceCurve.single_price(grid, da_forecast)
        result = optimize(OptimizeRequest(battery, priced, start))
        if priced is not realized:
            # Optimized on the forecast, settled at realized auction prices.
            buys, sells = residual_trades(
                result.schedule.charge_mw, result.schedule.discharge_mw, start
            )
            objective = trade_value_eur(realized, buys, sells)
        else:
            objective = result.objective_eur
        traded = float(
            np.sum(result.residual_buys_mw + result.residual_sells_mw) * grid.step_hours
        )
        position = result.schedule.position()
        outcomes.append(StageOutcome(stage.name, objective, traded))

    assert position is not None
    soc = propagate_soc(battery, position.grid.step_hours, position.charge_mw, position.discharge_mw)
    schedule = DispatchSchedule(
        position.grid,
        position.charge_mw.copy(),
        position.discharge_mw.copy(),
        (position.charge_mw > 1e-9).astype(np.int8),
        soc,
    )
    return StrategyDayResult(
        day=day,
        strategy_id=spec.strategy_id,
        battery_id=battery.name,
        total_eur=float(sum(o.objective_eur for o in outcomes)),
        stages=tuple(outcomes),
        cycles_used=schedule.cycles_used(battery),
        traded_mwh=float(sum(o.traded_mwh for o in outcomes)),
        contains_index=spec.contains_index,
        da_priced_on_forecast=da_forecast is not None,
        schedule=schedule if retain_schedule else None,
    )
