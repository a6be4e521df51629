"""Rolling-intrinsic trading: re-optimize residual trades at every trading
time, realize deliveries in between, and accumulate the locked-in value.

Each step solves the dispatch program against the step's quote curve with
all already-delivering periods frozen; the step objective (>= 0, since
keeping the current position trades nothing) is added to the running value.

Steps without any quoted tradable product are skipped with a zero entry:
with sentinel-priced quotes every residual cash flow is non-positive, so the
null trade is optimal. For the same reason the step optimization is by
default restricted to quoted products; the restriction (and the skip) are
only applied when sentinel prices dominate any gain that trading an illiquid
product could unlock, otherwise the full program is solved.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np

from .dispatch import OptimizeRequest, optimize
from .errors import BessArbError, GridMismatchError, InfeasibleError, InputError
from .models import BatteryConfig, DispatchSchedule, Position, propagate_soc


@dataclass
class RollingState:
    """Mutable state carried across rolling steps."""

    position: Position
    realized_charge_mwh: float
    soc_realized_mwh: float
    accumulated_value_eur: float
    current_trading_index: int


@dataclass(frozen=True)
class RollingStep:
    """Log record of one trading time."""

    trading_time: datetime
    objective_eur: float
    bought_mwh: float
    sold_mwh: float
    n_quoted: int
    soc_realized_mwh: float
    solved: bool


@dataclass(frozen=True)
class RollingResult:
    total_value_eur: float
    final_position: Position
    final_schedule: DispatchSchedule
    steps: tuple[RollingStep, ...]


def _restriction_margin(curve, tradable: np.ndarray, battery: BatteryConfig) -> bool:
    """True if illiquid products are priced so badly that trading them can
    never beat a solution that leaves them untouched.

    A trade on a sentinel-priced product loses at least ``B`` EUR/MWh, and the
    SoC slack it frees can earn at most ``2 M / (eta_c eta_d)`` EUR/MWh from
    quoted products, where ``M`` bounds quoted price magnitudes.
    """
    quoted_t = curve.quoted & tradable
    unquoted_t = ~curve.quoted & tradable
    if not unquoted_t.any():
        return True
    b = float(
        np.minimum(-curve.prices.bid[unquoted_t], curve.prices.ask[unquoted_t]).min()
    )
    if not quoted_t.any():
        return b > 0.0
    m = float(
        np.maximum(
            np.abs(curve.prices.bid[quoted_t]), np.abs(curve.prices.ask[quoted_t])
        ).max()
    )
    return 2.0 * m / (battery.eta_charge * battery.eta_discharge) < 0.9 * b


def run_rolling_intrinsic(
    battery: BatteryConfig,
    quotes,
    start_position: Position | None = None,
    freeze_lead_hours: float = 0.0,
    restrict_to_quoted: bool = True,
) -> RollingResult:
    """Run the rolling loop over an ordered sequence of QuoteCurves."""
    if not quotes:
        raise InputError("need at least one quote curve")
    grid = quotes[0].prices.grid
    n = grid.n_periods
    dt = grid.step_hours
    position = start_position if start_position is not None else Position.zero(grid)
    if position.grid != grid:
        raise GridMismatchError("start position grid does not match the quotes")

    state = RollingState(position, 0.0, battery.soc_initial_mwh, 0.0, 0)
    steps: list[RollingStep] = []
    prev_time: datetime | None = None

    for j, curve in enumerate(quotes):
        if curve.prices.grid != grid:
            raise GridMismatchError(f"quote curve {j} lives on a different grid")
        if prev_time is not None and curve.trading_time <= prev_time:
            raise InputError("quote curves must be strictly increasing in trading time")
        prev_time = curve.trading_time

        frozen_before = curve.trading_time + timedelta(hours=freeze_lead_hours)
        h = grid.hours_from_day_start(frozen_before)
        n_frozen = int(np.clip(np.ceil(h / dt - 1e-9), 0, n))
        tradable = np.arange(n) >= n_frozen
        quoted_tradable = curve.quoted & tradable

        pos = state.position
        state.realized_charge_mwh = float(np.sum(pos.charge_mw[:n_frozen]) * dt)
        state.soc_realized_mwh = float(
            propagate_soc(battery, dt, pos.charge_mw[:n_frozen], pos.discharge_mw[:n_frozen])[-1]
        )
        state.current_trading_index = j

        n_quoted = int(np.count_nonzero(quoted_tradable))
        safe = _restriction_margin(curve, tradable, battery)
        # Null-trade screen: any rebalance converts SoC sourced by buying
        # (new charge at ask/eta_c, bought-back discharge at ask*eta_d per
        # SoC-MWh) into cash via a sink (sold discharge at bid*eta_d, sold-
        # back charge at bid/eta_c). If the best sink rate does not exceed
        # the best source rate, no bundle is profitable and the step is
        # exactly zero without solving.
        if n_quoted:
            max_bid = float(curve.prices.bid[quoted_tradable].max())
            min_ask = float(curve.prices.ask[quoted_tradable].min())
            sink = max(max_bid * battery.eta_discharge, max_bid / battery.eta_charge)
            source = min(min_ask / battery.eta_charge, min_ask * battery.eta_discharge)
            no_gain = sink <= source
        else:
            no_gain = True
        if n_frozen >= n or (safe and no_gain):
            steps.append(
                RollingStep(
                    curve.trading_time, 0.0, 0.0, 0.0, n_quoted, state.soc_realized_mwh, False
                )
            )
            continue

        mask = quoted_tradable if (restrict_to_quoted and safe) else None
        request = OptimizeRequest(
            battery,
            curve.prices,
            pos,
            realized_charge_mwh=state.realized_charge_mwh,
            frozen_before=frozen_before,
            tradable_mask=mask,
        )
        try:
            result = optimize(request)
        except InfeasibleError as exc:
            raise BessArbError(
                f"rolling step {j} at {curve.trading_time.isoformat()} infeasible "
                f"({exc.binding_constraint}); the held position should always be feasible"
            ) from exc

        state.position = result.schedule.position()
        state.accumulated_value_eur += result.objective_eur
        steps.append(
            RollingStep(
                curve.trading_time,
                result.objective_eur,
                float(np.sum(result.residual_buys_mw) * dt),
                float(np.sum(result.residual_sells_mw) * dt),
                n_quoted,
                state.soc_realized_mwh,
                True,
            )
        )

    final = state.position
    soc = propagate_soc(battery, dt, final.charge_mw, final.discharge_mw)
    schedule = DispatchSchedule(
        grid, final.charge_mw.copy(), final.discharge_mw.copy(),
        (final.charge_mw > 1e-9).astype(np.int8), soc,
    )
    return RollingResult(state.accumulated_value_eur, final, schedule, tuple(steps))
