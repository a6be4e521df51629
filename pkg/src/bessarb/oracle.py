"""Exhaustive verification oracle for the dispatch optimizer.

Solves the same program as ``dispatch.optimize`` by dynamic programming over
a discretized SoC lattice, tracking cumulative charged energy exactly via
Pareto frontiers (max value, min throughput) instead of a discretized
throughput axis. Exact whenever the optimal SoC trajectory lies on the
lattice. Deliberately shares no solver code with the LP/branch-and-bound
path.
"""

from __future__ import annotations

import numpy as np

from .dispatch import OptimizeRequest, OptimizeResult, residual_trades, trade_value_eur
from .errors import InfeasibleError, InstanceTooLargeError
from .models import DispatchSchedule, propagate_soc

_MAX_PERIODS = 12
_MAX_LEVELS = 51
_KEY_DIGITS = 9

# Frontier entry: (charged_mwh, value_eur, parent); parent is
# (soc_key_at_previous_stage, entry_index_there, charge_mw, discharge_mw).
_Entry = tuple[float, float, tuple | None]


def _key(x: float) -> float:
    return round(x, _KEY_DIGITS)


def _insert(frontier: list[_Entry], charged: float, value: float, parent) -> None:
    """Insert into a Pareto frontier (min charged, max value)."""
    charged = _key(charged)
    for fc, fv, _ in frontier:
        if fc <= charged + 1e-12 and fv >= value - 1e-12:
            return  # dominated by an existing entry
    frontier[:] = [
        e for e in frontier if not (charged <= e[0] + 1e-12 and value >= e[1] - 1e-12)
    ]
    frontier.append((charged, value, parent))
    frontier.sort(key=lambda e: e[0])


def _free_moves(x: float, targets: list[float], dt, eta_c, eta_d, p_max):
    """Idle plus every lattice target reachable within the power bound."""
    moves = [(x, 0.0, 0.0)]
    for y in targets:
        delta = y - x
        if delta > 1e-9:
            c = delta / (eta_c * dt)
            if c <= p_max + 1e-9:
                moves.append((y, min(c, p_max), 0.0))
        elif delta < -1e-9:
            d = -delta * eta_d / dt
            if d <= p_max + 1e-9:
                moves.append((y, 0.0, min(d, p_max)))
    return moves


def brute_force_oracle(request: OptimizeRequest, soc_levels: int) -> OptimizeResult:
    """Exact optimum of the dispatch program on a ``soc_levels``-point lattice.

    Refuses instances beyond 12 periods or 51 levels; intended for tests and
    cross-checks only.
    """
    grid = request.prices.grid
    n = grid.n_periods
    battery = request.battery
    dt = grid.step_hours
    pos = request.initial_position
    cbar, dbar = pos.charge_mw, pos.discharge_mw
    bid, ask = request.prices.bid, request.prices.ask
    cap = battery.capacity_mwh
    p_max = battery.max_power_mw
    eta_c, eta_d = battery.eta_charge, battery.eta_discharge

    n_frozen = request.frozen_count()
    free = np.ones(n, dtype=bool)
    free[:n_frozen] = False
    if request.tradable_mask is not None:
        free &= request.tradable_mask

    # Guard against state-space blow-up: only freely optimized periods add
    # branching; frozen/masked periods have a single forced transition.
    if int(free.sum()) > _MAX_PERIODS or soc_levels > _MAX_LEVELS:
        raise InstanceTooLargeError(
            f"oracle limited to {_MAX_PERIODS} free periods and {_MAX_LEVELS} SoC levels"
        )
    if soc_levels < 2:
        raise InstanceTooLargeError("need at least 2 SoC levels")

    prefix_charge = float(np.sum(cbar[:n_frozen]) * dt)
    budget = battery.cycle_budget_mwh - max(request.realized_charge_mwh, prefix_charge)
    terminal = battery.soc_terminal_mwh
    targets = sorted({_key(float(v)) for v in np.linspace(0.0, cap, soc_levels)} | {_key(terminal)})

    tables: list[dict[float, list[_Entry]]] = [
        {_key(battery.soc_initial_mwh): [(0.0, 0.0, None)]}
    ]
    for i in range(n):
        nxt: dict[float, list[_Entry]] = {}
        for x_key in sorted(tables[i]):
            for entry_idx, (charged, value, _) in enumerate(tables[i][x_key]):
                if free[i]:
                    moves = _free_moves(x_key, targets, dt, eta_c, eta_d, p_max)
                else:
                    delta = (eta_c * cbar[i] - dbar[i] / eta_d) * dt
                    moves = [(x_key + delta, float(cbar[i]), float(dbar[i]))]
                for y, c, d in moves:
                    if y < -1e-9 or y > cap + 1e-9:
                        continue
                    add = c * dt if i >= n_frozen else 0.0
                    if charged + add > budget + 1e-9:
                        continue
                    if free[i]:
                        buy = max(c - cbar[i], 0.0) + max(dbar[i] - d, 0.0)
                        sell = max(d - dbar[i], 0.0) + max(cbar[i] - c, 0.0)
                        reward = dt * (bid[i] * sell - ask[i] * buy)
                    else:
                        reward = 0.0
                    parent = (x_key, entry_idx, c, d)
                    _insert(nxt.setdefault(_key(y), []), charged + add, value + reward, parent)
        if not nxt:
            raise InfeasibleError(
                f"no lattice trajectory survives past period {i}",
                binding_constraint="soc_bound",
            )
        tables.append(nxt)

    finals = [
        (value, charged, soc_key, idx)
        for soc_key in sorted(tables[n])
        if abs(soc_key - terminal) <= 1e-7
        for idx, (charged, value, _) in enumerate(tables[n][soc_key])
    ]
    if not finals:
        raise InfeasibleError(
            "terminal SoC not reachable on the lattice", binding_constraint="terminal_soc"
        )
    finals.sort(key=lambda t: (-t[0], t[1], t[2]))
    _, _, soc_key, idx = finals[0]

    charge = np.zeros(n)
    discharge = np.zeros(n)
    for i in range(n, 0, -1):
        parent = tables[i][soc_key][idx][2]
        soc_key, idx, charge[i - 1], discharge[i - 1] = parent

    soc = propagate_soc(battery, dt, charge, discharge)
    mode = (charge > 1e-9).astype(np.int8)
    schedule = DispatchSchedule(grid, charge, discharge, mode, soc)
    buys, sells = residual_trades(charge, discharge, pos)
    objective = trade_value_eur(request.prices, buys, sells)
    return OptimizeResult(schedule, buys, sells, objective)
