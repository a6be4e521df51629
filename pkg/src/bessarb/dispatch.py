"""Intrinsic dispatch optimization against bid/ask curves.

Maximizes trade value of moving from a current position to a new dispatch,
subject to SoC dynamics, power bounds, charge/discharge exclusivity, the
daily cycle budget and the terminal SoC condition. Residual trades are
modeled with four non-negative split variables per period (buy-increase,
sell-decrease, sell-increase, buy-decrease); exclusivity is enforced by
branch and bound over per-period modes on HiGHS LP relaxations.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from datetime import datetime

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .errors import BessArbError, InfeasibleError, InputError
from .models import (
    ENERGY_TOL,
    BatteryConfig,
    DispatchSchedule,
    Position,
    PriceCurve,
    propagate_soc,
)

# Tie-break penalty per MW of residual trade volume: suppresses wash trades
# when bid == ask and makes the reported schedule deterministic.
WASH_PENALTY = 1e-6

# A pair (c_i, d_i) counts as simultaneous charge/discharge above this level.
_COMP_TOL = 1e-7

_NODE_LIMIT = 20000

_lp_cache: dict[tuple, tuple] = {}


@dataclass(frozen=True)
class OptimizeRequest:
    """One dispatch optimization instance.

    ``frozen_before`` excludes already-delivered periods from re-trading;
    ``realized_charge_mwh`` is the charge delivered in those periods, which
    consumes cycle budget. ``tradable_mask`` optionally restricts trading to
    a subset of the non-frozen periods (used by the rolling loop to skip
    products without liquidity); ``None`` means all non-frozen periods.
    """

    battery: BatteryConfig
    prices: PriceCurve
    initial_position: Position
    realized_charge_mwh: float = 0.0
    frozen_before: datetime | None = None
    tradable_mask: np.ndarray | None = None

    def __post_init__(self):
        if self.initial_position.grid != self.prices.grid:
            raise InputError("position and price curve live on different grids")
        self.initial_position.validate_power(self.battery)
        if self.realized_charge_mwh < -ENERGY_TOL:
            raise InputError("realized_charge_mwh must be >= 0")
        if self.realized_charge_mwh > self.battery.cycle_budget_mwh + ENERGY_TOL:
            raise InputError("realized_charge_mwh exceeds the daily cycle budget")
        if self.tradable_mask is not None:
            mask = np.asarray(self.tradable_mask, dtype=bool)
            if mask.shape != (self.prices.grid.n_periods,):
                raise InputError("tradable_mask length does not match the grid")
            object.__setattr__(self, "tradable_mask", mask)

    def frozen_count(self) -> int:
        """Number of leading periods that may not be re-traded."""
        if self.frozen_before is None:
            return 0
        grid = self.prices.grid
        h = grid.hours_from_day_start(self.frozen_before)
        return int(np.clip(np.ceil(h / grid.step_hours - 1e-9), 0, grid.n_periods))


@dataclass(frozen=True)
class OptimizeResult:
    """Optimal schedule plus the trades required to reach it."""

    schedule: DispatchSchedule
    residual_buys_mw: np.ndarray
    residual_sells_mw: np.ndarray
    objective_eur: float


def residual_trades(
    charge_mw: np.ndarray,
    discharge_mw: np.ndarray,
    position: Position,
) -> tuple[np.ndarray, np.ndarray]:
    """Buy/sell volumes needed to move from ``position`` to the new dispatch."""
    buys = np.maximum(charge_mw - position.charge_mw, 0.0) + np.maximum(
        position.discharge_mw - discharge_mw, 0.0
    )
    sells = np.maximum(discharge_mw - position.discharge_mw, 0.0) + np.maximum(
        position.charge_mw - charge_mw, 0.0
    )
    buys[buys < 1e-9] = 0.0
    sells[sells < 1e-9] = 0.0
    return buys, sells


def trade_value_eur(
    prices: PriceCurve, buys_mw: np.ndarray, sells_mw: np.ndarray
) -> float:
    """Cash value of residual trades: sell at bid, buy at ask."""
    dt = prices.grid.step_hours
    return float(dt * (prices.bid @ sells_mw - prices.ask @ buys_mw))


def _lp_structure(n_f: int, eta_c: float, eta_d: float, dt: float):
    """Equality matrix and cycle row for ``n_f`` deviation periods (cached).

    Dense below 32 periods: scipy's linprog front end parses small dense
    matrices much faster than sparse ones, which matters for the rolling
    loop's many tiny window solves.
    """
    key = (n_f, eta_c, eta_d, dt)
    hit = _lp_cache.get(key)
    if hit is not None:
        return hit
    # Columns: u, v, w, z blocks of n_f, then SoC block of n_f.
    a = np.zeros((n_f, 5 * n_f))
    m = np.arange(n_f)
    a[m, m] = -eta_c * dt
    a[m, n_f + m] = eta_c * dt
    a[m, 2 * n_f + m] = dt / eta_d
    a[m, 3 * n_f + m] = -dt / eta_d
    a[m, 4 * n_f + m] = 1.0
    a[m[1:], 4 * n_f + m[:-1]] = -1.0
    a_eq = a if n_f < 32 else sparse.csc_matrix(a)
    cycle = np.zeros((1, 5 * n_f))
    cycle[0, :n_f] = dt
    cycle[0, n_f : 2 * n_f] = -dt
    _lp_cache[key] = (a_eq, cycle)
    return a_eq, cycle


class _Model:
    """LP data for the deviation periods of one request."""

    def __init__(self, req: OptimizeRequest):
        battery = req.battery
        grid = req.prices.grid
        n = grid.n_periods
        dt = grid.step_hours
        pos = req.initial_position
        cbar, dbar = pos.charge_mw, pos.discharge_mw

        n_frozen = req.frozen_count()
        deviate = np.ones(n, dtype=bool)
        deviate[:n_frozen] = False
        if req.tradable_mask is not None:
            deviate &= req.tradable_mask
        self.free_idx = np.flatnonzero(deviate)
        self.n_f = len(self.free_idx)
        self.battery = battery
        self.grid = grid
        self.dt = dt
        self.pos = pos

        self.pos_soc = propagate_soc(battery, dt, cbar, dbar)
        prefix_charge = float(np.sum(cbar[:n_frozen]) * dt)
        realized_eff = max(req.realized_charge_mwh, prefix_charge)
        # Budget left for total charging across all re-optimizable periods;
        # taking the max above keeps the full-day schedule within Eq-(4)-style
        # throughput limits even if the caller's realized figure is stale.
        self.cycle_rhs = (
            battery.cycle_budget_mwh
            - realized_eff
            - float(np.sum(cbar[n_frozen:]) * dt)
        )

        if self.n_f == 0:
            self._check_fixed_path(0, n, terminal=True)
            return

        f = self.free_idx
        delta = (battery.eta_charge * cbar - dbar / battery.eta_discharge) * dt

        # Fixed segment before the first deviation period must already be valid.
        self._check_fixed_path(0, int(f[0]) + 1, terminal=False)

        cap = battery.capacity_mwh
        p_max = battery.max_power_mw
        lo = np.zeros(5 * self.n_f)
        hi = np.empty(5 * self.n_f)
        hi[: self.n_f] = p_max - cbar[f]
        hi[self.n_f : 2 * self.n_f] = cbar[f]
        hi[2 * self.n_f : 3 * self.n_f] = p_max - dbar[f]
        hi[3 * self.n_f : 4 * self.n_f] = dbar[f]
        hi[4 * self.n_f :] = cap

        # SoC balance right-hand sides: position deltas of the deviation period
        # itself plus any fixed periods since the previous deviation period.
        beq = np.empty(self.n_f)
        for m, i in enumerate(f):
            seg_start = 0 if m == 0 else int(f[m - 1]) + 1
            beq[m] = float(np.sum(delta[seg_start : int(i) + 1]))
        beq[0] += self.pos_soc[0]

        # Fold SoC bounds of fixed nodes after each deviation period into the
        # bounds of that period's SoC variable.
        s_lo = np.zeros(self.n_f)
        s_hi = np.full(self.n_f, cap)
        for m, i in enumerate(f):
            seg_end = int(f[m + 1]) if m + 1 < self.n_f else n
            cum = 0.0
            for j in range(int(i) + 1, seg_end):
                cum += delta[j]
                s_lo[m] = max(s_lo[m], -cum)
                s_hi[m] = min(s_hi[m], cap - cum)
        # Terminal condition pins the last SoC variable.
        tail_delta = float(np.sum(delta[int(f[-1]) + 1 :]))
        pin = battery.soc_terminal_mwh - tail_delta
        last = self.n_f - 1
        if pin < s_lo[last] - ENERGY_TOL or pin > s_hi[last] + ENERGY_TOL:
            raise InfeasibleError(
                f"terminal SoC {battery.soc_terminal_mwh} MWh unreachable: fixed tail "
                f"dispatch requires SoC {pin:.6f} MWh outside [{s_lo[last]:.6f}, {s_hi[last]:.6f}]",
                binding_constraint="terminal_soc",
            )
        s_lo[last] = s_hi[last] = pin
        bad = s_lo > s_hi + ENERGY_TOL
        if np.any(bad):
            m = int(np.argmax(bad))
            raise InfeasibleError(
                f"fixed dispatch between tradable periods leaves no feasible SoC at period {f[m]}",
                binding_constraint="soc_bound",
            )
        lo[4 * self.n_f :] = s_lo
        hi[4 * self.n_f :] = np.maximum(s_hi, s_lo)

        self.lo, self.hi, self.beq = lo, hi, beq
        self.a_eq, self.cycle_row = _lp_structure(
            self.n_f, battery.eta_charge, battery.eta_discharge, dt
        )

        bid = req.prices.bid[f]
        ask = req.prices.ask[f]
        cost = np.full(5 * self.n_f, WASH_PENALTY)
        cost[: self.n_f] += dt * ask
        cost[self.n_f : 2 * self.n_f] -= dt * bid
        cost[2 * self.n_f : 3 * self.n_f] -= dt * bid
        cost[3 * self.n_f : 4 * self.n_f] += dt * ask
        cost[4 * self.n_f :] = 0.0
        self.cost = cost

    def _check_fixed_path(self, node_from: int, node_to: int, terminal: bool) -> None:
        battery = self.battery
        seg = self.pos_soc[node_from:node_to]
        if np.any(seg < -ENERGY_TOL) or np.any(seg > battery.capacity_mwh + ENERGY_TOL):
            raise InfeasibleError(
                "fixed dispatch violates SoC capacity bounds and cannot be re-traded",
                binding_constraint="soc_bound",
            )
        if terminal:
            if abs(self.pos_soc[-1] - battery.soc_terminal_mwh) > ENERGY_TOL:
                raise InfeasibleError(
                    "no tradable periods left and position does not meet the terminal SoC",
                    binding_constraint="terminal_soc",
                )
            if self.cycle_rhs < -ENERGY_TOL:
                raise InfeasibleError(
                    "no tradable periods left and cycle budget already exceeded",
                    binding_constraint="cycle_limit",
                )

    def solve_lp(self, modes: dict[int, int], cycle_rhs: float | None = None):
        """Solve the LP relaxation under forced per-period modes.

        ``modes[m] = +1`` forbids discharging in deviation period m,
        ``-1`` forbids charging. Returns (x, penalized_value) or None if
        infeasible.
        """
        lo = self.lo
        hi = self.hi
        if modes:
            lo = lo.copy()
            hi = hi.copy()
            f = self.free_idx
            for m, mode in modes.items():
                if mode > 0:  # charge-only: d = 0
                    hi[2 * self.n_f + m] = 0.0
                    lo[3 * self.n_f + m] = self.pos.discharge_mw[f[m]]
                else:  # discharge-only: c = 0
                    hi[m] = 0.0
                    lo[self.n_f + m] = self.pos.charge_mw[f[m]]
        res = linprog(
            self.cost,
            A_ub=self.cycle_row,
            b_ub=[self.cycle_rhs if cycle_rhs is None else cycle_rhs],
            A_eq=self.a_eq,
            b_eq=self.beq,
            bounds=np.column_stack([lo, hi]),
            method="highs",
        )
        if res.status == 2:
            return None
        if res.status != 0:
            raise BessArbError(f"LP solver failed with status {res.status}: {res.message}")
        return res.x, -res.fun

    def dispatch_from(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        f = self.free_idx
        c = self.pos.charge_mw.copy()
        d = self.pos.discharge_mw.copy()
        c[f] += x[: self.n_f] - x[self.n_f : 2 * self.n_f]
        d[f] += x[2 * self.n_f : 3 * self.n_f] - x[3 * self.n_f : 4 * self.n_f]
        np.clip(c, 0.0, self.battery.max_power_mw, out=c)
        np.clip(d, 0.0, self.battery.max_power_mw, out=d)
        c[c < 1e-9] = 0.0
        d[d < 1e-9] = 0.0
        return c, d

    def worst_overlap(self, x: np.ndarray) -> tuple[int, float]:
        """Deviation-period index with the largest simultaneous charge+discharge."""
        f = self.free_idx
        c, d = self.dispatch_from(x)
        overlap = np.minimum(c[f], d[f])
        m = int(np.argmax(overlap))
        return m, float(overlap[m])


def _diagnose_infeasible(model: _Model) -> InfeasibleError:
    # Without the cycle budget row the program is pure storage feasibility:
    # if that already fails, power/terminal constraints bind, else the budget.
    if model.solve_lp({}, cycle_rhs=1e12) is None:
        return InfeasibleError(
            "terminal SoC unreachable under power and capacity bounds",
            binding_constraint="terminal_soc",
        )
    return InfeasibleError(
        "cycle budget too small for the required dispatch",
        binding_constraint="cycle_limit",
    )


def optimize(request: OptimizeRequest) -> OptimizeResult:
    """Solve the dispatch program to global optimality.

    Returns the optimal schedule, the residual buy/sell volumes per period
    and the trade value of those residuals. Raises ``InfeasibleError`` when
    no schedule satisfies the constraints.
    """
    model = _Model(request)
    battery = request.battery
    pos = request.initial_position

    if model.n_f == 0:
        c, d = pos.charge_mw.copy(), pos.discharge_mw.copy()
        return _build_result(request, c, d)

    root = model.solve_lp({})
    if root is None:
        raise _diagnose_infeasible(model)

    comp_tol = _COMP_TOL * max(1.0, battery.max_power_mw)
    best_x: np.ndarray | None = None
    best_val = -np.inf
    counter = 0
    heap: list[tuple[float, int, dict[int, int], np.ndarray, float]] = []
    heapq.heappush(heap, (-root[1], counter, {}, root[0], root[1]))
    nodes = 0
    while heap:
        neg_bound, _, modes, x, val = heapq.heappop(heap)
        if -neg_bound <= best_val + 1e-12:
            break
        m, overlap = model.worst_overlap(x)
        if overlap <= comp_tol:
            if val > best_val:
                best_val, best_x = val, x
            continue
        nodes += 1
        if nodes > _NODE_LIMIT:
            raise BessArbError("branch-and-bound node limit exceeded")
        for mode in (1, -1):
            child_modes = dict(modes)
            child_modes[m] = mode
            sol = model.solve_lp(child_modes)
            if sol is None or sol[1] <= best_val + 1e-12:
                continue
            counter += 1
            heapq.heappush(heap, (-sol[1], counter, child_modes, sol[0], sol[1]))

    if best_x is None:
        # Every mode combination infeasible: only possible if even keeping the
        # position is excluded, which the root solve would have caught.
        raise _diagnose_infeasible(model)

    c, d = model.dispatch_from(best_x)
    return _build_result(request, c, d)


def _build_result(
    request: OptimizeRequest, charge_mw: np.ndarray, discharge_mw: np.ndarray
) -> OptimizeResult:
    grid = request.prices.grid
    battery = request.battery
    soc = propagate_soc(battery, grid.step_hours, charge_mw, discharge_mw)
    mode = (charge_mw > 1e-9).astype(np.int8)
    schedule = DispatchSchedule(grid, charge_mw, discharge_mw, mode, soc)
    buys, sells = residual_trades(charge_mw, discharge_mw, request.initial_position)
    objective = trade_value_eur(request.prices, buys, sells)
    return OptimizeResult(schedule, buys, sells, objective)
