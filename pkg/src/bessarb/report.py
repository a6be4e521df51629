"""Backtest reporting: profit statistics, sensitivity tables, the ex-post
cycle-suspension analysis, market liquidity statistics and mean dispatch
profiles. All outputs are plot-ready CSVs plus a JSON manifest; no figures
are rendered here.
"""

from __future__ import annotations

import csv
import json
import math
import statistics
from dataclasses import dataclass
from datetime import date
from pathlib import Path

import numpy as np

from .backtest import Ledger, ScheduleRecord
from .errors import InputError
from .marketdata import TickTable


@dataclass(frozen=True)
class SummaryStats:
    label: str
    n_days: int
    mean: float
    median: float
    std: float
    min: float
    max: float
    std_degenerate: bool  # single observation: std reported as 0 with a flag


def _stats(label: str, values: list[float]) -> SummaryStats:
    if not values:
        raise InputError("cannot summarize an empty profit series")
    n = len(values)
    return SummaryStats(
        label,
        n,
        statistics.fmean(values),
        statistics.median(values),
        statistics.stdev(values) if n > 1 else 0.0,
        min(values),
        max(values),
        n == 1,
    )


def summarize(ledger: Ledger) -> list[SummaryStats]:
    """Sample statistics per (strategy, battery): mean/median/std/min/max.

    Std uses the n-1 denominator. Raises on an empty ledger so callers can
    emit an explicit empty-report marker.
    """
    if not ledger.rows:
        raise InputError("empty ledger")
    groups: dict[tuple[str, str], list[float]] = {}
    for r in ledger.rows:
        groups.setdefault((r.strategy_id, r.battery_id), []).append(r.total_eur)
    out = []
    for (sid, bid), values in sorted(groups.items()):
        label = sid if len({b for _, b in groups} ) == 1 else f"{sid} [{bid}]"
        out.append(_stats(label, values))
    return out


def render_summary_text(stats: list[SummaryStats]) -> str:
    header = ["bidding strategy", "n", "mean", "median", "std", "min", "max"]
    rows = [
        [
            s.label,
            str(s.n_days),
            f"{s.mean:.2f}",
            f"{s.median:.2f}",
            f"{s.std:.2f}" + ("*" if s.std_degenerate else ""),
            f"{s.min:.2f}",
            f"{s.max:.2f}",
        ]
        for s in stats
    ]
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(header)]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(header)),
        "  ".join("-" * w for w in widths),
    ]
    lines += ["  ".join(r[i].ljust(widths[i]) for i in range(len(header))) for r in rows]
    if any(s.std_degenerate for s in stats):
        lines.append("* std undefined for a single day, reported as 0")
    return "\n".join(lines)


def write_summary_csv(stats: list[SummaryStats], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "n_days", "mean", "median", "std", "min", "max", "std_degenerate"])
        for s in stats:
            w.writerow(
                [s.label, s.n_days, repr(s.mean), repr(s.median), repr(s.std),
                 repr(s.min), repr(s.max), int(s.std_degenerate)]
            )
    return path


def write_profit_series_csv(ledger: Ledger, path: str | Path, window: int = 20) -> Path:
    """Per-strategy daily profit with trailing moving average and cumulative sum."""
    if window < 1:
        raise InputError("moving-average window must be >= 1")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    groups: dict[tuple[str, str], list] = {}
    for r in sorted(ledger.rows, key=lambda r: (r.strategy_id, r.battery_id, r.day)):
        groups.setdefault((r.strategy_id, r.battery_id), []).append(r)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "strategy_id", "battery_id", "profit_eur", f"ma{window}", "cumulative"])
        for (sid, bid), rows in sorted(groups.items()):
            profits = [r.total_eur for r in rows]
            cum = 0.0
            for i, r in enumerate(rows):
                cum += r.total_eur
                ma = statistics.fmean(profits[max(0, i + 1 - window) : i + 1])
                w.writerow([r.day.isoformat(), sid, bid, repr(r.total_eur), repr(ma), repr(cum)])
    return path


# ---------------------------------------------------------------------------
# Cycle-limit sensitivity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CycleSensitivity:
    stats: list[SummaryStats]  # one per cycle setting, ascending
    settings: list[float]
    increments: dict[float, dict[date, float]]  # setting -> per-day profit gain vs previous
    marginal_means: dict[float, float]


def cycle_sensitivity(ledgers: dict[float, Ledger]) -> CycleSensitivity:
    """Profit statistics per daily-cycle setting plus marginal per-day gains.

    All ledgers must cover identical dates (one row per day each); a coverage
    mismatch is an error listing the missing dates.
    """
    if len(ledgers) < 2:
        raise InputError("need at least two cycle settings to compare")
    settings = sorted(ledgers)
    base_days = set(ledgers[settings[0]].days())
    for s in settings[1:]:
        missing = base_days.symmetric_difference(ledgers[s].days())
        if missing:
            raise InputError(
                f"cycle setting {s:g} has mismatched date coverage: {sorted(missing)}"
            )
    profit_maps = {
        s: {r.day: r.total_eur for r in ledgers[s].rows} for s in settings
    }
    stats = [
        _stats(f"{s:g} daily cycle{'s' if s != 1 else ''}",
               [profit_maps[s][d] for d in sorted(base_days)])
        for s in settings
    ]
    increments: dict[float, dict[date, float]] = {}
    marginal: dict[float, float] = {}
    for prev, cur in zip(settings, settings[1:]):
        inc = {d: profit_maps[cur][d] - profit_maps[prev][d] for d in sorted(base_days)}
        increments[cur] = inc
        marginal[cur] = statistics.fmean(inc.values())
    return CycleSensitivity(stats, settings, increments, marginal)


def write_cycle_sensitivity_csv(sens: CycleSensitivity, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["setting", "n_days", "mean", "median", "std", "min", "max", "marginal_mean_vs_prev"])
        for s, st in zip(sens.settings, sens.stats):
            w.writerow(
                [repr(float(s)), st.n_days, repr(st.mean), repr(st.median), repr(st.std),
                 repr(st.min), repr(st.max),
                 repr(sens.marginal_means[s]) if s in sens.marginal_means else ""]
            )
    return path


# ---------------------------------------------------------------------------
# Ex-post cycle suspension
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SuspensionRow:
    share_pct: float
    n_reallocated: int
    rounded_down: bool
    stats: SummaryStats


def suspension_analysis(
    base_profits: dict[date, float],
    increments: dict[date, float],
    shares_pct=(0.0, 5.0, 10.0, 15.0, 20.0, 25.0),
) -> list[SuspensionRow]:
    """Budget-neutral ex-post reallocation of daily cycles.

    For a share ``s``, operation is suspended on the ``s%`` least profitable
    days (profit set to 0) and the freed cycles are spent as a second cycle
    on the ``s%`` not-suspended days with the highest incremental profit.
    Day counts are floored to integers (flagged); suspended and upgraded
    day sets are disjoint by construction. ``s = 0`` returns the base
    statistics unchanged.
    """
    if set(base_profits) != set(increments):
        raise InputError("base and incremental series must cover identical dates")
    days = sorted(base_profits)
    n = len(days)
    if n == 0:
        raise InputError("empty profit series")
    out = []
    for share in shares_pct:
        if not 0 <= share <= 100:
            raise InputError("share must be in [0, 100] percent")
        exact = share / 100.0 * n
        k = math.floor(exact + 1e-9)
        suspended = set()
        upgraded = set()
        if k > 0:
            by_profit = sorted(days, key=lambda d: (base_profits[d], d))
            suspended = set(by_profit[:k])
            by_increment = sorted(
                (d for d in days if d not in suspended),
                key=lambda d: (-increments[d], d),
            )
            upgraded = set(by_increment[:k])
        adjusted = []
        for d in days:
            if d in suspended:
                adjusted.append(0.0)
            elif d in upgraded:
                adjusted.append(base_profits[d] + increments[d])
            else:
                adjusted.append(base_profits[d])
        out.append(
            SuspensionRow(
                share,
                k,
                abs(exact - k) > 1e-9,
                _stats(f"{share:g}% of days", adjusted),
            )
        )
    return out


def write_suspension_csv(rows: list[SuspensionRow], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["share_pct", "n_reallocated", "rounded_down", "mean", "median", "std", "min", "max"])
        for r in rows:
            w.writerow(
                [repr(float(r.share_pct)), r.n_reallocated, int(r.rounded_down),
                 repr(r.stats.mean), repr(r.stats.median), repr(r.stats.std),
                 repr(r.stats.min), repr(r.stats.max)]
            )
    return path


# ---------------------------------------------------------------------------
# Market liquidity statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LiquidityStats:
    volume_share_by_duration: dict[float, float]
    trade_share_by_duration: dict[float, float]
    # rows: (bin_lower_hours_to_delivery, cumulative volume and trade count of
    # all trades executed at or farther than the bin), farthest bin first.
    cumulative: list[tuple[float, float, int]]


def liquidity_stats(tables: list[TickTable], bin_hours: float = 0.25) -> LiquidityStats:
    """Volume shares per product duration and liquidity vs time to delivery."""
    total_vol = 0.0
    total_cnt = 0
    vol_by_dur: dict[float, float] = {}
    cnt_by_dur: dict[float, int] = {}
    bins: dict[int, tuple[float, int]] = {}
    for t in tables:
        if len(t) == 0:
            continue
        vol = float(np.sum(t.volume))
        vol_by_dur[t.duration_hours] = vol_by_dur.get(t.duration_hours, 0.0) + vol
        cnt_by_dur[t.duration_hours] = cnt_by_dur.get(t.duration_hours, 0) + len(t)
        total_vol += vol
        total_cnt += len(t)
        htd = t.product_idx * t.duration_hours - t.exec_hours
        idx = np.floor(htd / bin_hours + 1e-9).astype(int)
        for b in np.unique(idx):
            sel = idx == b
            v, c = bins.get(int(b), (0.0, 0))
            bins[int(b)] = (v + float(np.sum(t.volume[sel])), c + int(np.sum(sel)))

    cumulative: list[tuple[float, float, int]] = []
    cum_v, cum_c = 0.0, 0
    for b in sorted(bins, reverse=True):
        v, c = bins[b]
        cum_v += v
        cum_c += c
        cumulative.append((b * bin_hours, cum_v, cum_c))
    return LiquidityStats(
        {d: v / total_vol for d, v in sorted(vol_by_dur.items())} if total_vol else {},
        {d: c / total_cnt for d, c in sorted(cnt_by_dur.items())} if total_cnt else {},
        cumulative,
    )


def write_liquidity_csv(stats: LiquidityStats, shares_path: str | Path, curve_path: str | Path):
    shares_path, curve_path = Path(shares_path), Path(curve_path)
    shares_path.parent.mkdir(parents=True, exist_ok=True)
    with open(shares_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["duration_hours", "volume_share", "trade_share"])
        for d in sorted(stats.volume_share_by_duration):
            w.writerow(
                [repr(float(d)), repr(stats.volume_share_by_duration[d]),
                 repr(stats.trade_share_by_duration[d])]
            )
    with open(curve_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["hours_to_delivery_bin", "cumulative_volume_mw", "cumulative_trades"])
        for b, v, c in stats.cumulative:
            w.writerow([repr(float(b)), repr(v), c])
    return shares_path, curve_path


# ---------------------------------------------------------------------------
# Mean dispatch profiles by season
# ---------------------------------------------------------------------------


def season_of(day: date) -> int:
    """Season 1: April-September; season 2: October-March."""
    return 1 if 4 <= day.month <= 9 else 2


@dataclass(frozen=True)
class DispatchProfile:
    strategy_id: str
    battery_id: str
    season: int
    step_hours: float
    n_days: int
    mean_net_mw: tuple[float, ...]  # negative values indicate charging


def dispatch_profiles(schedules: list[ScheduleRecord]) -> list[DispatchProfile]:
    """Mean signed dispatch (discharge positive, charge negative) per period,
    split by season. Requires schedules retained during the backtest."""
    if not schedules:
        raise InputError("no schedules retained; re-run the backtest with retain_schedules")
    groups: dict[tuple, list[ScheduleRecord]] = {}
    for s in schedules:
        groups.setdefault((s.strategy_id, s.battery_id, season_of(s.day), s.step_hours), []).append(s)
    out = []
    for (sid, bid, season, step), records in sorted(groups.items()):
        net = np.zeros(len(records[0].charge_mw))
        for r in records:
            net += np.asarray(r.discharge_mw) - np.asarray(r.charge_mw)
        net /= len(records)
        out.append(DispatchProfile(sid, bid, season, step, len(records), tuple(float(x) for x in net)))
    return out


def write_dispatch_profiles_csv(profiles: list[DispatchProfile], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["strategy_id", "battery_id", "season", "step_hours", "n_days", "period_index", "mean_net_mw"])
        for p in profiles:
            for i, x in enumerate(p.mean_net_mw):
                w.writerow([p.strategy_id, p.battery_id, p.season, repr(p.step_hours), p.n_days, i, repr(x)])
    return path


def write_manifest(out_dir: str | Path, files: dict[str, Path]) -> Path:
    """Single JSON manifest listing every produced report file."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "report_manifest.json"
    payload = {name: str(Path(p).name) for name, p in sorted(files.items())}
    with open(path, "w") as fh:
        json.dump({"files": payload}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
