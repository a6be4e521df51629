"""Battery storage arbitrage backtesting across day-ahead and intraday markets."""

from .dispatch import OptimizeRequest, OptimizeResult, optimize
from .models import (
    BATTERY_PRESETS,
    BatteryConfig,
    DeliveryGrid,
    DispatchSchedule,
    Position,
    PriceCurve,
    Product,
    TradeTick,
    battery_preset,
    validate_schedule,
)
from .oracle import brute_force_oracle
from .quotes import QuoteConfig, QuoteCurve, build_quotes
from .rolling import RollingResult, run_rolling_intrinsic

__version__ = "0.1.0"

__all__ = [
    "BATTERY_PRESETS",
    "BatteryConfig",
    "DeliveryGrid",
    "DispatchSchedule",
    "OptimizeRequest",
    "OptimizeResult",
    "Position",
    "PriceCurve",
    "Product",
    "QuoteConfig",
    "QuoteCurve",
    "RollingResult",
    "TradeTick",
    "battery_preset",
    "brute_force_oracle",
    "build_quotes",
    "optimize",
    "run_rolling_intrinsic",
    "validate_schedule",
]
