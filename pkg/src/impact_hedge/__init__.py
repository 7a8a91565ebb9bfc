"""Pricing and hedging a claim against a utility-maximizing market maker
whose quotes respond to the investor's demand.

Brownian factors drive a Bachelier market; the claim price solves a scalar
equation, and prices, volatilities and hedge ratios are conditional
expectations under the tilted Gaussian measure.
"""
__version__ = "0.1.0"

from .model import (Bachelier, DelayedBachelier, NumericsConfig, PiecewiseLinear, Scenario,
                    ScenarioError, SeparableClaim, SmoothClaim, State, UtilitySpec,
                    validate_scenario)
from .pricing import NonUniquePriceError, consistency_report, solve_price
from .dynamics import (completeness_scan, price_fn, claim_fn, vol_matrix, vol_matrix_bachelier,
                       vol_matrix_general)
from .hedging import IncompleteMarketError, hedge_ratio
from .simulator import (convergence_study, martingale_residual_check, mm_optimality_check,
                        replicate, simulate_paths)

__all__ = [
    "Bachelier", "DelayedBachelier", "NumericsConfig", "PiecewiseLinear", "Scenario", "ScenarioError",
    "SeparableClaim", "SmoothClaim", "State", "UtilitySpec", "validate_scenario",
    "NonUniquePriceError", "consistency_report", "solve_price", "completeness_scan", "price_fn",
    "claim_fn", "vol_matrix", "vol_matrix_bachelier", "vol_matrix_general",
    "IncompleteMarketError", "hedge_ratio", "convergence_study", "martingale_residual_check",
    "mm_optimality_check", "replicate", "simulate_paths",
]
