"""Hamming statistics, binomial decision analysis, randomness tests and sweeps."""
from .binomial import BinomialFit, DecisionRule, far_frr, fit_binomial, intersect_xc
from .hamming import HdEnsemble, HdKind, HdSample, hamming_normalized, hd_ensemble
from .nist import BatteryReport, randomness_battery

__all__ = [
    "BatteryReport",
    "BinomialFit",
    "DecisionRule",
    "HdEnsemble",
    "HdKind",
    "HdSample",
    "far_frr",
    "fit_binomial",
    "hamming_normalized",
    "hd_ensemble",
    "intersect_xc",
    "randomness_battery",
]
