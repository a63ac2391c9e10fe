"""Delivery promise-date prediction: boosted trees with asymmetric and quantile
losses, an additive seasonal forecaster, a rule baseline, holiday handling
times, breach control, and a seeded supply-chain simulator."""

__version__ = "0.1.0"
