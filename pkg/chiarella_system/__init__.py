"""
Chiarella excess-volatility research system

Heterogeneous-agent (fundamentalist / trend follower / noise trader) market model:
phase analysis, simulation, latent value inference, EM calibration and
mispricing / sloppiness analysis on monthly price series.
"""
__version__ = "1.0"
