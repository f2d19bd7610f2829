"""Trend estimation, latent-value filtering and EM calibration"""
