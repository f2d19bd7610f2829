"""Mispricing statistics, sloppiness and signal backtests"""
