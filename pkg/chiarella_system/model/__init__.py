"""Continuous-time Chiarella model and its simulators"""
