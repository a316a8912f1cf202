"""Experiment runner, problem zoo and command line."""
