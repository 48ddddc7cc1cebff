"""Experiment orchestration: reference solves, metrics, configs and the CLI."""
