"""Experiment orchestration: config, stages, manifest and CLI."""
