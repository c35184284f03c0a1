"""Benchmark harness: JSON configs, sweep runner, CSV/SVG output and the CLI."""
