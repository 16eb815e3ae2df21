"""
Metrics collection and export.

Provides Prometheus-compatible counters for simulations and numerics. The
registry is private to brwlab and is dumped to a textfile next to the run
outputs.
"""
from pathlib import Path
from typing import Union

from prometheus_client import CollectorRegistry, Counter, Histogram, Info, write_to_textfile

from brwlab.core.config import settings

registry = CollectorRegistry()

# Simulation metrics
simulation_counter = Counter(
    "brw_simulations_total",
    "Total number of simulated branching random walks",
    ["outcome"],
    registry=registry,
)

generation_counter = Counter(
    "brw_generations_total",
    "Total number of simulated generations",
    registry=registry,
)

particle_counter = Counter(
    "brw_particles_total",
    "Total number of particles dispatched",
    registry=registry,
)

truncation_counter = Counter(
    "brw_truncations_total",
    "Total number of runs stopped at the population cap",
    registry=registry,
)

# Numerics metrics
series_terms_counter = Counter(
    "series_terms_total",
    "Return-probability terms computed",
    ["strategy"],
    registry=registry,
)

power_iteration_counter = Counter(
    "power_iterations_total",
    "Power-iteration steps performed by Dirichlet estimates",
    registry=registry,
)

experiment_duration = Histogram(
    "experiment_duration_seconds",
    "Experiment wall-clock duration in seconds",
    ["kind"],
    buckets=(0.1, 0.5, 1.0, 5.0, 10.0, 30.0, 60.0, 300.0, 1800.0),
    registry=registry,
)

app_info = Info(
    "brwlab_app",
    "Application information",
    registry=registry,
)


def initialize_metrics():
    """Initialize metrics with application info."""
    if settings.enable_metrics:
        app_info.info({"version": settings.app_version, "name": settings.app_name})


def record_simulation(outcome: str, generations: int, particles: int):
    """
    Record one simulated run.

    Args:
        outcome: "completed" or "truncated"
        generations: Generations simulated
        particles: Particles dispatched over the run
    """
    if not settings.enable_metrics:
        return

    simulation_counter.labels(outcome=outcome).inc()
    generation_counter.inc(generations)
    particle_counter.inc(particles)
    if outcome == "truncated":
        truncation_counter.inc()


def record_series(strategy: str, terms: int):
    """Record the number of return-probability terms computed by a strategy."""
    if not settings.enable_metrics:
        return
    series_terms_counter.labels(strategy=strategy).inc(terms)


def record_power_iterations(steps: int):
    """Record power-iteration steps."""
    if not settings.enable_metrics:
        return
    power_iteration_counter.inc(steps)


def record_experiment(kind: str, duration: float):
    """
    Record experiment duration.

    Args:
        kind: Experiment kind
        duration: Duration in seconds
    """
    if not settings.enable_metrics:
        return
    experiment_duration.labels(kind=kind).observe(duration)


def write_metrics(path: Union[str, Path]) -> bool:
    """
    Write the registry in Prometheus text format.

    Args:
        path: Target file

    Returns:
        True if the file was written
    """
    if not settings.enable_metrics:
        return False
    write_to_textfile(str(path), registry)
    return True
