"""Deterministic simulator of split execution between a regular OS and a
kernel-mode hybrid runtime, connected by VMM-mediated event channels."""

from importlib import resources

from .costs import CostModel, load_cost_model
from .machine import CoreKind, Machine
from .sim import (
    BenchmarkProfile,
    Mode,
    System,
    TraceReport,
    compare,
    load_profiles,
    replay_benchmark,
    run,
)
from .workload import parse_workload

__version__ = "0.1.0"

__all__ = [
    "BenchmarkProfile",
    "CoreKind",
    "CostModel",
    "Machine",
    "Mode",
    "System",
    "TraceReport",
    "bundled_profiles_text",
    "compare",
    "load_cost_model",
    "load_profiles",
    "parse_workload",
    "replay_benchmark",
    "run",
]


def bundled_profiles_text() -> str:
    """The shipped benchmark profile table."""
    return resources.files(__name__).joinpath("data/racket_profiles.txt").read_text()
