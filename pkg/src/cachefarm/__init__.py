"""cachefarm: discrete-event simulator of a farm of unit-capacity content
servers facing Zipf demand with unknown, possibly time-varying popularity.

Compares adaptive storage policies (recency-driven replication and a
popularity-clairvoyant top-k policy) against learn-then-fix policies
built on empirical or Good-Turing popularity estimates.
"""
from .config import ConfigError, SimConfig
from .demand import Catalog, ChangeModel
from .engine import EngineError, RunMetrics, available_backends, default_backend, run
from .estimators import EstimateVector, empirical_estimate, good_turing_estimate
from .policies import Genie, Myopic, StaticLearning, parse_policy

__version__ = "0.1.0"

__all__ = [
    "Catalog",
    "ChangeModel",
    "ConfigError",
    "EngineError",
    "EstimateVector",
    "Genie",
    "Myopic",
    "RunMetrics",
    "SimConfig",
    "StaticLearning",
    "available_backends",
    "default_backend",
    "empirical_estimate",
    "good_turing_estimate",
    "parse_policy",
    "run",
    "__version__",
]
