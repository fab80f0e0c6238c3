"""Sampling toolkit for UBU-family underdamped-Langevin integrators.

Modules:

* :mod:`ubusampler.potentials` — benchmark target potentials and observables
* :mod:`ubusampler.estimators` — full / additive-noise / mini-batch / SVRG /
  SAGA gradient estimators
* :mod:`ubusampler.integrators` — the UBU splitting step with exact
  Ornstein-Uhlenbeck half-flows (single-trajectory reference path)
* :mod:`ubusampler.batch` — compiled replica-batched trajectory driver
* :mod:`ubusampler.observables` — time-average accumulation, reference
  means, bias/MSE estimation
* :mod:`ubusampler.variation` — first/second variation processes, leading
  bias coefficient, contractivity diagnostics
* :mod:`ubusampler.harness` / :mod:`ubusampler.cli` — experiment harness
  and command-line interface
* :mod:`ubusampler.rngstream` — deterministic keyed random streams
"""

from .potentials import PotentialModel, TestFunction, model_from_id
from .integrators import State, StepConfig, TrajectoryDiverged, simulate, step
from .estimators import estimator_from_id
from .observables import ReferenceMean, estimate_bias, estimate_mse
from .variation import VariationState, leading_coefficient
from .harness import ExperimentSpec, RunRecord, select_algorithm
from .rngstream import make_stream, replica_streams, stream_key

__all__ = [
    "PotentialModel", "TestFunction", "model_from_id",
    "State", "StepConfig", "TrajectoryDiverged", "simulate", "step",
    "estimator_from_id",
    "ReferenceMean", "estimate_bias", "estimate_mse",
    "VariationState", "leading_coefficient",
    "ExperimentSpec", "RunRecord", "select_algorithm",
    "make_stream", "replica_streams", "stream_key",
]

__version__ = "0.1.0"
