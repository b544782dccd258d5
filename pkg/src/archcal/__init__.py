"""Plane-strain finite element toolkit for multi-ring masonry arches.

Three model tiers share one solver: a mesoscale model (elastic bricks joined by
cohesive interfaces), a continuum macroscale model (damage-plasticity) and a
hybrid macroscale model (continuum plus a mid-thickness interface arc). The
macroscale parameters are calibrated against mesoscale virtual tests with NSGA-II.
"""
from .backfill import BackfillParams
from .calibration import (CalibrationProblem, GAConfig, ParetoFront, calibration_preset,
                          normalize_and_select, nsga2, objectives, run_calibration)
from .continuum import ContinuumParams, ContinuumState
from .interface import InterfaceParams, InterfaceState
from .mesh import (ArchGeometry, Mesh, generate_backfill, generate_macroscale_arch,
                   generate_mesoscale_arch)
from .scenarios import Scenario, ScenarioError, build, load_scenario, preset, resolve
from .solver import (ElasticParams, LoadProtocol, Materials, Model, ResponseTrace,
                     solve_quasi_static)

__all__ = [
    "ArchGeometry", "BackfillParams", "CalibrationProblem", "ContinuumParams", "ContinuumState",
    "ElasticParams", "GAConfig", "InterfaceParams", "InterfaceState", "LoadProtocol", "Materials",
    "Mesh", "Model", "ParetoFront", "ResponseTrace", "Scenario", "ScenarioError", "build",
    "calibration_preset", "generate_backfill", "generate_macroscale_arch", "generate_mesoscale_arch",
    "load_scenario", "normalize_and_select", "nsga2", "objectives", "preset", "resolve",
    "run_calibration", "solve_quasi_static",
]
