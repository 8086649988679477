"""Simulation, robust expectation and path-independence tools for SDEs driven by G-Levy processes."""

from .config import ConfigError, ExperimentConfig, parse_config
from .expectation import (RefinementReport, RobustEstimate, capacity, refine_and_compare,
                          sublinear_expectation)
from .functional import (FunctionalSpec, ResidualReport, classical_functional, evaluate_functional,
                         functional_terms, path_independence_residual)
from .paths import (CoefficientSet, DriverBatch, PathBatch, PathRecord, coarsen, pure_driver_batch,
                    random_measure_sum, simulate_driver, simulate_sde, validate_coefficients, write_path_csv)
from .pide import (DecompositionReport, DecompositionSpec, PideGrid, PideWitness, ValueSurface,
                   decomposition_check, manufacture_from_V, pide_system_residual, solve_viscosity_pide,
                   special_case_g, special_case_V)
from .report import BlowUpError, Condition, StructureError, ValidationReport
from .scenario import EnumeratedFamily, Scenario, ScenarioFamily, enumerate_scenarios, scenario_at
from .uncertainty import (BaseMeasureTransport, JumpMeasure, UncertaintySet, G_inverse_1d, G_of,
                          g_x_functional, jump_integrals, sup_jump_integral, validate_uncertainty_set)

__version__ = "0.1.0"
