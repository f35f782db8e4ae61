"""Extended-DC power-system state estimation with Gaussian belief propagation."""

from .experiment import ConvergenceCurve, ExperimentConfig, emit_csv, rmse, run_experiment
from .factor_graph import FactorGraph, build_factor_graph, is_tree
from .gbp import (
    DampingConfig,
    GaussianBP,
    GaussianMessage,
    Marginal,
    RunConfig,
    RunResult,
    damp,
    marginal,
    msg_factor_to_variable,
    msg_variable_to_factor,
    run,
)
from .measurements import (
    LinearFunction,
    Measurement,
    MeasurementKind,
    PlanEntry,
    StateVar,
    StateVector,
    VarKind,
    default_plan,
    evaluate,
    generate_measurements,
    linearize,
    load_plan,
    solve_extended_dc_power_flow,
)
from .network import AdmittanceMatrix, Branch, Bus, Network, build_admittance, load_network, neighbors
from .wls import UnobservableError, WlsSolution, check_observability, solve_wls, write_solution_csv

__version__ = "0.1.0"
