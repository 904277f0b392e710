"""Predictor feedback for switched linear systems with input delay.

Core pieces: the plant model with its largest-quadratic-form switching
law (``model``), exact window predictors (``predictor``), the
delay-compensating feedback (``controller``), fixed-step closed-loop
simulation (``simulator``), and the energy transforms plus stability
certificate (``analysis``). Hot loops run in a compiled core when
available (see ``kernels.BACKEND``).
"""

from .analysis import (
    AssumptionReport,
    DecayFit,
    DecayReport,
    StabilityCertificate,
    backstepping_w,
    check_assumption2,
    fit_decay_rate,
    inverse_transform_pi,
    lyapunov_value,
    stability_constants,
    verify_decay,
    with_default_decay,
)
from .controller import ControlDecision, control_input, nominal_input
from .kernels import BACKEND
from .model import (
    InputHistory,
    ModeDynamics,
    QuadraticPartition,
    ValidationReport,
    boundary_gap,
    load_system,
    sigma_hysteretic,
    sigma_of,
    system_from_dict,
    system_to_dict,
    validate_system,
)
from .predictor import (
    ModeSequence,
    PredictorTrace,
    detect_mode_sequence,
    implicit_predictor_trace,
    mat_exp,
    semi_explicit_predictor,
)
from .presets import PRESETS, preset_config
from .simulator import (
    ConvergenceStudy,
    SimConfig,
    SimulationResult,
    convergence_study,
    predictor_exactness_error,
    simulate_closed_loop,
    simulate_nominal,
    simulate_open_loop,
    switching_instants,
)

__version__ = "0.1.0"
