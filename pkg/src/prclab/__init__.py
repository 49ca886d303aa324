"""Periodic orbits, phase response curves and their sensitivities for oscillator models."""

from prclab.models import (
    ModelDef,
    GoodwinParams,
    MorrisLecarParams,
    RadialClockParams,
    goodwin_model,
    morris_lecar_model,
    radial_clock_model,
    finite_difference_derivatives,
    get_model,
)
from prclab.orbit import (
    CirclePartition,
    PhaseCondition,
    PeriodicOrbit,
    initial_guess,
    newton_orbit,
    resample_orbit,
    solve_orbit,
)
from prclab.prc import (
    GradientCurve,
    FinitePrc,
    Impulse,
    adjoint_prc,
    direct_prc,
    ptc_from_prc,
    convolution_prc,
    simulate_phase_model,
    simulate_hybrid_phase_model,
)
from prclab.sensitivity import (
    SensitivityBundle,
    orbit_sensitivity,
    prc_sensitivity,
    period_sensitivity,
    relative_sensitivity,
    sensitivity_bundle,
)
from prclab.signals import PhaseSignal
from prclab.metrics import (
    PrcSpace,
    ShiftResult,
    inner,
    derivative,
    optimal_shift,
    distance,
    horizontal_project,
    norm_in_space,
)
from prclab.analysis import (
    Classification,
    IdentifyState,
    RobustnessReport,
    classify,
    grad_cost,
    identify,
    robustness,
)

__version__ = "0.1.0"
