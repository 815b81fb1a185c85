"""Simulation and analysis toolkit for a flux-biased rf-SQUID bridge switch."""

__version__ = "0.1.0"

from .analysis import (  # noqa: E402
    DriftRecord,
    LinecutSet,
    StepReport,
    chi,
    chi_band,
    chi_matrix,
    extract_shift_2d,
    group_steps,
    histogram_threshold,
    monitor,
)
from .bias import AppliedBias, BiasMode, BiasState, solve_batch, solve_bias  # noqa: E402
from .core import (  # noqa: E402
    PHI0,
    PHI0_RED,
    BridgeParams,
    ModePhases,
    SquidParams,
    coupling_gxy,
    default_bridge,
    hamiltonian,
    kerr_kxy,
    mode_currents,
    periods,
)
from .errors import *  # noqa: E402,F401,F403
from .microwave import (  # noqa: E402
    PortEnvironment,
    TransmissionGrid,
    compression_point,
    on_off_contrast,
    s21,
    sweep_grid,
)
from .modulation import (  # noqa: E402
    CosineSeries,
    carrier_response,
    cosine_decompose,
    fit_zeta,
    sideband_spectrum_timedomain,
)
from .trap import TrapProtocol, TrapState, drift_monitor, step_width, trap, trap_many  # noqa: E402
