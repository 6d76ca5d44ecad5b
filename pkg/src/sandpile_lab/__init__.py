"""Simulation laboratory for the one-dimensional stochastic sandpile."""

from .core import (
    ActivityCurve,
    DensitySpec,
    LatticeState,
    Odometer,
    activity_proxy,
    apply_instruction,
    full_topple,
    half_topple,
    is_full_legal,
    is_half_legal,
    stabilize_full,
    stabilize_half,
)
from .carpet import (
    CarpetReport,
    CarpetRun,
    check_H_events,
    coarse_counters,
    layout_stacks,
    locate_holes,
    random_valid_config,
    run_partial_stabilization,
    validate_config,
)
from .errors import (
    CapExceeded,
    ConfigError,
    IllegalMoveError,
    InvariantViolation,
    LayoutError,
    SandpileError,
)
from .layout import LEFT, RIGHT, SINGLE, BlockLayout
from .stacks import StackSet, create_stacks

__version__ = "0.1.0"
