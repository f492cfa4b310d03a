"""Differentiable ODE solving with event handling.

Solves ODEs to implicitly defined termination times, differentiates event
times and event states exactly, chains events into piecewise-continuous
trajectories, and samples temporal point processes through threshold events.
"""

__version__ = "0.1.0"

from .backends import active_backend
from .errors import (
    BackwardMismatchWarning,
    BracketError,
    DivergenceError,
    DomainError,
    GrazingEventError,
    ImmediateEventError,
    InvalidSpecError,
    OdeventError,
    RootRefineError,
    RunawayIntensityError,
    ShapeError,
    StepLimitError,
    TrainingDivergedError,
)
from .functions import (
    DiffFn,
    Mlp,
    MlpSpec,
    SliceInput,
    SoftplusHead,
    TanhProduct,
    mlp_forward,
    mlp_init,
    mlp_vjp,
    tanh_product_eventfn,
)
from .params import ParamVec, load_paramvec, pack, save_paramvec, spec_hash, unpack
from .solver import Solution, SolverConfig, dense_eval, ode_solve, write_trajectory_csv
