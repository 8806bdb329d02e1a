"""Dense-tensor CPD via fiber-sampled stochastic gradient solvers."""

from .constraints import Constraint
from .experiments import (
    RunRecord,
    SyntheticSpec,
    generate_synthetic,
    metric,
    run,
    run_trials,
    stochastic_iters_per_full,
)
from .sampling import FiberSample, FiberSampler, SamplerConfig
from .solvers import (
    SOLVERS,
    Adagrad,
    CurvatureEstimate,
    Diminishing,
    LocallyOptimal,
    SolverConfig,
    SolverState,
)
from .storage import read_tensor, write_tensor
from .tensor import (
    DenseTensor,
    KruskalModel,
    fold,
    frob_norm,
    khatri_rao,
    kr_full,
    kr_rows,
    mttkrp,
    objective,
    partial_mttkrp,
    reconstruct,
    unfold,
)

__version__ = "0.1.0"
