"""oscillax: a numerical laboratory for lattice oscillating random walks."""

from .errors import OscillaxError, ValidationError
from .evolve import (
    KernelTable,
    Side,
    TableKind,
    Window,
    default_window,
    excursion_functions,
    first_passage_kernel,
    marginal_sequence,
    step,
    transition_matrix,
)
from .ladder import (
    FluctuationConstants,
    LadderData,
    LadderVariant,
    fluctuation_constants,
    ladder_height_dist,
    ladder_potentials,
    renewal_function,
)
from .model import (
    Convention,
    DriftCase,
    LatticeDist,
    OscillatingModel,
    argmin_laplace,
    cross_point,
    dist,
    dump_model,
    essential_class,
    geometric_tilt,
    laplace,
    laplace_deriv,
    load_model,
    mirror_dist,
    mirror_model,
    save_model,
    tilt,
    validate_model,
)
from .regimes import (
    RegimePrediction,
    classify,
    invariant_profile,
    predict,
    predicted_constant_Cy,
    select_tilt,
)
from .switching import (
    SpectralData,
    SwitchingKernel,
    WeightSpec,
    build_Q,
    default_weight,
    doob_transform,
    limit_operator_E,
    limit_operator_E_ell,
    power_iterate,
    power_sequences,
    q_history_matrices,
    renewal_sequence,
    switching_kernel,
    switching_time_marginals,
    tilted_kernels,
)
from .verify import (
    AsymptoticFit,
    SimResult,
    convergence_suite,
    fit_rate_exponent,
    identity_suite,
    simulate,
)

__version__ = "0.1.0"
