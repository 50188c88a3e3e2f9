"""Deterministic mass-action reaction-network classifier.

A chemical reaction network, evolved under deterministic rate equations with
closed-form interval solutions, that selects informative feature subsets by
flux, learns per-class output weights through an exponentially-weighted
expert-aggregation scheme realized in the kinetics, and classifies by argmax
output concentration.  Includes an analysis suite that numerically validates
the renormalization, aggregation-tracking, regret, asymptotic-weight, and
VC-dimension guarantees.
"""

from .kinetics import (
    EQUILIBRIUM,
    FeatureSubset,
    NetworkConfig,
    RateConstants,
    Schedule,
    flux,
    flux_matrix,
    integrate_numeric,
    mass_action_rhs,
    relax_linear,
)
from .selection import (
    SelectionOutcome,
    SigmoidSpec,
    renormalize_selection,
    run_selection_threshold,
    run_selection_topk,
    sigmoid_f,
)
from .learner import (
    LearnerState,
    RunTrace,
    TrainedModel,
    ewa_step,
    forward_pass,
    infer,
    infer_batch,
    init_learner,
    load_model,
    renorm_and_decay,
    save_model,
    to_model,
    train,
)
from .aggregation import (
    GainLedger,
    crn_gain,
    reference_ewa,
    regret,
    regret_bound,
    softmax_stable,
)
from .analysis import (
    BinaryFluxInstance,
    BoundReport,
    RepetitiveTask,
    asymptotic_weights,
    bound_report,
    class_decomposition_exists,
    flux_discrepancy,
    is_optimal_family,
    network_complexity,
    network_discrepancy,
    network_discrepancy_const,
    species_discrepancy,
    species_discrepancy_const,
    vc_dimension_bruteforce,
)
from .dataio import (
    Dataset,
    EncodingSpec,
    builtin_digits_path,
    derive_seed,
    encode_block,
    encode_sample,
    load_digits_csv,
    split,
    synth_binary_flux,
)

__version__ = "0.1.0"
