"""EM transfer learning for labeled Gaussian mixtures and LVQ classifiers.

The package learns a linear map from a disturbed target space back to the
source space of an existing classifier, so the classifier remains valid
without retraining. Core pieces: labeled Gaussian mixture models
(:mod:`emtransfer.lgmm`), prototype classifiers with adaptive metrics
(:mod:`emtransfer.lvq`), the transfer EM algorithm
(:mod:`emtransfer.transfer`), dataset generators (:mod:`emtransfer.datagen`)
and the benchmark harness (:mod:`emtransfer.bench`). A FastAPI service
(:mod:`emtransfer.service`) exposes everything over HTTP; the ``emtransfer``
CLI is a thin client for it.
"""

from .bench import (
    ExperimentConfig,
    ExperimentReport,
    baseline_gmlvq_transfer,
    baseline_naive,
    baseline_retrain,
    read_config_file,
    read_report_csv,
    run_experiment,
    write_report_csv,
)
from .datagen import (
    GeneratorSpec,
    cigars_source,
    cigars_target,
    exclude_classes,
    sample,
    subsample_balanced,
    toy_ambiguous,
    toy_source,
    toy_target,
)
from .dataset import Dataset, read_dataset_csv, write_dataset_csv
from .errors import (
    CsvParseError,
    DegenerateEvaluationError,
    DegenerateModelError,
    DegenerateResponsibilityError,
    EmTransferError,
    InvalidConfigurationError,
    InvalidInputError,
    InvalidResultError,
    NumericalError,
    SingularSystemError,
)
from .lgmm import (
    DEFAULT_POLICY,
    LabeledGMM,
    PrecisionPolicy,
    classify,
    classify_batch,
    fit_lgmm,
    joint_density,
    log_component_density,
    log_likelihood,
    posterior_labels,
)
from .lvq import (
    LvqModel,
    LvqTrainingConfig,
    default_sigma,
    glvq_cost,
    lvq_classify,
    lvq_distance,
    to_lgmm,
    train_gmlvq,
    train_lgmlvq,
)
from .optim import SolveResult, SolverConfig, minimize
from .serialize import load_model, save_model
from .transfer import (
    Responsibilities,
    TransferConfig,
    TransferMap,
    apply_transfer,
    e_step,
    em_transfer,
    eq_error,
    eq_gradient,
    m_step_closed_form,
    m_step_gradient,
)

__version__ = "0.1.0"
