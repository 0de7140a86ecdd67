"""Domain-adaptation learning-curve prediction from source-side samples.

The package predicts how an NMT model's mean chrF will grow with the
amount of in-domain adaptation data, using only monolingual source-side
samples: an instance-level neural predictor plus parametric (exp3) and
boosted-tree baselines, with a leave-one-out evaluation harness and a
synthetic data generator for end-to-end validation.
"""

from .curvefit import AnchorObservation, Exp3Params, exp3_curve, exp3_eval, exp3_fit
from .dataset import (
    DecodeStep,
    DomainEntry,
    LearningCurve,
    Manifest,
    SampleRef,
    SentenceRecord,
    ValidationReport,
    load_manifest,
    read_tensor_record,
    save_manifest,
    validate_dataset,
    write_tensor_record,
)
from .errors import DalcError
from .features import (
    CorpusFeatures,
    GeneralVocab,
    InstanceFeatures,
    avg_token_entropy,
    corpus_features,
    extrapolate_corpus_features,
    least_confidence,
    margin_score,
    minmax_pool,
    xsim,
)
from .gbt import GbtConfig, GbtModel, gbt_fit, gbt_instance_rows, gbt_predict
from .harness import (
    DistributionReport,
    EvalProtocol,
    EvalReport,
    SyntheticSpec,
    ablation_suite,
    benchmark_net_config,
    benchmark_spec,
    distribution_report,
    generate_synthetic,
    leave_one_out,
    shifted_benchmark_spec,
)
from .metrics import ChrfConfig, chrf, mae, mean_chrf, rmse
from .net import (
    NetConfig,
    PredictorModel,
    TrainingInstance,
    TrainingLog,
    encoder_pool,
    fusion_forward,
    load_model,
    predict_curve,
    predict_instance,
    save_model,
    train,
)

__version__ = "0.1.0"
