"""rfkit: random-feature kernel classifiers at scale.

Approximates shift-invariant kernels with random cosine features, trains
multinomial logistic regression on them with stochastic average gradient,
scales to large feature counts via block-parallel training with logit
averaging, and supports product, sum, and composite kernel combinations.
"""
from .combinators import (
    AdditiveSpec,
    BottleneckProjection,
    CompositeMap,
    ProductSpec,
    additive_featurize,
    apply_bottleneck,
    compose_pipeline,
    fit_bottleneck,
    multiplicative_bank,
)
from .data import (
    Dataset,
    augment_gaussian,
    augment_mask,
    load_dataset,
    save_dataset,
    scale_unit,
    split,
)
from .ensemble import (
    BlockEnsemble,
    CombinationWeights,
    CombinedModel,
    assemble_logits,
    combine_logits,
    learn_combination_weights,
    partition,
    train_blocks,
)
from .errors import CorruptionError, FormatError
from .features import (
    KernelSpec,
    ProjectionBank,
    approx_kernel,
    exact_kernel,
    featurize,
    make_projection_bank,
    median_bandwidth,
)
from .metrics import EvalReport, accuracy, evaluate, perplexity
from .mlr import (
    MlrModel,
    SagState,
    TrainConfig,
    cross_entropy,
    gradient,
    init_model,
    logits,
    posterior,
    sag_epoch,
    train,
)
from .rng import derive_seed, stream
from .serialize import export_logits, import_logits, load_model, save_model

__version__ = "0.1.0"
