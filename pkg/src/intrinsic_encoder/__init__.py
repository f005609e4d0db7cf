"""Condition-invariant image representations from unpaired multi-domain data.

A single shared encoder is trained adversarially against per-domain
generators and discriminators on unpaired, domain-labeled image sets; the
learned latent maps drop into a sequence-matching place-recognition
evaluator in place of raw images.
"""

from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    NumericError,
    ShapeError,
    ToolkitError,
)
from .nets import (
    BundleConfig,
    Discriminator,
    DiscriminatorConfig,
    Encoder,
    EncoderConfig,
    Generator,
    GeneratorConfig,
    IntrinsicRepresentation,
    ModelBundle,
    build_discriminator,
    build_encoder,
    build_generator,
    create_model_bundle,
    discriminate,
    encode,
    generate,
)
from .objectives import (
    LossReport,
    LossWeights,
    adversarial_loss,
    cycle_loss,
    encoder_loss,
    full_objective,
)
from .trainer import (
    TrainingConfig,
    pair_scheduler,
    sample_unpaired_batch,
    train,
    train_step,
)
from .data import (
    Dataset,
    DomainAppearance,
    DomainSet,
    SynthSpec,
    export_representations,
    load_domain_sets,
    load_representations,
    preprocess,
    synth_generate,
)
from .placerec import (
    DifferenceMatrix,
    MatchResult,
    accuracy,
    contrast_enhance,
    difference_matrix,
    evaluate_retrieval,
    histogram_equalize,
    sequence_match,
)
from .checkpoint import load_checkpoint, restore_bundle, save_checkpoint

__version__ = "0.1.0"
