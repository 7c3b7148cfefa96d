"""One-stage scene segmentation and classification over shot sequences.

Shots are labeled with link tags describing their relation to the next shot;
a grammar-constrained CRF decodes tag paths that always form valid scene
partitions, so segmentation and classification come out of a single pass.
"""

from .crf import LinkCRF
from .data import Corpus, DataError, ShotRecord, VideoSequence
from .diffcorr import DiffCorrConfig, DiffCorrNet
from .fusion import EncoderConfig, FusionTrunk, TransformerEncoder
from .metrics import PRF, EvalReport, evaluate
from .scheme import (
    CategoryId,
    GrammarError,
    LabelScheme,
    LinkKind,
    LinkTag,
    PartitionError,
    SceneAnnotation,
    decode,
    encode,
    repair,
    transition_mask,
    validate_partition,
)
from .synth import SynthConfig, generate_corpus, split_corpus
from .train import (
    CurveLog,
    OsmslModel,
    TrainConfig,
    evaluate_model,
    load_checkpoint,
    predict_corpus,
    save_checkpoint,
    train_osmsl,
)

__version__ = "0.1.0"

__all__ = [
    "CategoryId",
    "Corpus",
    "CurveLog",
    "DataError",
    "DiffCorrConfig",
    "DiffCorrNet",
    "EncoderConfig",
    "EvalReport",
    "FusionTrunk",
    "GrammarError",
    "LabelScheme",
    "LinkCRF",
    "LinkKind",
    "LinkTag",
    "OsmslModel",
    "PRF",
    "PartitionError",
    "SceneAnnotation",
    "ShotRecord",
    "SynthConfig",
    "TrainConfig",
    "TransformerEncoder",
    "VideoSequence",
    "decode",
    "encode",
    "evaluate",
    "evaluate_model",
    "generate_corpus",
    "load_checkpoint",
    "predict_corpus",
    "repair",
    "save_checkpoint",
    "split_corpus",
    "train_osmsl",
    "transition_mask",
    "validate_partition",
]
