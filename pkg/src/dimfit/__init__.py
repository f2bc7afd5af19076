"""dimfit: refine object descriptions to cover exactly the user-requested
semantic dimensions, and measure how controllable any description source is.
"""

__version__ = "0.1.0"

from .corpus import DescriptionRecord, InstanceRecord, build_prompt, load_corpus, sample_intents
from .extractor import DimensionTuple, ExtractionResult, extract, parse_tuples
from .metrics import ControllabilityReport, aggregate, attribute_iou, classify, modified_ratio
from .refiner import RefinementTrace, RefinerConfig, run_pipeline
from .taxonomy import AttributeLabel, Dimension, Taxonomy, Unlisted, load_taxonomy
from .validity import ValidityEvaluator, ValidityJudgment, relative_batch

__all__ = [
    "AttributeLabel",
    "ControllabilityReport",
    "DescriptionRecord",
    "Dimension",
    "DimensionTuple",
    "ExtractionResult",
    "InstanceRecord",
    "RefinementTrace",
    "RefinerConfig",
    "Taxonomy",
    "Unlisted",
    "ValidityEvaluator",
    "ValidityJudgment",
    "__version__",
    "aggregate",
    "attribute_iou",
    "build_prompt",
    "classify",
    "extract",
    "load_corpus",
    "load_taxonomy",
    "modified_ratio",
    "parse_tuples",
    "relative_batch",
    "run_pipeline",
    "sample_intents",
]
