"""Desk-scale hierarchical binary quantization and refinement-sampling lab.

The package pairs an exact M-round binary quantization codec (error below
2^-M per element) with a conditional token-map predictor trained to recover
ground truth from partially random inputs, an iterative refinement sampler
with entropy-adaptive step allocation, and a CLI harness that exercises the
whole pipeline on synthetic datasets.
"""

from . import hbq, metrics, numerics, predictor, refine, sampler, synthdata, trainer
from .config import ExperimentConfig, load_experiment
from .numerics import Rng

__version__ = "0.1.0"

__all__ = [
    "hbq",
    "metrics",
    "numerics",
    "predictor",
    "refine",
    "sampler",
    "synthdata",
    "trainer",
    "ExperimentConfig",
    "load_experiment",
    "Rng",
    "__version__",
]
