"""Importance-aware multi-source adversarial domain adaptation for
drug-response prediction, with a built-in synthetic benchmark.
"""

__version__ = "0.1.0"

from .data import DomainBundle, ExpressionMatrix, LabeledDomain  # noqa: F401
from .evaluate import aupr, auroc, predict_target  # noqa: F401
from .model import ModelBundle, init_params  # noqa: F401
from .synth import SynthConfig, generate, run_benchmark  # noqa: F401
from .train import TrainConfig, load_checkpoint, save_checkpoint  # noqa: F401
