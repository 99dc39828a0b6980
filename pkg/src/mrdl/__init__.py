"""Multi-resolution dictionary learning for texture classification.

A small convolutional feature extractor feeds learnable residual-encoding
dictionaries at several spatial resolutions; their encodings are fused by
simplex-constrained adaptive weights and classified end-to-end. All
gradients are hand-derived and verified against finite differences.
"""

import os as _os


def _cap_threads() -> None:
    # MRDL_THREADS caps the numeric backend's pools; 0 or unset = auto.
    # Must run before numpy is imported to take effect.
    value = _os.environ.get("MRDL_THREADS", "").strip()
    try:
        n = int(value) if value else 0
    except ValueError:
        return
    if n > 0:
        for var in (
            "OMP_NUM_THREADS",
            "OPENBLAS_NUM_THREADS",
            "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS",
        ):
            _os.environ.setdefault(var, str(n))


_cap_threads()

from .encoding import Codebook, encode_backward, encode_forward, init_codebook  # noqa: E402
from .estimator import DictionaryTextureClassifier  # noqa: E402
from .fusion import (  # noqa: E402
    ModelConfig,
    configure_levels,
    init_model,
    model_backward,
    model_forward,
)
from .optim import RunMetrics, TrainConfig, gradcheck, sgd_step, train  # noqa: E402
from .texdata import Dataset, SyntheticSpec, generate, majority_vote, split  # noqa: E402

__all__ = [
    "Codebook",
    "encode_forward",
    "encode_backward",
    "init_codebook",
    "ModelConfig",
    "configure_levels",
    "init_model",
    "model_forward",
    "model_backward",
    "TrainConfig",
    "RunMetrics",
    "sgd_step",
    "gradcheck",
    "train",
    "Dataset",
    "SyntheticSpec",
    "generate",
    "split",
    "majority_vote",
    "DictionaryTextureClassifier",
]

__version__ = "0.1.0"
