"""Discriminative topic modeling over grouped items.

Groups of items (documents of words, an author's posts, a board of
images) share a latent distribution over K topics. Item-level topic
logits come from a trainable encoder; group structure enters through a
Dirichlet bias aggregated across the group's items. Training is either
variational (unsupervised / semi-supervised / supervised) or
discriminative through unrolled mean-field updates. A collapsed-Gibbs
sampler for classical generative LDA serves as the baseline.
"""

from .backend import BACKEND, HAS_NUMBA
from .encoders import EncoderParams, Item, init_params
from .mean_field import Group, HyperParams, flatten_groups
from .training import TrainConfig, predict_corpus, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "HAS_NUMBA",
    "EncoderParams",
    "Item",
    "init_params",
    "Group",
    "HyperParams",
    "flatten_groups",
    "TrainConfig",
    "predict_corpus",
    "train",
    "__version__",
]
