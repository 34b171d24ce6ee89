# ccvec/__init__.py
"""
ccvec - distributed representations of code changes

Learns a fixed-width vector for every patch by predicting the words of its
log message from the removed and added code, and reuses those vectors for
log message generation, bug-fix classification and defect prediction.
"""

__version__ = "1.0.1"
__author__ = "Your Name"
__email__ = "your.email@example.com"

from .errors import CCVecError
from .corpus import PatchChange, Vocabulary, load_corpus, parse_unified_diff
from .tensorize import ShapeConfig, encode_change
from .compare import ComparisonMask
from .model import CC2Vec
from .train import TrainConfig, load_checkpoint, save_checkpoint, train_model
from .tasks import bleu4, extract_embeddings, nngen_baseline, retrieve_message

__all__ = [
    "CCVecError",
    "PatchChange",
    "Vocabulary",
    "load_corpus",
    "parse_unified_diff",
    "ShapeConfig",
    "encode_change",
    "ComparisonMask",
    "CC2Vec",
    "TrainConfig",
    "train_model",
    "save_checkpoint",
    "load_checkpoint",
    "bleu4",
    "extract_embeddings",
    "retrieve_message",
    "nngen_baseline",
]
