# ccvec/head.py
"""Feature fusion, word prediction and the training objective."""
from typing import Iterable, Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from ccvec.encoder import init_uniform_
from ccvec.errors import ConfigurationError, ShapeError

PROB_EPS = 1e-7


def fuse_files(file_embs: Sequence[torch.Tensor], num_files: int) -> torch.Tensor:
    """Concatenate per-file embeddings (padding slots included) into the patch vector e_p."""
    if len(file_embs) != num_files:
        raise ShapeError(f"expected {num_files} file embeddings, got {len(file_embs)}")
    return torch.cat(list(file_embs), dim=-1)


class WordPredictionHead(nn.Module):
    """h = ReLU(w_h e_p + b_h); one independent sigmoid per message word."""

    def __init__(self, input_dim: int, hidden_dim: int, vocab_size: int, dropout: float = 0.0):
        super().__init__()
        self.input_dim = input_dim
        self.hidden = nn.Linear(input_dim, hidden_dim)
        self.output = nn.Linear(hidden_dim, vocab_size, bias=False)
        self.dropout = nn.Dropout(dropout)
        init_uniform_(self)

    def forward(self, e_p: torch.Tensor) -> torch.Tensor:
        """Return word logits; dropout acts on e_p and h in training mode only."""
        if e_p.shape[-1] != self.input_dim:
            raise ShapeError(f"expected patch vectors of width {self.input_dim}, got {e_p.shape[-1]}")
        h = F.relu(self.hidden(self.dropout(e_p)))
        return self.output(self.dropout(h))


def predict_word_probs(e_p: torch.Tensor, head: WordPredictionHead) -> torch.Tensor:
    return torch.sigmoid(head(e_p))


def l2_penalty(parameters: Iterable[torch.Tensor]) -> torch.Tensor:
    params = list(parameters)
    if not params:
        return torch.tensor(0.0)
    return sum(p.pow(2).sum() for p in params)


def _check_lambda(lam: float) -> None:
    if lam < 0:
        raise ConfigurationError(f"L2 coefficient must be >= 0, got {lam}")


def loss(probs: torch.Tensor, labels: torch.Tensor, parameters: Iterable[torch.Tensor] = (),
         lam: float = 0.0) -> torch.Tensor:
    """Binary cross-entropy summed over words (mean over the batch) plus (lam/2)*||theta||^2."""
    _check_lambda(lam)
    if probs.shape != labels.shape:
        raise ShapeError(f"probabilities {tuple(probs.shape)} and labels {tuple(labels.shape)} differ")
    probs = probs.clamp(PROB_EPS, 1 - PROB_EPS)
    per_word = -labels * torch.log(probs) - (1 - labels) * torch.log(1 - probs)
    data_term = per_word.sum(dim=-1).mean() if per_word.dim() > 1 else per_word.sum()
    if lam == 0:
        return data_term
    return data_term + 0.5 * lam * l2_penalty(parameters)


def loss_from_logits(logits: torch.Tensor, labels: torch.Tensor,
                     parameters: Iterable[torch.Tensor] = (), lam: float = 0.0,
                     mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Same objective evaluated from logits with the numerically stable BCE form."""
    _check_lambda(lam)
    per_patch = F.binary_cross_entropy_with_logits(logits, labels, reduction="none").sum(dim=-1)
    if mask is not None:
        per_patch = per_patch[mask]
    data_term = per_patch.mean() if per_patch.numel() else logits.sum() * 0
    if lam == 0:
        return data_term
    return data_term + 0.5 * lam * l2_penalty(parameters)
