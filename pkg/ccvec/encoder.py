# ccvec/encoder.py
"""
Hierarchical attention network over one side (removed or added code) of a
file: words -> lines -> hunks, each level a bidirectional GRU followed by
attention pooling against a learned context vector.
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from ccvec.corpus import PAD_ID
from ccvec.errors import ShapeError

INIT_RANGE = 0.1


def init_uniform_(module: nn.Module) -> None:
    """Uniform(-0.1, 0.1) for weights and context vectors, zeros for biases."""
    for name, param in module.named_parameters():
        if name.endswith("bias"):
            nn.init.zeros_(param)
        else:
            nn.init.uniform_(param, -INIT_RANGE, INIT_RANGE)


class GRUDirection(nn.Module):
    """Single-direction GRU, reset gate applied to the state before the candidate projection.

        z = sigmoid(W_z x + U_z h + b_z)
        r = sigmoid(W_r x + U_r h + b_r)
        n = tanh(W_n x + U_n (r * h) + b_n)
        h' = (1 - z) * n + z * h
    """

    def __init__(self, input_size: int, hidden_size: int):
        super().__init__()
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.input_proj = nn.Linear(input_size, 3 * hidden_size)
        self.gate_proj = nn.Linear(hidden_size, 2 * hidden_size, bias=False)
        self.candidate_proj = nn.Linear(hidden_size, hidden_size, bias=False)

    def forward(self, inputs: torch.Tensor) -> torch.Tensor:
        # inputs: (N, T, m) -> states (N, T, g)
        projected = self.input_proj(inputs)
        h = inputs.new_zeros(inputs.shape[0], self.hidden_size)
        states = []
        for t in range(inputs.shape[1]):
            x_z, x_r, x_n = projected[:, t].chunk(3, dim=-1)
            h_z, h_r = self.gate_proj(h).chunk(2, dim=-1)
            z = torch.sigmoid(x_z + h_z)
            r = torch.sigmoid(x_r + h_r)
            n = torch.tanh(x_n + self.candidate_proj(r * h))
            h = (1 - z) * n + z * h
            states.append(h)
        return torch.stack(states, dim=1)


class BiGRU(nn.Module):
    def __init__(self, input_size: int, hidden_size: int):
        super().__init__()
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.forward_gru = GRUDirection(input_size, hidden_size)
        self.backward_gru = GRUDirection(input_size, hidden_size)

    def forward(self, inputs: torch.Tensor) -> torch.Tensor:
        if inputs.dim() != 3 or inputs.shape[-1] != self.input_size:
            raise ShapeError(
                f"expected inputs of shape (N, T, {self.input_size}), got {tuple(inputs.shape)}"
            )
        if inputs.shape[1] == 0:
            raise ShapeError("cannot encode an empty sequence")
        forward_states = self.forward_gru(inputs)
        backward_states = self.backward_gru(inputs.flip(1)).flip(1)
        return torch.cat([forward_states, backward_states], dim=-1)


class AttentionPool(nn.Module):
    """u_k = ReLU(W h_k + b); alpha = softmax(u_k . u_ctx); output = sum alpha_k h_k."""

    def __init__(self, width: int):
        super().__init__()
        self.projection = nn.Linear(width, width)
        self.context = nn.Parameter(torch.empty(width))

    def forward(self, annotations: torch.Tensor,
                mask: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, torch.Tensor]:
        hidden = F.relu(self.projection(annotations))
        scores = hidden @ self.context
        if mask is not None:
            # fully padded rows fall back to unmasked attention
            mask = mask | ~mask.any(dim=-1, keepdim=True)
            scores = scores.masked_fill(~mask, float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        pooled = (weights.unsqueeze(-1) * annotations).sum(dim=-2)
        return pooled, weights


@dataclass
class AttentionTrace:
    word: torch.Tensor  # (N, H, L, W)
    line: torch.Tensor  # (N, H, L)
    hunk: torch.Tensor  # (N, H)


class HierarchicalEncoder(nn.Module):
    def __init__(self, vocab_size: int, embed_dim: int, gru_dim: int, mask_padding: bool = False):
        super().__init__()
        self.out_dim = 2 * gru_dim
        self.mask_padding = mask_padding
        self.embedding = nn.Embedding(vocab_size, embed_dim)
        self.word_gru = BiGRU(embed_dim, gru_dim)
        self.word_attention = AttentionPool(self.out_dim)
        self.line_gru = BiGRU(self.out_dim, gru_dim)
        self.line_attention = AttentionPool(self.out_dim)
        self.hunk_gru = BiGRU(self.out_dim, gru_dim)
        self.hunk_attention = AttentionPool(self.out_dim)
        init_uniform_(self)

    def forward(self, ids: torch.Tensor) -> Tuple[torch.Tensor, AttentionTrace]:
        # ids: (N, H, L, W) -> e: (N, 2g)
        n, h, l, w = ids.shape
        word_mask = line_mask = hunk_mask = None
        if self.mask_padding:
            word_mask = (ids != PAD_ID).reshape(n * h * l, w)
            line_mask = word_mask.any(-1).reshape(n * h, l)
            hunk_mask = line_mask.any(-1).reshape(n, h)

        words = self.embedding(ids.reshape(n * h * l, w))
        lines, word_weights = self.word_attention(self.word_gru(words), word_mask)
        hunks, line_weights = self.line_attention(self.line_gru(lines.reshape(n * h, l, -1)), line_mask)
        e, hunk_weights = self.hunk_attention(self.hunk_gru(hunks.reshape(n, h, -1)), hunk_mask)
        trace = AttentionTrace(
            word=word_weights.reshape(n, h, l, w),
            line=line_weights.reshape(n, h, l),
            hunk=hunk_weights,
        )
        return e, trace


def encode_sequence(inputs: torch.Tensor, gru: BiGRU) -> torch.Tensor:
    """Annotate a sequence: forward state at k concatenated with backward state at k."""
    squeeze = inputs.dim() == 2
    outputs = gru(inputs.unsqueeze(0) if squeeze else inputs)
    return outputs.squeeze(0) if squeeze else outputs


def attention_pool(annotations: torch.Tensor, block: AttentionPool,
                   mask: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, torch.Tensor]:
    if annotations.shape[-2] == 0:
        raise ShapeError("cannot pool an empty annotation list")
    return block(annotations, mask)


def encode_side(ids: torch.Tensor, encoder: HierarchicalEncoder) -> Tuple[torch.Tensor, AttentionTrace]:
    """Embed one H x L x W id tensor (or a batch of them) into a 2g vector."""
    single = ids.dim() == 3
    e, trace = encoder(ids.unsqueeze(0) if single else ids)
    if single:
        return e[0], AttentionTrace(word=trace.word[0], line=trace.line[0], hunk=trace.hunk[0])
    return e, trace
