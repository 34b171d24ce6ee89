# ccvec/model.py
"""The assembled network: HAN encoders -> comparison layers -> fusion -> word prediction."""
from typing import List, Optional, Tuple

import torch
import torch.nn as nn

from ccvec.compare import ComparisonLayer, ComparisonMask
from ccvec.encoder import AttentionTrace, HierarchicalEncoder
from ccvec.head import WordPredictionHead, fuse_files
from ccvec.tensorize import ADDED, REMOVED, ShapeConfig


class CC2Vec(nn.Module):
    def __init__(self, code_vocab_size: int, msg_vocab_size: int, shape: ShapeConfig,
                 embed_dim: int, gru_dim: int, hidden_dim: int, mask: ComparisonMask,
                 ntn_slices: Optional[int] = None, share_encoder: bool = True,
                 mask_padding: bool = False, dropout: float = 0.0):
        super().__init__()
        self.shape = shape
        self.share_encoder = share_encoder
        self.encoder = HierarchicalEncoder(code_vocab_size, embed_dim, gru_dim, mask_padding)
        self.added_encoder = None
        if not share_encoder:
            self.added_encoder = HierarchicalEncoder(code_vocab_size, embed_dim, gru_dim, mask_padding)
        self.comparison = ComparisonLayer(self.encoder.out_dim, mask, ntn_slices)
        self.file_dim = self.comparison.out_dim
        self.patch_dim = shape.max_files * self.file_dim
        self.head = WordPredictionHead(self.patch_dim, hidden_dim, msg_vocab_size, dropout)

    @classmethod
    def from_config(cls, config, code_vocab_size: int, msg_vocab_size: int) -> "CC2Vec":
        return cls(
            code_vocab_size=code_vocab_size,
            msg_vocab_size=msg_vocab_size,
            shape=config.shape,
            embed_dim=config.embed_dim,
            gru_dim=config.gru_dim,
            hidden_dim=config.hidden_dim,
            mask=config.mask,
            ntn_slices=config.ntn_slices,
            share_encoder=config.share_encoder,
            mask_padding=config.mask_padding,
            dropout=config.dropout_rate,
        )

    def _encode_sides(self, ids: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, AttentionTrace, AttentionTrace]:
        # ids: (N, F, 2, H, L, W)
        n, f = ids.shape[:2]
        sides = ids.reshape(n * f, 2, *ids.shape[3:])
        if self.added_encoder is None:
            both, trace = self.encoder(torch.cat([sides[:, REMOVED], sides[:, ADDED]], dim=0))
            e_r, e_a = both[: n * f], both[n * f:]
            removed_trace = AttentionTrace(trace.word[: n * f], trace.line[: n * f], trace.hunk[: n * f])
            added_trace = AttentionTrace(trace.word[n * f:], trace.line[n * f:], trace.hunk[n * f:])
        else:
            e_r, removed_trace = self.encoder(sides[:, REMOVED])
            e_a, added_trace = self.added_encoder(sides[:, ADDED])
        return e_r, e_a, removed_trace, added_trace

    def file_embeddings(self, ids: torch.Tensor) -> torch.Tensor:
        """Per-file vectors e_f, shape (N, F, file_dim)."""
        n, f = ids.shape[:2]
        e_r, e_a, _, _ = self._encode_sides(ids)
        return self.comparison(e_r, e_a).reshape(n, f, self.file_dim)

    def embed(self, ids: torch.Tensor) -> torch.Tensor:
        """Code change vectors e_p, shape (N, F * file_dim)."""
        files: List[torch.Tensor] = list(self.file_embeddings(ids).unbind(dim=1))
        return fuse_files(files, self.shape.max_files)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        """Word logits, shape (N, |V^M|)."""
        return self.head(self.embed(ids))

    def explain(self, ids: torch.Tensor) -> Tuple[AttentionTrace, AttentionTrace]:
        """Attention weights of the removed and added sides, each with a leading (N*F) axis."""
        _, _, removed_trace, added_trace = self._encode_sides(ids)
        return removed_trace, added_trace
