# ccvec/compare.py
"""Comparison functions contrasting the removed-code and added-code embeddings."""
from itertools import product
from typing import Dict, Iterable, Iterator, List, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict

from ccvec.encoder import init_uniform_
from ccvec.errors import ConfigurationError, ShapeError

FUNCTION_NAMES = ("nt", "nn", "sim", "sub", "mul")


class ComparisonMask(BaseModel):
    """Which comparison functions contribute to the file embedding.

    ``bypass`` is the All-all ablation: no comparison at all, the file
    embedding is e_r concatenated with e_a.
    """
    model_config = ConfigDict(frozen=True)

    nt: bool = True
    nn: bool = True
    sim: bool = True
    sub: bool = True
    mul: bool = True
    bypass: bool = False

    @classmethod
    def from_flags(cls, disable: Iterable[str] = (), ablation: Optional[str] = None) -> "ComparisonMask":
        if ablation is not None:
            if ablation != "all":
                raise ConfigurationError(f"unknown ablation {ablation!r}; only 'all' is supported")
            return cls(bypass=True)
        names = [name.strip().lower() for name in disable if name.strip()]
        unknown = sorted(set(names) - set(FUNCTION_NAMES))
        if unknown:
            raise ConfigurationError(
                f"unknown comparison function(s) {', '.join(unknown)}; choose from {', '.join(FUNCTION_NAMES)}"
            )
        mask = cls(**{name: name not in names for name in FUNCTION_NAMES})
        mask.validate_enabled()
        return mask

    def enabled(self) -> List[str]:
        return [name for name in FUNCTION_NAMES if getattr(self, name)]

    def validate_enabled(self) -> None:
        if not self.bypass and not self.enabled():
            raise ConfigurationError(
                "all comparison functions are disabled; use the 'all' ablation to bypass comparison"
            )


def all_masks() -> Iterator[ComparisonMask]:
    """Every on/off combination of the five functions (32 masks)."""
    for flags in product((True, False), repeat=len(FUNCTION_NAMES)):
        yield ComparisonMask(**dict(zip(FUNCTION_NAMES, flags)))


def ablation_variants() -> Dict[str, ComparisonMask]:
    variants = {"All": ComparisonMask()}
    for name, label in zip(FUNCTION_NAMES, ("NT", "NN", "sim", "sub", "mul")):
        variants[f"All-{label}"] = ComparisonMask(**{name: False})
    variants["All-all"] = ComparisonMask(bypass=True)
    return variants


def file_embedding_width(n: int, z: int, mask: ComparisonMask) -> int:
    if mask.bypass:
        return 2 * n
    return z * mask.nt + n * mask.nn + 2 * mask.sim + n * mask.sub + n * mask.mul


def _check_widths(e_r: torch.Tensor, e_a: torch.Tensor) -> None:
    if e_r.shape != e_a.shape:
        raise ShapeError(f"removed/added widths differ: {tuple(e_r.shape)} vs {tuple(e_a.shape)}")


def compare_ntn(e_r: torch.Tensor, e_a: torch.Tensor, tensor: torch.Tensor,
                bias: torch.Tensor) -> torch.Tensor:
    """Neural tensor network: slice i = ReLU(e_r^T T^i e_a + b_i)."""
    _check_widths(e_r, e_a)
    if tensor.shape[1:] != (e_r.shape[-1], e_r.shape[-1]):
        raise ShapeError(f"tensor slices {tuple(tensor.shape[1:])} do not match width {e_r.shape[-1]}")
    return F.relu(torch.einsum("...i,kij,...j->...k", e_r, tensor, e_a) + bias)


def compare_ffnn(e_r: torch.Tensor, e_a: torch.Tensor, weight: torch.Tensor,
                 bias: torch.Tensor) -> torch.Tensor:
    """ReLU(W [e_a ; e_r] + b), added side first."""
    _check_widths(e_r, e_a)
    if weight.shape[-1] != 2 * e_r.shape[-1]:
        raise ShapeError(f"weight expects input width {weight.shape[-1]}, got {2 * e_r.shape[-1]}")
    return F.relu(F.linear(torch.cat([e_a, e_r], dim=-1), weight, bias))


def _safe_norm(x: torch.Tensor) -> torch.Tensor:
    squared = (x * x).sum(dim=-1)
    # keeps the gradient finite at the zero vector
    return torch.where(squared > 0, squared.clamp_min(1e-30).sqrt(), torch.zeros_like(squared))


def compare_similarity(e_r: torch.Tensor, e_a: torch.Tensor) -> torch.Tensor:
    """[euclidean distance, cosine similarity]; cosine against a zero vector is 0."""
    _check_widths(e_r, e_a)
    distance = _safe_norm(e_r - e_a)
    denominator = _safe_norm(e_r) * _safe_norm(e_a)
    dot = (e_r * e_a).sum(dim=-1)
    cosine = torch.where(denominator > 0, dot / denominator.clamp_min(1e-30), torch.zeros_like(dot))
    return torch.stack([distance, cosine], dim=-1)


def compare_subtract(e_r: torch.Tensor, e_a: torch.Tensor) -> torch.Tensor:
    _check_widths(e_r, e_a)
    return e_r - e_a


def compare_multiply(e_r: torch.Tensor, e_a: torch.Tensor) -> torch.Tensor:
    _check_widths(e_r, e_a)
    return e_r * e_a


class ComparisonLayer(nn.Module):
    def __init__(self, width: int, mask: ComparisonMask, ntn_slices: Optional[int] = None):
        super().__init__()
        mask.validate_enabled()
        self.width = width
        self.mask = mask
        self.ntn_slices = width if ntn_slices is None else ntn_slices
        if self.ntn_slices < 1:
            raise ConfigurationError("ntn_slices must be >= 1")
        self.out_dim = file_embedding_width(width, self.ntn_slices, mask)
        if mask.nt and not mask.bypass:
            self.ntn_tensor = nn.Parameter(torch.empty(self.ntn_slices, width, width))
            self.ntn_bias = nn.Parameter(torch.empty(self.ntn_slices))
        if mask.nn and not mask.bypass:
            self.ffnn = nn.Linear(2 * width, width)
        init_uniform_(self)

    def forward(self, e_r: torch.Tensor, e_a: torch.Tensor) -> torch.Tensor:
        _check_widths(e_r, e_a)
        if e_r.shape[-1] != self.width:
            raise ShapeError(f"expected embeddings of width {self.width}, got {e_r.shape[-1]}")
        if self.mask.bypass:
            return torch.cat([e_r, e_a], dim=-1)
        parts = []
        if self.mask.nt:
            parts.append(compare_ntn(e_r, e_a, self.ntn_tensor, self.ntn_bias))
        if self.mask.nn:
            parts.append(compare_ffnn(e_r, e_a, self.ffnn.weight, self.ffnn.bias))
        if self.mask.sim:
            parts.append(compare_similarity(e_r, e_a))
        if self.mask.sub:
            parts.append(compare_subtract(e_r, e_a))
        if self.mask.mul:
            parts.append(compare_multiply(e_r, e_a))
        return torch.cat(parts, dim=-1)


def file_embedding(e_r: torch.Tensor, e_a: torch.Tensor, layer: ComparisonLayer) -> torch.Tensor:
    """Concatenate NT, NN, sim, sub, mul outputs in that order for the enabled functions."""
    return layer(e_r, e_a)
