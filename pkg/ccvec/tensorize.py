# ccvec/tensorize.py
"""Fixed-shape integer encoding of patches (files x sides x hunks x lines x words)."""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field

from ccvec.corpus import PAD_ID, PatchChange, TokenLine, VocabKind, Vocabulary
from ccvec.errors import ConfigurationError

logger = logging.getLogger(__name__)

REMOVED = 0
ADDED = 1


class ShapeConfig(BaseModel):
    """Padding/truncation sizes applied to every patch."""
    model_config = ConfigDict(frozen=True)

    max_files: int = Field(5, ge=1)
    max_hunks: int = Field(8, ge=1)
    max_lines: int = Field(10, ge=1)
    max_words: int = Field(32, ge=1)

    @property
    def dims(self) -> tuple:
        return (self.max_files, 2, self.max_hunks, self.max_lines, self.max_words)


@dataclass
class ChangeTensor:
    # shape (F, 2, H, L, W); side 0 = removed, side 1 = added
    ids: np.ndarray

    @property
    def removed(self) -> np.ndarray:
        return self.ids[:, REMOVED]

    @property
    def added(self) -> np.ndarray:
        return self.ids[:, ADDED]


def encode_change(patch: PatchChange, shape: ShapeConfig, vc: Vocabulary) -> ChangeTensor:
    """Pad or truncate a patch to ``shape``, keeping the earliest items at every level."""
    if vc.kind is not VocabKind.CODE:
        raise ConfigurationError("encode_change requires a code vocabulary")
    ids = np.full(shape.dims, PAD_ID, dtype=np.int64)
    for f, file_change in enumerate(patch.files[:shape.max_files]):
        for h, hunk in enumerate(file_change.hunks[:shape.max_hunks]):
            for side, lines in ((REMOVED, hunk.removed), (ADDED, hunk.added)):
                for l, line in enumerate(lines[:shape.max_lines]):
                    words = vc.encode(line[:shape.max_words])
                    ids[f, side, h, l, :len(words)] = words
    return ChangeTensor(ids=ids)


def decode_change(tensor: ChangeTensor, vc: Vocabulary) -> List[List[List[List[TokenLine]]]]:
    """Inverse of encode_change ignoring PAD: files -> sides -> hunks -> lines -> tokens."""
    decoded = []
    for file_ids in tensor.ids:
        sides = []
        for side_ids in file_ids:
            hunks = []
            for hunk_ids in side_ids:
                lines = [[vc.id_to_token(int(i)) for i in line_ids if i != PAD_ID]
                         for line_ids in hunk_ids]
                hunks.append([line for line in lines if line])
            sides.append(hunks)
        decoded.append(sides)
    return decoded


def encode_corpus(patches: Sequence[PatchChange], shape: ShapeConfig, vc: Vocabulary,
                  workers: int = 1) -> torch.Tensor:
    """Encode patches into one LongTensor of shape (N, F, 2, H, L, W), order preserved."""
    if workers > 1 and len(patches) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            tensors = list(pool.map(lambda p: encode_change(p, shape, vc), patches))
    else:
        tensors = [encode_change(p, shape, vc) for p in patches]
    if not tensors:
        return torch.zeros((0,) + shape.dims, dtype=torch.long)
    return torch.from_numpy(np.stack([t.ids for t in tensors]))
