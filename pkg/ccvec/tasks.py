# ccvec/tasks.py
"""
Downstream uses of code change vectors: extraction, log-message retrieval
(CC2Vec vectors and the bag-of-words NNGen baseline), BLEU-4,
classification metrics and feature export.
"""
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch
from sacrebleu.metrics import BLEU
from sklearn.feature_extraction import DictVectorizer
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import accuracy_score, f1_score, precision_score, recall_score, roc_auc_score
from sklearn.preprocessing import normalize

from ccvec.corpus import PatchChange, Vocabulary
from ccvec.errors import ConfigurationError, CorpusError, MetricError, ShapeError
from ccvec.model import CC2Vec
from ccvec.tensorize import ShapeConfig, encode_corpus

logger = logging.getLogger(__name__)

MAX_NGRAM_ORDER = 4


@dataclass
class EmbeddingRecord:
    id: str
    vector: np.ndarray
    file_vectors: Optional[np.ndarray] = None


def extract_embeddings(model: CC2Vec, corpus: Sequence[PatchChange], code_vocab: Vocabulary,
                       shape: ShapeConfig, batch_size: int = 64, with_files: bool = False,
                       workers: int = 1) -> List[EmbeddingRecord]:
    """Code change vectors e_p for every patch, in corpus order."""
    model.eval()
    records: List[EmbeddingRecord] = []
    with torch.no_grad():
        for start in range(0, len(corpus), batch_size):
            batch = corpus[start:start + batch_size]
            ids = encode_corpus(batch, shape, code_vocab, workers=workers)
            files = model.file_embeddings(ids)
            vectors = files.reshape(len(batch), -1).numpy()
            for i, patch in enumerate(batch):
                records.append(EmbeddingRecord(
                    id=patch.id,
                    vector=vectors[i].copy(),
                    file_vectors=files[i].numpy().copy() if with_files else None,
                ))
    return records


# BLEU-4

def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _bleu_statistics(candidate: Sequence[str], reference: Sequence[str]) -> Tuple[List[int], List[int]]:
    correct, total = [], []
    for n in range(1, MAX_NGRAM_ORDER + 1):
        cand = _ngram_counts(candidate, n)
        ref = _ngram_counts(reference, n)
        correct.append(sum(min(count, ref[gram]) for gram, count in cand.items()))
        total.append(max(len(candidate) - n + 1, 0))
    return correct, total


def _combine(correct: List[int], total: List[int], sys_len: int, ref_len: int) -> float:
    stats = BLEU.compute_bleu(list(correct), list(total), sys_len, ref_len, smooth_method="none",
                              effective_order=True, max_ngram_order=MAX_NGRAM_ORDER)
    # orders the candidate is too short for are left out; a zero precision gives 0
    orders = [(c, t) for c, t in zip(correct, total) if t > 0]
    if not orders or any(c == 0 for c, _ in orders):
        return 0.0
    # geometric mean of unscaled ratios: a perfect match is exactly 100
    return 100.0 * stats.bp * math.exp(sum(math.log(c / t) for c, t in orders) / len(orders))


def bleu4(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """Sentence-level BLEU-4 on token sequences, 0-100."""
    if not reference:
        raise MetricError("BLEU reference must not be empty")
    if not candidate:
        return 0.0
    correct, total = _bleu_statistics(candidate, reference)
    return _combine(correct, total, len(candidate), len(reference))


def corpus_bleu4(candidates: Sequence[Sequence[str]], references: Sequence[Sequence[str]]) -> float:
    """Corpus-level BLEU-4: n-gram counts and lengths are summed before combining."""
    if len(candidates) != len(references):
        raise ShapeError(f"{len(candidates)} candidates for {len(references)} references")
    correct = [0] * MAX_NGRAM_ORDER
    total = [0] * MAX_NGRAM_ORDER
    sys_len = ref_len = 0
    for candidate, reference in zip(candidates, references):
        if not reference:
            raise MetricError("BLEU reference must not be empty")
        c, t = _bleu_statistics(candidate, reference)
        correct = [a + b for a, b in zip(correct, c)]
        total = [a + b for a, b in zip(total, t)]
        sys_len += len(candidate)
        ref_len += len(reference)
    if sys_len == 0:
        return 0.0
    return _combine(correct, total, sys_len, ref_len)


# Retrieval

@dataclass
class IndexEntry:
    id: str
    vector: np.ndarray
    message: str
    message_tokens: List[str]
    code_tokens: List[str]

    @property
    def code_token_bag(self) -> Counter:
        return Counter(self.code_tokens)


@dataclass
class RetrievalResult:
    query_id: str
    chosen_id: str
    message: str
    message_tokens: List[str]
    cosine: float
    bleu_stage2: Optional[float] = None

    def to_dict(self) -> Dict:
        return {"query_id": self.query_id, "chosen_id": self.chosen_id, "message": self.message,
                "cosine": self.cosine, "bleu_stage2": self.bleu_stage2}


@dataclass
class RetrievalIndex:
    entries: List[IndexEntry] = field(default_factory=list)

    def __post_init__(self) -> None:
        widths = {entry.vector.shape[0] for entry in self.entries}
        if len(widths) > 1:
            raise ShapeError(f"index vectors have mixed widths: {sorted(widths)}")
        self._unit = normalize(np.stack([e.vector for e in self.entries]).astype(np.float64)) \
            if self.entries else np.zeros((0, 0))
        self._vectorizer = DictVectorizer()
        self._bags = None
        if self.entries:
            bags = self._vectorizer.fit_transform([e.code_token_bag for e in self.entries])
            # an index whose patches carry no code tokens has no bag features to scale
            self._bags = normalize(bags) if bags.shape[1] else bags

    @classmethod
    def build(cls, records: Sequence[EmbeddingRecord], patches: Sequence[PatchChange]) -> "RetrievalIndex":
        by_id = {patch.id: patch for patch in patches}
        entries = []
        for record in records:
            patch = by_id.get(record.id)
            if patch is None:
                raise CorpusError(f"no patch with id {record.id!r} for index entry")
            if not patch.message_tokens:
                continue
            entries.append(IndexEntry(record.id, np.asarray(record.vector), patch.message,
                                      list(patch.message_tokens), patch.code_tokens()))
        if len(entries) != len(records):
            logger.warning("Left %d patches with empty messages out of the index",
                           len(records) - len(entries))
        return cls(entries)

    def __len__(self) -> int:
        return len(self.entries)

    def vector_cosines(self, vector: np.ndarray) -> np.ndarray:
        query = np.asarray(vector, dtype=np.float64)
        if query.shape[0] != self._unit.shape[1]:
            raise ShapeError(f"query width {query.shape[0]} does not match index width {self._unit.shape[1]}")
        norm = np.linalg.norm(query)
        if norm == 0:
            return np.zeros(len(self.entries))
        return self._unit @ (query / norm)

    def bag_cosines(self, code_tokens: Sequence[str]) -> np.ndarray:
        bag = Counter(code_tokens)
        norm = np.sqrt(sum(count * count for count in bag.values()))
        if norm == 0:
            return np.zeros(len(self.entries))
        # tokens unseen by the index still count towards the query norm
        query = self._vectorizer.transform([bag])
        return np.asarray((self._bags @ query.T).todense()).ravel() / norm


def _two_stage(query_id: str, cosines: np.ndarray, index: RetrievalIndex, k: int,
               query_code_tokens: Optional[Sequence[str]]) -> RetrievalResult:
    if len(index) == 0:
        raise CorpusError("retrieval index is empty")
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}")
    top = sorted(range(len(index)), key=lambda i: (-cosines[i], i))[:k]
    scores: Dict[int, Optional[float]] = {i: None for i in top}
    if query_code_tokens:
        for i in top:
            candidate = index.entries[i].code_tokens
            scores[i] = bleu4(candidate, query_code_tokens) if candidate else 0.0
        chosen = min(top, key=lambda i: (-scores[i], -cosines[i], i))
    else:
        chosen = top[0]
    entry = index.entries[chosen]
    return RetrievalResult(query_id, entry.id, entry.message, list(entry.message_tokens),
                           float(cosines[chosen]), scores[chosen])


def retrieve_message(query: EmbeddingRecord, index: RetrievalIndex, k: int = 5,
                     query_code_tokens: Optional[Sequence[str]] = None) -> RetrievalResult:
    """Reuse the message of the nearest code change by CC2Vec cosine.

    With the query's code tokens, the top-k candidates are re-ranked by
    BLEU-4 between their code and the query code (ties: higher cosine,
    then index order).
    """
    if len(index) == 0:
        raise CorpusError("retrieval index is empty")
    return _two_stage(query.id, index.vector_cosines(query.vector), index, k, query_code_tokens)


def nngen_baseline(query_code_tokens: Sequence[str], index: RetrievalIndex, k: int = 5,
                   query_id: str = "") -> RetrievalResult:
    """Same two-stage procedure with term-frequency bags of code tokens in stage one."""
    if len(index) == 0:
        raise CorpusError("retrieval index is empty")
    return _two_stage(query_id, index.bag_cosines(query_code_tokens), index, k, query_code_tokens)


# Classification

@dataclass
class ClassificationReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: Optional[float]
    auc_error: Optional[str] = None

    def to_dict(self) -> Dict:
        return {"accuracy": self.accuracy, "precision": self.precision, "recall": self.recall,
                "f1": self.f1, "auc": self.auc, "auc_error": self.auc_error}


def classification_metrics(labels: Sequence[int], scores: Sequence[float],
                           threshold: float = 0.5) -> ClassificationReport:
    """Accuracy, precision, recall and F1 at ``threshold``; ROC AUC over all thresholds."""
    if len(labels) != len(scores):
        raise ShapeError(f"{len(labels)} labels for {len(scores)} scores")
    if not len(labels):
        raise MetricError("no predictions to evaluate")
    y_true = np.asarray(labels, dtype=int)
    y_score = np.asarray(scores, dtype=np.float64)
    y_pred = (y_score >= threshold).astype(int)

    auc, auc_error = None, None
    if len(np.unique(y_true)) < 2:
        auc_error = "AUC is undefined when only one class is present"
        logger.warning(auc_error)
    else:
        auc = float(roc_auc_score(y_true, y_score))

    return ClassificationReport(
        accuracy=float(accuracy_score(y_true, y_pred)),
        precision=float(precision_score(y_true, y_pred, zero_division=0)),
        recall=float(recall_score(y_true, y_pred, zero_division=0)),
        f1=float(f1_score(y_true, y_pred, zero_division=0)),
        auc=auc,
        auc_error=auc_error,
    )


def linear_classifier(train_records: Sequence[EmbeddingRecord], train_labels: Sequence[int],
                      test_records: Sequence[EmbeddingRecord], seed: int = 0) -> np.ndarray:
    """Fit a logistic regression on vectors and return positive-class scores for the test set."""
    classifier = LogisticRegression(max_iter=1000, random_state=seed)
    classifier.fit(np.stack([r.vector for r in train_records]), np.asarray(train_labels))
    return classifier.predict_proba(np.stack([r.vector for r in test_records]))[:, 1]


# Feature export

def _check_uniform(records: Sequence[EmbeddingRecord]) -> int:
    widths = {len(r.vector) for r in records}
    if len(widths) > 1:
        raise ShapeError(f"embedding records have mixed widths: {sorted(widths)}")
    return widths.pop() if widths else 0


def merge_features(records: Sequence[EmbeddingRecord],
                   extra: Dict[str, Sequence[float]]) -> List[EmbeddingRecord]:
    """Append external per-patch features (keyed by patch id) to each code change vector."""
    merged = []
    for record in records:
        if record.id not in extra:
            raise CorpusError(f"no external features for patch {record.id!r}")
        vector = np.concatenate([record.vector, np.asarray(extra[record.id], dtype=record.vector.dtype)])
        merged.append(EmbeddingRecord(record.id, vector))
    _check_uniform(merged)
    return merged


def export_features(records: Sequence[EmbeddingRecord], path: Union[str, Path],
                    format: str = "jsonl") -> Path:
    width = _check_uniform(records)
    path = Path(path)
    if format == "jsonl":
        with open(path, "w", encoding="utf-8") as f:
            for record in records:
                f.write(json.dumps({"id": record.id, "vector": [float(v) for v in record.vector]}) + "\n")
    elif format == "csv":
        frame = pd.DataFrame([[float(v) for v in r.vector] for r in records],
                             columns=[f"v{i}" for i in range(width)])
        frame.insert(0, "id", [r.id for r in records])
        frame.to_csv(path, index=False)
    else:
        raise ConfigurationError(f"unknown export format {format!r}; use 'jsonl' or 'csv'")
    logger.info("Exported %d vectors of width %d to %s", len(records), width, path)
    return path


def load_features(path: Union[str, Path]) -> List[EmbeddingRecord]:
    """Read vectors written by export_features (JSON lines or CSV)."""
    path = Path(path)
    if path.suffix == ".csv":
        frame = pd.read_csv(path, dtype={"id": str})
        vectors = frame.drop(columns=["id"]).to_numpy(dtype=np.float32)
        return [EmbeddingRecord(str(i), v) for i, v in zip(frame["id"], vectors)]
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                data = json.loads(line)
                records.append(EmbeddingRecord(data["id"], np.asarray(data["vector"], dtype=np.float32)))
    return records
