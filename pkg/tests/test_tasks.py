# tests/test_tasks.py
import json
import math
import random
from collections import Counter

import numpy as np
import pandas as pd
import pytest

from ccvec.corpus import PatchChange
from ccvec.errors import ConfigurationError, CorpusError, MetricError, ShapeError
from ccvec.tasks import (
    EmbeddingRecord,
    IndexEntry,
    RetrievalIndex,
    bleu4,
    classification_metrics,
    corpus_bleu4,
    export_features,
    extract_embeddings,
    linear_classifier,
    load_features,
    merge_features,
    nngen_baseline,
    retrieve_message,
)
from ccvec.train import train_model


def reference_bleu4(candidate, reference):
    """Straight evaluation of BLEU-4: geometric mean of clipped n-gram precisions times brevity penalty.

    Orders longer than the candidate are left out of the mean.
    """
    if not candidate:
        return 0.0
    log_sum, orders = 0.0, 0
    for n in range(1, 5):
        cand = [tuple(candidate[i:i + n]) for i in range(len(candidate) - n + 1)]
        if not cand:
            break
        ref = Counter(tuple(reference[i:i + n]) for i in range(len(reference) - n + 1))
        matched = sum(min(count, ref[gram]) for gram, count in Counter(cand).items())
        if matched == 0:
            return 0.0
        log_sum += math.log(matched / len(cand))
        orders += 1
    c, r = len(candidate), len(reference)
    penalty = 1.0 if c > r else math.exp(1 - r / c)
    return 100.0 * penalty * math.exp(log_sum / orders)


def test_bleu_identical():
    tokens = "fix null check here".split()
    assert bleu4(tokens, tokens) == 100.0
    assert bleu4(["fix"], ["fix"]) == 100.0
    assert corpus_bleu4([tokens, ["fix"]], [tokens, ["fix"]]) == 100.0


def test_bleu_stays_within_range():
    rng = random.Random(11)
    words = ["fix", "add", "leak", "null", "check"]
    for _ in range(50):
        reference = [rng.choice(words) for _ in range(rng.randint(1, 8))]
        candidate = [rng.choice(words) for _ in range(rng.randint(1, 8))]
        assert 0.0 <= bleu4(candidate, reference) <= 100.0
        assert 0.0 <= bleu4(reference, reference) <= 100.0


def test_bleu_empty_inputs():
    assert bleu4([], ["fix", "leak"]) == 0.0
    with pytest.raises(MetricError):
        bleu4(["fix"], [])


def test_bleu_matches_reference_implementation():
    rng = random.Random(7)
    words = ["fix", "add", "leak", "null", "check", "the", "in", "parser"]
    checked_positive = 0
    for i in range(20):
        reference = [rng.choice(words) for _ in range(rng.randint(6, 12))]
        candidate = [rng.choice(words) for _ in range(rng.randint(1, 12))]
        if i % 2 == 0:
            candidate = reference[rng.randint(0, 2):] + candidate[:3]
        expected = reference_bleu4(candidate, reference)
        assert bleu4(candidate, reference) == pytest.approx(expected, abs=1e-6)
        checked_positive += expected > 0
    assert checked_positive >= 10


def test_bleu_is_invariant_under_renaming():
    candidate = "a b c a d".split()
    reference = "a b c d d a".split()
    rename = {"a": "w", "b": "x", "c": "y", "d": "z"}
    renamed = bleu4([rename[t] for t in candidate], [rename[t] for t in reference])
    assert renamed == pytest.approx(bleu4(candidate, reference))


def test_corpus_bleu():
    pairs = [("fix the leak".split(), "fix the leak".split()), ("add cache".split(), "add cache".split())]
    assert corpus_bleu4([c for c, _ in pairs], [r for _, r in pairs]) == 100.0
    # counts are pooled before combining, so this differs from the mean of sentence scores
    candidates = ["fix leak now".split(), "add".split()]
    references = ["fix leak now".split(), "remove cache entry".split()]
    pooled = corpus_bleu4(candidates, references)
    assert 0 < pooled < 100
    with pytest.raises(ShapeError):
        corpus_bleu4(candidates, references[:1])


def entry(id, vector, message, code):
    return IndexEntry(id, np.asarray(vector, dtype=np.float32), message, message.split(), code)


@pytest.fixture
def toy_index():
    return RetrievalIndex([
        entry("first", [1.0, 0.0], "fix leak", ["a", "b"]),
        entry("second", [0.6, 0.8], "add cache", ["c"]),
        entry("third", [0.0, 1.0], "remove race", ["d"]),
    ])


def test_vector_cosines(toy_index):
    assert toy_index.vector_cosines(np.array([1.0, 0.0])).tolist() == pytest.approx([1.0, 0.6, 0.0])
    assert toy_index.vector_cosines(np.zeros(2)).tolist() == [0.0, 0.0, 0.0]
    with pytest.raises(ShapeError):
        toy_index.vector_cosines(np.ones(3))


def test_retrieve_nearest(toy_index):
    result = retrieve_message(EmbeddingRecord("q", np.array([1.0, 0.0])), toy_index, k=1)
    assert result.message_tokens == ["fix", "leak"]
    assert result.chosen_id == "first"
    assert result.cosine == pytest.approx(1.0)
    assert result.bleu_stage2 is None


def test_retrieve_self_with_full_k(toy_index):
    for position, item in enumerate(toy_index.entries):
        result = retrieve_message(EmbeddingRecord(item.id, item.vector), toy_index, k=len(toy_index),
                                  query_code_tokens=item.code_tokens)
        assert result.chosen_id == item.id, position


def test_retrieve_bleu_stage_reranks(toy_index):
    # "second" is slightly less similar by cosine but its code matches exactly
    query = EmbeddingRecord("q", np.array([0.9, 0.3]))
    assert retrieve_message(query, toy_index, k=1, query_code_tokens=["c"]).chosen_id == "first"
    result = retrieve_message(query, toy_index, k=2, query_code_tokens=["c"])
    assert result.chosen_id == "second"
    assert result.bleu_stage2 == pytest.approx(100.0)
    assert json.loads(json.dumps(result.to_dict())) == {
        "query_id": "q", "chosen_id": "second", "message": "add cache",
        "cosine": pytest.approx(result.cosine), "bleu_stage2": pytest.approx(100.0),
    }


def test_retrieve_single_entry_and_empty_index():
    single = RetrievalIndex([entry("only", [0.0, 1.0], "fix it", ["x"])])
    assert retrieve_message(EmbeddingRecord("q", np.array([1.0, 0.0])), single).message == "fix it"
    with pytest.raises(CorpusError):
        retrieve_message(EmbeddingRecord("q", np.array([1.0, 0.0])), RetrievalIndex([]))
    with pytest.raises(CorpusError):
        nngen_baseline(["a"], RetrievalIndex([]))
    with pytest.raises(ConfigurationError):
        retrieve_message(EmbeddingRecord("q", np.array([1.0, 0.0])), single, k=0)


def test_index_rejects_mixed_widths():
    with pytest.raises(ShapeError):
        RetrievalIndex([entry("a", [1.0, 0.0], "x", []), entry("b", [1.0], "y", [])])


def test_nngen_bag_cosine():
    index = RetrievalIndex([entry("a", [1.0], "fix a", ["a"]), entry("b", [1.0], "fix b", ["b"])])
    assert index.bag_cosines(["a", "a"]).tolist() == pytest.approx([1.0, 0.0])
    assert nngen_baseline(["a", "a"], index, k=1).chosen_id == "a"
    assert nngen_baseline(["a", "a"], index, k=2).chosen_id == "a"


def test_nngen_identical_query():
    index = RetrievalIndex([
        entry("a", [1.0], "fix a", ["x", "=", "1"]),
        entry("b", [1.0], "fix b", ["x", "=", "2"]),
    ])
    result = nngen_baseline(["x", "=", "2"], index, k=2, query_id="q")
    assert (result.query_id, result.chosen_id) == ("q", "b")


def test_nngen_unseen_tokens_lower_the_cosine():
    index = RetrievalIndex([entry("a", [1.0], "fix a", ["a"])])
    assert index.bag_cosines(["a", "zzz"]).tolist() == pytest.approx([1 / math.sqrt(2)])


def test_nngen_disjoint_bags_fall_through():
    index = RetrievalIndex([entry("a", [1.0], "fix a", ["a"]), entry("b", [1.0], "fix b", ["b"])])
    result = nngen_baseline(["q", "r"], index, k=2)
    assert result.cosine == 0.0
    assert result.bleu_stage2 == 0.0
    assert result.chosen_id == "a"


def test_index_build_skips_empty_messages(synthetic):
    records = [EmbeddingRecord(p.id, np.ones(3)) for p in synthetic]
    silent = PatchChange.create("", synthetic[0].files, id="silent")
    index = RetrievalIndex.build(records + [EmbeddingRecord("silent", np.ones(3))], synthetic + [silent])
    assert len(index) == len(synthetic)
    with pytest.raises(CorpusError):
        RetrievalIndex.build([EmbeddingRecord("missing", np.ones(3))], synthetic)


def test_extract_embeddings_is_deterministic(synthetic, tiny_config):
    result = train_model(synthetic, tiny_config)
    corpus = [synthetic[0], synthetic[0], PatchChange.create("x", [], id="e1"), PatchChange.create("y", [], id="e2")]
    records = extract_embeddings(result.model, corpus, result.code_vocab, tiny_config.shape,
                                 batch_size=3, with_files=True)
    assert [r.id for r in records] == [synthetic[0].id, synthetic[0].id, "e1", "e2"]
    assert np.allclose(records[0].vector, records[1].vector, rtol=0, atol=1e-6)
    assert np.allclose(records[2].vector, records[3].vector, rtol=0, atol=1e-6)
    assert records[0].vector.shape == (result.model.patch_dim,)
    assert records[0].file_vectors.shape == (tiny_config.shape.max_files, result.model.file_dim)


def test_classification_metrics_confusion_example():
    # TP=3, FN=2, FP=1, TN=4
    labels = [1, 1, 1, 1, 1, 0, 0, 0, 0, 0]
    scores = [0.9, 0.8, 0.7, 0.2, 0.1, 0.6, 0.3, 0.2, 0.1, 0.05]
    report = classification_metrics(labels, scores)
    assert report.accuracy == pytest.approx(0.7)
    assert report.precision == pytest.approx(0.75)
    assert report.recall == pytest.approx(0.6)
    assert report.f1 == pytest.approx(0.6667, abs=1e-4)


def test_classification_metrics_auc():
    perfect = classification_metrics([0, 0, 1, 1], [0.1, 0.2, 0.8, 0.9])
    assert (perfect.accuracy, perfect.precision, perfect.recall, perfect.f1, perfect.auc) == (1.0,) * 5
    tied = classification_metrics([0, 1, 0, 1], [0.5] * 4)
    assert tied.auc == pytest.approx(0.5)


def test_auc_invariant_under_monotone_transform():
    rng = np.random.default_rng(3)
    labels = rng.integers(0, 2, 50)
    labels[:2] = [0, 1]
    scores = rng.random(50)
    base = classification_metrics(labels, scores).auc
    assert classification_metrics(labels, np.exp(3 * scores) - 7).auc == pytest.approx(base)


def test_single_class_reports_auc_error():
    report = classification_metrics([1, 1, 1], [0.9, 0.4, 0.7])
    assert report.auc is None
    assert "one class" in report.auc_error
    assert report.accuracy == pytest.approx(2 / 3)
    with pytest.raises(ShapeError):
        classification_metrics([1, 0], [0.5])
    with pytest.raises(MetricError):
        classification_metrics([], [])


def test_linear_classifier_separates_classes():
    rng = np.random.default_rng(0)
    positives = [EmbeddingRecord(f"p{i}", rng.normal(2.0, 0.3, 4)) for i in range(20)]
    negatives = [EmbeddingRecord(f"n{i}", rng.normal(-2.0, 0.3, 4)) for i in range(20)]
    scores = linear_classifier(positives[:15] + negatives[:15], [1] * 15 + [0] * 15,
                          positives[15:] + negatives[15:])
    assert (scores[:5] > 0.5).all()
    assert (scores[5:] < 0.5).all()


def test_export_jsonl(tmp_path):
    records = [EmbeddingRecord("a", np.arange(4, dtype=np.float32)),
               EmbeddingRecord("b", np.ones(4, dtype=np.float32))]
    path = export_features(records, tmp_path / "vectors.jsonl")
    lines = path.read_text().splitlines()
    assert len(lines) == 2
    first = json.loads(lines[0])
    assert first == {"id": "a", "vector": [0.0, 1.0, 2.0, 3.0]}
    assert [r.id for r in load_features(path)] == ["a", "b"]


def test_export_csv(tmp_path):
    records = [EmbeddingRecord("a", np.arange(4, dtype=np.float32)),
               EmbeddingRecord("007", np.ones(4, dtype=np.float32))]
    path = export_features(records, tmp_path / "vectors.csv", format="csv")
    assert path.read_text().splitlines()[0] == "id,v0,v1,v2,v3"
    assert list(pd.read_csv(path, dtype={"id": str})["id"]) == ["a", "007"]
    loaded = load_features(path)
    assert np.array_equal(loaded[0].vector, records[0].vector)


def test_export_errors(tmp_path):
    mixed = [EmbeddingRecord("a", np.zeros(4)), EmbeddingRecord("b", np.zeros(3))]
    with pytest.raises(ShapeError):
        export_features(mixed, tmp_path / "out.jsonl")
    with pytest.raises(ConfigurationError):
        export_features(mixed[:1], tmp_path / "out.parquet", format="parquet")


def test_merge_features():
    records = [EmbeddingRecord("a", np.zeros(2, dtype=np.float32)), EmbeddingRecord("b", np.ones(2, dtype=np.float32))]
    merged = merge_features(records, {"a": [5.0], "b": [6.0]})
    assert merged[1].vector.tolist() == [1.0, 1.0, 6.0]
    with pytest.raises(CorpusError):
        merge_features(records, {"a": [5.0]})
