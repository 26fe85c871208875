"""
Byte tokenizer and corpus windows
"""

import numpy as np
import pytest

from attnlab.core.errors import CorpusError, VocabularyError
from attnlab.ml.corpus import BOS, Corpus, decode, encode, ingest_corpus, window_count, windows


def test_encode_prepends_bos():
    np.testing.assert_array_equal(encode("ab"), [BOS, 97, 98])
    np.testing.assert_array_equal(encode(b"\xff"), [BOS, 255])


def test_decode_drops_bos():
    assert decode(encode("héllo")) == "héllo".encode("utf-8")
    assert decode([BOS, BOS]) == b""


def test_decode_rejects_unknown_ids():
    with pytest.raises(VocabularyError):
        decode([1, 257])


def test_windows_shift_targets_by_one():
    tokens = np.arange(12)
    inputs, targets = windows(tokens, 5)
    assert window_count(12, 5) == 2
    np.testing.assert_array_equal(inputs, [[0, 1, 2, 3, 4], [5, 6, 7, 8, 9]])
    np.testing.assert_array_equal(targets, inputs + 1)


def test_corpus_split_keeps_last_windows_for_validation():
    corpus = Corpus.from_tokens(np.arange(101), seq_len=10, val_fraction=0.1)
    assert (corpus.n_train, corpus.n_val) == (9, 1)
    np.testing.assert_array_equal(corpus.val_tokens(), np.arange(90, 101))


def test_train_batches_come_from_training_windows(rng):
    corpus = Corpus.from_tokens(np.arange(101), seq_len=10, val_fraction=0.2)
    inputs, targets = corpus.train_batch(rng, 64)
    assert inputs.shape == (64, 10)
    assert inputs.max() < 80
    np.testing.assert_array_equal(targets, inputs + 1)


def test_val_batches_respect_limit():
    corpus = Corpus.from_tokens(np.arange(201), seq_len=10, val_fraction=0.3)
    batches = list(corpus.val_batches(batch_size=2, limit=2))
    assert [len(inputs) for inputs, _ in batches] == [2, 2]
    assert sum(len(inputs) for inputs, _ in corpus.val_batches(batch_size=4)) == corpus.n_val


def test_corpus_too_small_to_split():
    with pytest.raises(CorpusError):
        Corpus.from_tokens(np.arange(11), seq_len=10)


def test_ingest_errors(tmp_path):
    with pytest.raises(CorpusError):
        ingest_corpus(tmp_path / "missing.txt")
    empty = tmp_path / "empty.txt"
    empty.write_bytes(b"")
    with pytest.raises(CorpusError):
        ingest_corpus(empty)


def test_ingest_reads_bytes(tmp_path):
    path = tmp_path / "corpus.txt"
    path.write_bytes(b"abc")
    np.testing.assert_array_equal(ingest_corpus(path), [BOS, 97, 98, 99])
