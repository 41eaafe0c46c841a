import numpy as np
import pytest

from xfer.augment import AugmentConfig, Augmenter, augment_dataset, synonym_candidates
from xfer.data import LabeledExample
from xfer.embeddings import EmbeddingError, EmbeddingTable, nearest_neighbors, random_table
from xfer.seeding import derive_rng
from xfer.tokenizer import N_SPECIALS, WORD_BOUNDARY, encode, train_vocab

TEXT = "the cat sat on the mat"


@pytest.fixture
def data():
    return [LabeledExample(TEXT, 1), LabeledExample("a dog and a log", 0)]


@pytest.fixture
def synonym_table(vocab):
    """Table in which one boundary token of TEXT has a close boundary twin and a close non-boundary twin"""
    ids = encode(vocab, TEXT, add_cls_sep=False).ids
    source = next(t for t in ids if vocab.tokens[t].startswith(WORD_BOUNDARY))
    boundary = [i for i in range(N_SPECIALS, len(vocab))
                if vocab.tokens[i].startswith(WORD_BOUNDARY) and i not in ids]
    inner = [i for i in range(N_SPECIALS, len(vocab))
             if not vocab.tokens[i].startswith(WORD_BOUNDARY) and i not in ids]
    twin, other = boundary[0], inner[0]
    matrix = derive_rng(0, "test").normal(size=(len(vocab), 32))
    matrix[twin] = matrix[source] + 0.01
    matrix[other] = matrix[source] - 0.01
    return EmbeddingTable(matrix=matrix, vocab_hash=vocab.hash), source, twin, other


def test_candidates_respect_cosine_and_boundary(vocab, synonym_table):
    table, source, twin, other = synonym_table
    cfg = AugmentConfig(min_cosine=0.9, k_candidates=5)
    assert synonym_candidates(table, vocab, source, cfg) == [twin]
    assert synonym_candidates(table, vocab, 2, cfg) == []
    assert synonym_candidates(table, vocab, source, AugmentConfig(k_candidates=0)) == []


def test_replacement_uses_the_twin(vocab, synonym_table, data):
    table, source, twin, _ = synonym_table
    cfg = AugmentConfig(replace_prob=1.0, min_cosine=0.9, copies_per_example=1)
    out = augment_dataset(data[:1], table, vocab, cfg, derive_rng(0, "augment"))
    assert out[0] == data[0]
    assert out[1].origin == "augmented" and out[1].label == 1
    assert vocab.tokens[twin].replace(WORD_BOUNDARY, " ") in out[1].text
    assert out[1].text != TEXT


def test_originals_come_first_and_labels_follow(vocab, data):
    table = random_table(vocab, 8, seed=0)
    out = augment_dataset(data, table, vocab, AugmentConfig(copies_per_example=2), derive_rng(0))
    assert out[:2] == data
    assert len(out) == 6
    assert [ex.label for ex in out[2:]] == [1, 1, 0, 0]
    assert all(ex.origin == "augmented" for ex in out[2:])


def test_no_copies_returns_the_input(vocab, data):
    out = augment_dataset(data, random_table(vocab, 8, seed=0), vocab, AugmentConfig(), derive_rng(0))
    assert out == data


def test_zero_probability_keeps_exact_text(vocab, data):
    cfg = AugmentConfig(replace_prob=0.0, copies_per_example=1, ops_enabled=("synonym_replacement", "random_swap"))
    out = augment_dataset(data, random_table(vocab, 8, seed=0), vocab, cfg, derive_rng(0))
    assert [ex.text for ex in out[2:]] == [ex.text for ex in data]


def test_augmentation_is_reproducible(vocab, synonym_table, data):
    table = synonym_table[0]
    cfg = AugmentConfig(replace_prob=0.5, min_cosine=0.0, copies_per_example=3, ops_enabled=("synonym_replacement",
                                                                                             "random_swap"))
    a = augment_dataset(data, table, vocab, cfg, derive_rng(4, "augment"))
    b = augment_dataset(data, table, vocab, cfg, derive_rng(4, "augment"))
    assert a == b


def test_swap_keeps_the_characters(vocab, data):
    cfg = AugmentConfig(replace_prob=1.0, copies_per_example=1, ops_enabled=("random_swap",))
    out = augment_dataset(data, random_table(vocab, 8, seed=0), vocab, cfg, derive_rng(1))
    for original, augmented in zip(data, out[2:]):
        assert sorted(augmented.text) == sorted(original.text)


def test_deletion_never_empties_a_text(vocab):
    cfg = AugmentConfig(replace_prob=1.0, copies_per_example=2, ops_enabled=("random_deletion",))
    out = augment_dataset([LabeledExample("the mat", 0)], random_table(vocab, 8, seed=0), vocab, cfg, derive_rng(2))
    assert all(ex.text for ex in out)


def test_invalid_settings(vocab, data):
    table = random_table(vocab, 8, seed=0)
    with pytest.raises(ValueError):
        augment_dataset(data, table, vocab, AugmentConfig(ops_enabled=("back_translation",)), derive_rng(0))
    with pytest.raises(ValueError):
        augment_dataset(data, table, vocab, AugmentConfig(replace_prob=1.5), derive_rng(0))
    with pytest.raises(EmbeddingError):
        augment_dataset(data, random_table(train_vocab(["xy"], 10), 8, seed=0), vocab, AugmentConfig(), derive_rng(0))


def test_replacements_come_from_the_neighbor_set(vocab):
    table = random_table(vocab, 8, seed=3)
    cfg = AugmentConfig(replace_prob=0.5, min_cosine=-1.0, k_candidates=5)
    augmenter = Augmenter(table, vocab, cfg, derive_rng(5, "augment"))
    ids = encode(vocab, TEXT + " and a dog", add_cls_sep=False).ids
    allowed = {t: {t} | {other for other, _ in nearest_neighbors(table, t, 5)} for t in ids}
    changed = 0
    for _ in range(1000):
        out = augmenter.synonym_replacement(ids)
        assert len(out) == len(ids)
        assert all(new in allowed[old] for old, new in zip(ids, out))
        changed += out != ids
    assert changed > 0
