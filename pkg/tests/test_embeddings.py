import numpy as np
import pytest

from xfer import autodiff as ad
from xfer.embeddings import (EmbeddingError, EmbeddingTable, SgnsConfig, build_pairs, load_embeddings,
                             nearest_neighbors, random_table, save_embeddings, sgns_loss_and_grads, train_sgns)
from xfer.tokenizer import N_SPECIALS, encode, train_vocab


@pytest.fixture
def encoded(corpus, vocab):
    return [encode(vocab, line, add_cls_sep=False).ids for line in corpus * 4]


def test_sgns_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    u, v, negs = rng.normal(size=4), rng.normal(size=4), rng.normal(size=(3, 4))
    _, gu, gv, gn = sgns_loss_and_grads(u, v, negs)
    assert ad.relative_error(gu, ad.numerical_gradient(lambda x: sgns_loss_and_grads(x, v, negs)[0], u)) < 1e-6
    assert ad.relative_error(gv, ad.numerical_gradient(lambda x: sgns_loss_and_grads(u, x, negs)[0], v)) < 1e-6
    assert ad.relative_error(gn, ad.numerical_gradient(lambda x: sgns_loss_and_grads(u, v, x)[0], negs)) < 1e-6


def test_window_one_pairs_neighbors_and_skips_specials():
    pairs = list(build_pairs([[2, 5, 6, 7, 3]], 1, np.random.default_rng(0)))
    assert pairs == [(5, 6), (6, 5), (6, 7), (7, 6)]


def test_pairs_match_an_exhaustive_enumeration():
    rng = np.random.default_rng(8)
    seq = [int(t) for t in rng.integers(0, 30, size=50)]
    window = 3
    pairs = list(build_pairs([seq], window, np.random.default_rng(2)))

    draws = np.random.default_rng(2)
    ids = [t for t in seq if t >= N_SPECIALS]
    expected = []
    for i in range(len(ids)):
        w = int(draws.integers(1, window + 1))
        for j in range(len(ids)):
            if 0 < abs(i - j) <= w:
                expected.append((ids[i], ids[j]))
    assert pairs == expected


def test_nearest_neighbors_match_an_exhaustive_scan():
    matrix = np.random.default_rng(6).normal(size=(100, 6))
    table = EmbeddingTable(matrix=matrix, vocab_hash=bytes(16))
    for query in range(N_SPECIALS, 100):
        scored = []
        for other in range(N_SPECIALS, 100):
            if other != query:
                cos = float(matrix[query] @ matrix[other] / (np.linalg.norm(matrix[query]) * np.linalg.norm(matrix[other])))
                scored.append((-cos, other))
        expected = sorted(scored)[:10]
        result = nearest_neighbors(table, query, 10)
        assert [i for i, _ in result] == [other for _, other in expected]
        np.testing.assert_allclose([c for _, c in result], [-c for c, _ in expected], atol=1e-12)


def test_training_is_reproducible_and_lowers_loss(encoded, vocab):
    cfg = SgnsConfig(window=2, negatives=3, epochs=6, lr=0.05, subsample_threshold=0.0, batch_pairs=16, seed=4)
    a = train_sgns(encoded, vocab, 8, cfg)
    b = train_sgns(encoded, vocab, 8, cfg)
    np.testing.assert_array_equal(a.matrix, b.matrix)
    assert a.matrix.shape == (len(vocab), 8)
    assert len(a.loss_history) == 6
    assert a.loss_history[-1] < a.loss_history[0]
    a.check_bound(vocab)


def test_zero_epochs_returns_the_initial_table(encoded, vocab):
    table = train_sgns(encoded, vocab, 8, SgnsConfig(epochs=0))
    assert np.abs(table.matrix).max() <= 0.5 / 8
    assert table.loss_history == []


def test_corpus_without_pairs_is_rejected(vocab):
    single = encode(vocab, "cat", add_cls_sep=False).ids[:1]
    with pytest.raises(EmbeddingError, match="too small"):
        train_sgns([single], vocab, 4)


def test_ids_outside_vocab_are_rejected(vocab):
    with pytest.raises(EmbeddingError):
        train_sgns([[5, len(vocab)]], vocab, 4)


def _table(rows):
    matrix = np.vstack([np.full((5, 2), 0.3), np.array(rows, dtype=float)])
    return EmbeddingTable(matrix=matrix, vocab_hash=bytes(16))


def test_nearest_neighbors_order_and_exclusions():
    table = _table([[1.0, 0.0], [1.0, 0.1], [0.0, 1.0]])
    result = nearest_neighbors(table, 5, 2)
    assert [i for i, _ in result] == [6, 7]
    assert result[0][1] == pytest.approx(1 / np.sqrt(1.01))
    assert result[1][1] == pytest.approx(0.0)
    assert nearest_neighbors(table, 5, 0) == []


def test_nearest_neighbor_ties_go_to_smaller_id():
    table = _table([[1.0, 0.0], [0.0, 2.0], [0.0, 1.0]])
    assert [i for i, _ in nearest_neighbors(table, 5, 2)] == [6, 7]


def test_nearest_neighbors_bounds():
    table = _table([[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(EmbeddingError):
        nearest_neighbors(table, 5, table.size)
    with pytest.raises(EmbeddingError):
        nearest_neighbors(table, table.size, 1)


def test_saved_table_keeps_binding(tmp_path, vocab):
    table = random_table(vocab, 6, seed=2)
    path = tmp_path / "emb.bin"
    save_embeddings(table, str(path))
    loaded = load_embeddings(str(path))
    np.testing.assert_allclose(loaded.matrix, table.matrix, atol=1e-7)
    loaded.check_bound(vocab)


def test_corrupt_files_are_rejected(tmp_path, vocab):
    path = tmp_path / "emb.bin"
    save_embeddings(random_table(vocab, 4, seed=0), str(path))
    blob = path.read_bytes()
    path.write_bytes(blob[:-4])
    with pytest.raises(EmbeddingError):
        load_embeddings(str(path))
    path.write_bytes(b"NOTEMB" + blob[6:])
    with pytest.raises(EmbeddingError):
        load_embeddings(str(path))


def test_binding_to_another_vocab_fails(vocab):
    other = train_vocab(["xy zy"], 20)
    with pytest.raises(EmbeddingError):
        random_table(vocab, 4, seed=0).check_bound(other)


def test_non_finite_matrix_is_rejected():
    with pytest.raises(EmbeddingError):
        EmbeddingTable(matrix=np.array([[np.nan]]), vocab_hash=bytes(16))


@pytest.mark.slow
def test_interchangeable_tokens_become_neighbors():
    vocab = train_vocab(["abcdefghij"], 15)
    rng = np.random.default_rng(0)
    corpus = []
    for _ in range(3000):
        group = int(rng.integers(3))
        if group == 0:
            corpus.append([9, int(rng.choice([5, 6])), 7, 10])
        elif group == 1:
            corpus.append([11, 12, 13, 8])
        else:
            corpus.append([14, 13, 12, 11])
    table = train_sgns(corpus, vocab, 16, SgnsConfig(window=2, epochs=5, subsample_threshold=0.0, seed=0))
    assert nearest_neighbors(table, 5, 1)[0][0] == 6
    assert nearest_neighbors(table, 5, 1)[0][1] > 0.9
