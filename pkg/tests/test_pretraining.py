import numpy as np
import pytest

from xfer.model import ModelConfig, init_model
from xfer.pretraining import PretrainConfig, pretrain
from xfer.synthetic import GREEK, SyntheticLangSpec, generate_language
from xfer.tokenizer import encode, train_vocab

CFG = PretrainConfig(steps=3, batch_size=4, lr=1e-3, log_every=0)


@pytest.fixture
def sequences(corpus, vocab):
    return [encode(vocab, line, max_len=16).ids for line in corpus]


@pytest.fixture
def pairs(corpus, vocab):
    ids = [encode(vocab, line, add_cls_sep=False).ids for line in corpus]
    return list(zip(ids, ids[1:] + ids[:1]))


@pytest.mark.parametrize("objective", ["mlm", "plm"])
def test_pretraining_is_reproducible(tiny_params, sequences, objective):
    a, history_a = pretrain(tiny_params, sequences, objective, CFG, seed=1)
    b, history_b = pretrain(tiny_params, sequences, objective, CFG, seed=1)
    assert history_a == history_b
    assert len(history_a) == CFG.steps
    for name in a.tensors:
        np.testing.assert_array_equal(a.tensors[name], b.tensors[name])
    assert a.vocab_hash == tiny_params.vocab_hash


def test_pretraining_leaves_the_input_untouched(tiny_params, sequences):
    before = tiny_params.copy()
    trained, _ = pretrain(tiny_params, sequences, "mlm", CFG, seed=0)
    for name, arr in before.tensors.items():
        np.testing.assert_array_equal(tiny_params.tensors[name], arr)
    assert not np.array_equal(trained.tensors["mlm_head.bias"], before.tensors["mlm_head.bias"])
    # the classifier receives no gradient from the MLM loss
    np.testing.assert_array_equal(trained.tensors["cls_head.weight"], before.tensors["cls_head.weight"])


def test_tlm_trains_segment_embeddings(tiny_params, pairs):
    trained, history = pretrain(tiny_params, [], "tlm", CFG, seed=0, parallel=pairs)
    assert len(history) == CFG.steps
    assert not np.array_equal(trained.tensors["segment.weight"], tiny_params.tensors["segment.weight"])


def test_long_pairs_are_trimmed_to_fit(tiny_params):
    long = [([5] * 12, [6] * 12)]
    _, history = pretrain(tiny_params, [], "tlm", CFG, seed=0, parallel=long)
    assert np.isfinite(history).all()


def test_invalid_requests(tiny_params, sequences):
    with pytest.raises(ValueError):
        pretrain(tiny_params, sequences, "clm", CFG)
    with pytest.raises(ValueError):
        pretrain(tiny_params, sequences, "tlm", CFG)
    with pytest.raises(ValueError):
        pretrain(tiny_params, [], "mlm", CFG)
    with pytest.raises(ValueError):
        pretrain(tiny_params, [[2, 3]], "plm", CFG)


def test_zero_steps_returns_the_same_weights(tiny_params, sequences):
    trained, history = pretrain(tiny_params, sequences, "plm", PretrainConfig(steps=0), seed=0)
    assert history == []
    for name, arr in tiny_params.tensors.items():
        np.testing.assert_array_equal(trained.tensors[name], arr)


@pytest.fixture(scope="module")
def language():
    sibling = SyntheticLangSpec(lexicon_seed=3, token_alphabet=GREEK, corpus_size=600, dataset_size=0)
    return generate_language(SyntheticLangSpec(corpus_size=600, dataset_size=0), sibling=sibling)


@pytest.mark.slow
@pytest.mark.parametrize("objective", ["mlm", "tlm", "plm"])
def test_pretraining_lowers_the_loss(language, objective):
    if objective == "tlm":
        vocab = train_vocab(language.corpus + [tgt for _, tgt in language.parallel], 200)
        parallel = [(encode(vocab, src, add_cls_sep=False).ids, encode(vocab, tgt, add_cls_sep=False).ids)
                    for src, tgt in language.parallel]
        corpus = []
        n_tokens = sum(len(src) + len(tgt) for src, tgt in parallel)
    else:
        vocab = train_vocab(language.corpus, 200)
        parallel = None
        corpus = [encode(vocab, line, max_len=64).ids for line in language.corpus]
        n_tokens = sum(len(seq) for seq in corpus)
    assert n_tokens >= 4000
    cfg = ModelConfig(vocab_size=len(vocab), d_model=64, n_layers=2, n_heads=4, d_ff=128, max_seq_len=64, dropout=0.0)
    _, history = pretrain(init_model(cfg, seed=0), corpus, objective,
                          PretrainConfig(steps=200, batch_size=32, lr=5e-3, log_every=0), seed=0, parallel=parallel)
    assert history[0] == pytest.approx(np.log(len(vocab)), rel=0.15)
    assert np.mean(history[-20:]) < 0.9 * history[0]
