import json

import pytest

from xfer.checkpoint import load_checkpoint
from xfer.cli import main
from xfer.data import load_dataset
from xfer.tokenizer import load_vocab


@pytest.fixture
def workdir(tmp_path, config_file):
    """A generated language with vocab and embeddings trained through the CLI"""
    cfg = ["--config", str(config_file)]
    lang = tmp_path / "lang"
    assert main(cfg + ["generate-language", "--lexicon-size", "12", "--corpus-size", "60",
                       "--dataset-size", "40", "--sibling-seed", "2", "--out-dir", str(lang)]) == 0
    assert main(cfg + ["train-tokenizer", "--corpus", str(lang / "corpus.txt"), "--vocab-size", "80",
                       "--out", str(tmp_path / "vocab.txt")]) == 0
    assert main(cfg + ["train-embeddings", "--corpus", str(lang / "corpus.txt"), "--vocab",
                       str(tmp_path / "vocab.txt"), "--epochs", "1", "--out", str(tmp_path / "emb.txt")]) == 0
    return tmp_path, cfg


def test_generate_language_writes_corpus_dataset_and_pairs(workdir):
    tmp_path, _ = workdir
    lang = tmp_path / "lang"
    assert len((lang / "corpus.txt").read_text(encoding="utf-8").splitlines()) == 60
    assert len(load_dataset(str(lang / "dataset.jsonl"))) == 40
    pairs = (lang / "parallel.tsv").read_text(encoding="utf-8").splitlines()
    assert pairs and all(line.count("\t") == 1 for line in pairs)


def test_pretrain_transfer_finetune_chain(workdir):
    tmp_path, cfg = workdir
    lang = tmp_path / "lang"
    vocab = str(tmp_path / "vocab.txt")
    assert main(cfg + ["pretrain", "--corpus", str(lang / "corpus.txt"), "--vocab", vocab,
                       "--objective", "mlm", "--steps", "2", "--out", str(tmp_path / "mlm.npz")]) == 0
    assert main(cfg + ["pretrain", "--corpus", str(lang / "corpus.txt"), "--vocab", vocab, "--objective", "tlm",
                       "--parallel", str(lang / "parallel.tsv"), "--steps", "2",
                       "--out", str(tmp_path / "tlm.npz")]) == 0
    assert main(cfg + ["transfer", "--checkpoint", str(tmp_path / "mlm.npz"), "--vocab", vocab,
                       "--embeddings", str(tmp_path / "emb.txt"), "--out", str(tmp_path / "swapped.npz")]) == 0
    swapped = load_checkpoint(str(tmp_path / "swapped.npz"))
    assert swapped.vocab_hash == load_vocab(vocab).hash

    report = tmp_path / "ft" / "report.json"
    assert main(cfg + ["finetune", "--checkpoint", str(tmp_path / "swapped.npz"), "--vocab", vocab,
                       "--train", str(lang / "dataset.jsonl"), "--dev", str(lang / "dataset.jsonl"),
                       "--freeze", "token_embeddings", "--epochs", "1", "--out", str(tmp_path / "ft.npz"),
                       "--report", str(report)]) == 0
    data = json.loads(report.read_text())
    assert data["freeze"] == "token_embeddings"
    assert len(data["history"]) == 1
    assert 0.0 <= data["dev_f1"] <= 1.0


def test_finetune_refuses_a_foreign_vocabulary(workdir):
    tmp_path, cfg = workdir
    lang = tmp_path / "lang"
    assert main(cfg + ["pretrain", "--corpus", str(lang / "corpus.txt"), "--vocab", str(tmp_path / "vocab.txt"),
                       "--objective", "mlm", "--steps", "1", "--out", str(tmp_path / "mlm.npz")]) == 0
    other = tmp_path / "other_corpus.txt"
    other.write_text("zorro quiz\nquick zoo\n")
    assert main(cfg + ["train-tokenizer", "--corpus", str(other), "--vocab-size", "20",
                       "--out", str(tmp_path / "other.txt")]) == 0
    assert main(cfg + ["finetune", "--checkpoint", str(tmp_path / "mlm.npz"), "--vocab", str(tmp_path / "other.txt"),
                       "--train", str(lang / "dataset.jsonl"), "--out", str(tmp_path / "ft.npz")]) == 1
    assert not (tmp_path / "ft.npz").exists()


def test_augment_adds_copies(workdir):
    tmp_path, cfg = workdir
    out = tmp_path / "augmented.jsonl"
    assert main(cfg + ["augment", "--in", str(tmp_path / "lang" / "dataset.jsonl"), "--vocab",
                       str(tmp_path / "vocab.txt"), "--embeddings", str(tmp_path / "emb.txt"),
                       "--copies", "1", "--out", str(out)]) == 0
    assert len(load_dataset(str(out))) == 80


def test_experiment_runs_a_grid(tmp_path, config_file):
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps([{"cell_id": "tiny", "train_size": 10, "seeds": [0]}]))
    out = tmp_path / "results"
    assert main(["--config", str(config_file), "experiment", "--grid", str(grid), "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["cells"][0]["cell_id"] == "tiny"
    assert (out / "run_log.json").exists()


def test_missing_input_returns_error_code(config_file, tmp_path):
    assert main(["--config", str(config_file), "train-tokenizer", "--corpus", str(tmp_path / "nope.txt"),
                 "--out", str(tmp_path / "v.txt")]) == 1


def test_size_sweep_grows_the_dataset_for_large_sizes(tmp_path, config_file):
    cell = tmp_path / "cell.json"
    cell.write_text(json.dumps({"cell_id": "tiny"}))
    out = tmp_path / "sweep"
    # the configured dataset leaves a pool of 30 examples
    assert main(["--config", str(config_file), "size-sweep", "--cell", str(cell), "--sizes", "10,45",
                 "--seeds", "1", "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert [c["cell_id"] for c in report["cells"]] == ["tiny@10", "tiny@45"]
    assert [c["seeds"][0]["train_examples"] for c in report["cells"]] == [10, 45]
