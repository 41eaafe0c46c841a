import numpy as np
import pytest

from xfer.checkpoint import (CheckpointError, checkpoint_bytes, diff_checkpoints, load_checkpoint,
                             parse_checkpoint, save_checkpoint)


def test_saved_checkpoint_restores_config_hash_and_tensors(tmp_path, tiny_params):
    path = tmp_path / "model.ckpt"
    save_checkpoint(tiny_params, str(path))
    loaded = load_checkpoint(str(path))
    assert loaded.config == tiny_params.config
    assert loaded.vocab_hash == tiny_params.vocab_hash
    assert set(loaded.tensors) == set(tiny_params.tensors)
    for name, arr in tiny_params.tensors.items():
        np.testing.assert_allclose(loaded.tensors[name], arr, atol=1e-7)
    # f32 storage: a second save is byte-identical
    assert checkpoint_bytes(loaded) == path.read_bytes()


def test_diff_reports_changed_groups(tiny_params):
    assert diff_checkpoints(tiny_params, tiny_params.copy()) == set()
    tensors = dict(tiny_params.tensors)
    tensors["blocks.0.ffn.out.bias"] = tensors["blocks.0.ffn.out.bias"] + 1.0
    tensors["mlm_head.decoder"] = np.zeros((8, 4))
    assert diff_checkpoints(tiny_params, tiny_params.replace(tensors)) == {"blocks.0", "mlm_head"}


def test_corrupt_checkpoints_are_rejected(tiny_params):
    blob = checkpoint_bytes(tiny_params)
    with pytest.raises(CheckpointError, match="magic"):
        parse_checkpoint(b"XXXXXXX" + blob[7:])
    with pytest.raises(CheckpointError, match="truncated"):
        parse_checkpoint(blob[:-3])
    with pytest.raises(CheckpointError, match="trailing"):
        parse_checkpoint(blob + b"\x00")
