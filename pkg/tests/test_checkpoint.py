import struct

import numpy as np
import pytest

from npforge.checkpoint import (
    DIGEST_SIZE,
    MAGIC,
    Checkpoint,
    CheckpointError,
    _digest,
    decode,
    encode,
    load_checkpoint,
    load_model,
    save_checkpoint,
)
from npforge.models import build_model

HYPER = {"cnn": {"layers": 2, "channels": 8, "kernel_width": 5}, "density": 16}


@pytest.fixture
def saved(tmp_path):
    model = build_model("convnp", HYPER, seed=3)
    path = tmp_path / "m.ckpt"
    save_checkpoint(Checkpoint.from_model(model, epoch=4, objective="ML"), path)
    return model, path


def test_round_trip_is_byte_identical(saved, tmp_path):
    model, path = saved
    ck = load_checkpoint(path)
    save_checkpoint(ck, tmp_path / "again.ckpt")
    assert path.read_bytes() == (tmp_path / "again.ckpt").read_bytes()
    assert ck.meta == {"epoch": 4, "objective": "ML"}
    back = ck.to_model()
    for k, p in model.params.items():
        assert back.params[k].data.tobytes() == p.data.tobytes()


def test_special_values_survive(tmp_path):
    ck = Checkpoint("np", {}, {"a": np.array([-0.0, 5e-324, 1.7976931348623157e308, np.nan]), "s": np.array(2.5)})
    out = decode(encode(ck))
    assert out.params["a"].tobytes() == ck.params["a"].tobytes()
    assert out.params["s"].shape == ()


def test_truncated_file_fails_checksum(saved):
    _, path = saved
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(path)
    path.write_bytes(data[:5])
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(path)


def test_flipped_bit_fails_checksum(saved):
    _, path = saved
    data = bytearray(path.read_bytes())
    data[len(data) // 3] ^= 0x10
    with pytest.raises(CheckpointError, match="checksum"):
        decode(bytes(data))


def test_tag_mismatch(saved):
    _, path = saved
    assert load_model(path, expect_tag="convnp").tag == "convnp"
    with pytest.raises(CheckpointError, match="tag mismatch"):
        load_checkpoint(path, expect_tag="convcnp")


def test_version_mismatch(saved):
    _, path = saved
    body = bytearray(path.read_bytes()[:-DIGEST_SIZE])
    body[len(MAGIC):len(MAGIC) + 4] = struct.pack("<I", 99)
    with pytest.raises(CheckpointError, match="version 99"):
        decode(bytes(body) + _digest(bytes(body)))


def test_bad_magic():
    body = b"XXXX" + bytes(20)
    with pytest.raises(CheckpointError, match="magic"):
        decode(body + _digest(body))


def test_architecture_mismatch_on_restore():
    ck = Checkpoint.from_model(build_model("convcnp", HYPER))
    ck.params["cnn.in.w"] = ck.params["cnn.in.w"][:, :1]
    with pytest.raises(CheckpointError, match="cnn.in.w"):
        ck.to_model()
    del ck.params["cnn.in.b"]
    with pytest.raises(CheckpointError, match="names"):
        ck.to_model()


def test_missing_file_is_oserror(tmp_path):
    with pytest.raises(OSError):
        load_checkpoint(tmp_path / "nope.ckpt")


def test_atomic_write_leaves_no_temp(saved, tmp_path):
    assert sorted(p.name for p in tmp_path.iterdir()) == ["m.ckpt"]
