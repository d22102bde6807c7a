import numpy as np
import pytest

from dchanet.checkpoint import MAGIC, load_arrays, load_model, save_arrays, save_model
from dchanet.errors import CheckpointError
from dchanet.model import ModelConfig, build_model


def test_arrays_round_trip(tmp_path):
    arrays = {"a": np.arange(6.0).reshape(2, 3), "b": np.array(1.5), "c": np.zeros(0)}
    save_arrays(tmp_path / "x.ckpt", arrays, {"note": "hi"})
    back, meta = load_arrays(tmp_path / "x.ckpt")
    assert meta == {"note": "hi"}
    assert list(back) == ["a", "b", "c"]
    for k in arrays:
        assert np.array_equal(back[k], arrays[k]) and back[k].shape == arrays[k].shape


@pytest.mark.parametrize("variant", ["full", "baseline", "corr_local"])
def test_model_round_trip(tmp_path, variant):
    m = build_model(ModelConfig.variant(variant, seed=3))
    save_model(tmp_path / "m.ckpt", m)
    m2 = load_model(tmp_path / "m.ckpt")
    assert m2.cfg == m.cfg
    a, b = m.named_parameters(), m2.named_parameters()
    assert list(a) == list(b)
    assert all(np.array_equal(a[k].data, b[k].data) for k in a)


def test_identical_bytes(tmp_path):
    save_model(tmp_path / "a.ckpt", build_model(ModelConfig(seed=1)))
    save_model(tmp_path / "b.ckpt", build_model(ModelConfig(seed=1)))
    raw = (tmp_path / "a.ckpt").read_bytes()
    assert raw == (tmp_path / "b.ckpt").read_bytes()
    assert raw.startswith(MAGIC + b"\n")


def test_missing(tmp_path):
    with pytest.raises(CheckpointError, match="missing.ckpt"):
        load_model(tmp_path / "missing.ckpt")


def test_truncated(tmp_path):
    p = save_model(tmp_path / "t.ckpt", build_model())
    p.write_bytes(p.read_bytes()[:-100])
    with pytest.raises(CheckpointError, match="truncated"):
        load_model(p)


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"hello\n{}\n")
    with pytest.raises(CheckpointError):
        load_arrays(p)
