import json

import numpy as np
import pytest

from rerec.checkpoint import fingerprint, load_checkpoint, read_header, save_checkpoint
from rerec.errors import FormatVersionError


def arrays():
    return {"w": np.arange(6.0).reshape(2, 3) / 7, "b": np.array([1.5, -2.0]), "s": np.array(3.25)}


def test_round_trip_f8_exact(tmp_path):
    fp = save_checkpoint(tmp_path / "a.ckpt", "test", arrays(), {"k": 1}, dtype="<f8")
    header, back = load_checkpoint(tmp_path / "a.ckpt", kind="test")
    assert list(back) == ["w", "b", "s"]
    for name, a in arrays().items():
        assert np.array_equal(back[name], a) and back[name].shape == np.shape(a)
    assert header["meta"] == {"k": 1}
    assert fp == fingerprint(tmp_path / "a.ckpt") and len(fp) == 16


def test_round_trip_f4(tmp_path):
    save_checkpoint(tmp_path / "a.ckpt", "test", arrays())
    _, back = load_checkpoint(tmp_path / "a.ckpt")
    np.testing.assert_allclose(back["w"], arrays()["w"], rtol=1e-7)
    assert (tmp_path / "a.ckpt").stat().st_size == len((tmp_path / "a.ckpt").read_bytes().split(b"\n")[0]) + 1 + 9 * 4


def test_same_content_same_fingerprint(tmp_path):
    a = save_checkpoint(tmp_path / "a.ckpt", "test", arrays(), {"x": [1, 2]})
    b = save_checkpoint(tmp_path / "b.ckpt", "test", arrays(), {"x": [1, 2]})
    c = save_checkpoint(tmp_path / "c.ckpt", "test", arrays(), {"x": [1, 3]})
    assert a == b != c


def _corrupt(path, new_first_line):
    data = path.read_bytes()
    nl = data.index(b"\n")
    path.write_bytes(new_first_line + data[nl:])


@pytest.mark.parametrize("line", [b"garbage", b'{"format": "other"}', b"\xff\xfe"])
def test_corrupted_header(tmp_path, line):
    p = tmp_path / "a.ckpt"
    save_checkpoint(p, "test", arrays())
    _corrupt(p, line)
    with pytest.raises(FormatVersionError):
        load_checkpoint(p)
    with pytest.raises(FormatVersionError):
        read_header(p)


def test_future_version_rejected(tmp_path):
    p = tmp_path / "a.ckpt"
    save_checkpoint(p, "test", arrays())
    h = read_header(p)
    h["format_version"] = 99
    _corrupt(p, json.dumps(h).encode())
    with pytest.raises(FormatVersionError, match="format_version"):
        load_checkpoint(p)


def test_truncated_and_trailing(tmp_path):
    p = tmp_path / "a.ckpt"
    save_checkpoint(p, "test", arrays())
    good = p.read_bytes()
    p.write_bytes(good[:-3])
    with pytest.raises(FormatVersionError, match="truncated"):
        load_checkpoint(p)
    p.write_bytes(good + b"\0")
    with pytest.raises(FormatVersionError, match="trailing"):
        load_checkpoint(p)


def test_wrong_kind(tmp_path):
    save_checkpoint(tmp_path / "a.ckpt", "policy", arrays())
    with pytest.raises(FormatVersionError, match="kind"):
        load_checkpoint(tmp_path / "a.ckpt", kind="beliefs")
