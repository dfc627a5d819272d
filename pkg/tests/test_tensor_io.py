import numpy as np
import pytest

from resshift.rng import make_rng
from resshift.tensor_io import load_image_or_tensor, read_pnm, read_tensor, save_image_or_tensor, write_pnm, write_tensor


@pytest.mark.parametrize("shape", [(), (5,), (2, 3), (2, 1, 4, 4)])
def test_tensor_round_trip(tmp_path, shape):
    x = make_rng(0).standard_normal(shape)
    write_tensor(tmp_path / "x.rsten", x)
    back = read_tensor(tmp_path / "x.rsten")
    assert back.shape == shape
    assert back.tobytes() == np.asarray(x, dtype=np.float64).tobytes()


def test_tensor_header_layout(tmp_path):
    write_tensor(tmp_path / "x.rsten", np.arange(6.0).reshape(2, 3))
    raw = (tmp_path / "x.rsten").read_bytes()
    assert raw[:5] == b"RSTEN"
    assert raw[5:9] == (2).to_bytes(4, "little")
    assert raw[9:17] == (2).to_bytes(4, "little") + (3).to_bytes(4, "little")
    assert len(raw) == 17 + 6 * 8


def test_tensor_rejects_garbage(tmp_path):
    (tmp_path / "bad").write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(ValueError):
        read_tensor(tmp_path / "bad")
    write_tensor(tmp_path / "short", np.zeros(4))
    (tmp_path / "short").write_bytes((tmp_path / "short").read_bytes()[:-8])
    with pytest.raises(ValueError):
        read_tensor(tmp_path / "short")


@pytest.mark.parametrize("shape", [(1, 6, 5), (3, 4, 7)])
def test_pnm_round_trip(tmp_path, shape):
    q = make_rng(1).integers(0, 256, shape) / 255.0
    path = tmp_path / ("x.pgm" if shape[0] == 1 else "x.ppm")
    save_image_or_tensor(path, q)
    np.testing.assert_allclose(load_image_or_tensor(path), q, atol=1e-12)


def test_pnm_with_comment(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# made by hand\n2 1\n255\n" + bytes([0, 255]))
    np.testing.assert_array_equal(read_pnm(path), [[[0.0, 1.0]]])


def test_pnm_rejects_bad_input(tmp_path):
    with pytest.raises(ValueError):
        write_pnm(tmp_path / "x.pgm", np.zeros((2, 4, 4)))
    (tmp_path / "x.pgm").write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(ValueError):
        read_pnm(tmp_path / "x.pgm")
