import numpy as np
import pytest
from PIL import Image

from freqdefense import formats
from freqdefense.errors import FormatError


def test_ppm_pgm_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    for C in (1, 3):
        img = rng.integers(0, 256, (7, 5, C)).astype(float)
        p = tmp_path / f"a{C}.pnm"
        formats.write_pnm(p, img)
        np.testing.assert_array_equal(formats.read_pnm(p), img)


def test_pnm_header_with_comment():
    data = b"P5\n# made by hand\n2 1\n255\n\x01\xff"
    np.testing.assert_array_equal(formats.decode_pnm(data)[:, :, 0], [[1, 255]])


def test_pnm_rejects_bad_input():
    with pytest.raises(FormatError):
        formats.decode_pnm(b"P3\n1 1\n255\n0 0 0")
    with pytest.raises(FormatError):
        formats.decode_pnm(b"P6\n2 2\n255\n\x00")
    with pytest.raises(FormatError):
        formats.encode_pnm(np.zeros((2, 2, 2)))


def test_png_readable_by_pillow(tmp_path):
    img = np.arange(48, dtype=float).reshape(4, 4, 3)
    formats.write_png(tmp_path / "x.png", img)
    np.testing.assert_array_equal(np.asarray(Image.open(tmp_path / "x.png")), img.astype(np.uint8))


def test_perturbation_roundtrip_and_layout(tmp_path):
    r = np.random.default_rng(1).normal(size=(3, 4, 2))
    p = tmp_path / "r.pert"
    formats.save_perturbation(p, r)
    raw = p.read_bytes()
    assert raw[:4] == b"PERT" and len(raw) == 16 + 8 * r.size
    assert np.frombuffer(raw[4:16], "<u4").tolist() == [3, 4, 2]
    np.testing.assert_array_equal(formats.load_perturbation(p), r)
    with pytest.raises(FormatError):
        formats.decode_perturbation(raw[:-3])
    with pytest.raises(FormatError):
        formats.decode_perturbation(b"XXXX" + raw[4:])


def test_atomic_write_leaves_no_temp_files(tmp_path):
    formats.atomic_write_bytes(tmp_path / "d" / "f.bin", b"abc")
    assert [p.name for p in (tmp_path / "d").iterdir()] == ["f.bin"]
