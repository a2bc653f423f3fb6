import numpy as np
import pytest

from cmrestore import image as img


def test_psnr_identical_hits_cap():
    x = np.full((4, 4, 3), 0.25)
    assert img.psnr(x, x) == 100.0
    assert img.psnr(x, x, cap=80.0) == 80.0


def test_psnr_constant_case():
    ref = np.zeros((5, 5, 1))
    cand = np.full((5, 5, 1), 0.1)
    assert img.psnr(ref, cand) == pytest.approx(20.0, abs=1e-12)


def test_psnr_matches_scalar_loop_oracle():
    g = np.random.default_rng(42)
    a = g.random((8, 8, 3))
    b = g.random((8, 8, 3))
    acc = 0.0
    n = 0
    for i in range(8):
        for j in range(8):
            for c in range(3):
                acc += (a[i, j, c] - b[i, j, c]) ** 2
                n += 1
    expected = 10.0 * np.log10(1.0 / (acc / n))
    assert img.psnr(a, b) == pytest.approx(expected, abs=1e-9)


def test_psnr_symmetric():
    g = np.random.default_rng(1)
    a = g.random((6, 7, 1))
    b = g.random((6, 7, 1))
    assert img.psnr(a, b) == img.psnr(b, a)


def test_psnr_constant_offset_formula():
    g = np.random.default_rng(2)
    x = g.random((9, 9, 3))
    for c in (0.5, -0.03, 0.004):
        got = img.psnr(x, x + c)
        assert got == pytest.approx(20.0 * np.log10(1.0 / abs(c)), abs=1e-9)


def test_psnr_errors():
    with pytest.raises(img.ImageError):
        img.psnr(np.zeros((4, 4, 1)), np.zeros((4, 5, 1)))
    with pytest.raises(img.ImageError):
        img.psnr(np.full((2, 2, 1), np.nan), np.zeros((2, 2, 1)))
    with pytest.raises(ValueError):
        img.psnr(np.zeros((2, 2, 1)), np.zeros((2, 2, 1)), peak=0.0)


def test_validate_image_promotes_2d():
    out = img.validate_image(np.zeros((3, 4)))
    assert out.shape == (3, 4, 1)
    with pytest.raises(img.ImageError):
        img.validate_image(np.zeros((3, 4, 2)))


def test_tensor_roundtrip_bit_identical(tmp_path):
    g = np.random.default_rng(3)
    x = g.random((5, 7, 3)).astype(np.float32).astype(np.float64)
    path = tmp_path / "x.cmt"
    img.save_tensor(path, x)
    back = img.load_tensor(path)
    assert np.array_equal(back, x)
    # byte-level identity on re-save
    img.save_tensor(tmp_path / "y.cmt", back)
    assert (tmp_path / "x.cmt").read_bytes() == (tmp_path / "y.cmt").read_bytes()


def test_tensor_errors(tmp_path):
    path = tmp_path / "bad.cmt"
    path.write_bytes(b"NOPE" + b"\0" * 12)
    with pytest.raises(img.ImageError):
        img.load_tensor(path)
    img.save_tensor(path, np.zeros((2, 2, 1)))
    data = path.read_bytes()
    path.write_bytes(data[:-3])
    with pytest.raises(img.ImageError):
        img.load_tensor(path)


def test_png_8bit_constant(tmp_path):
    x = np.full((6, 6, 3), 0.5)
    img.save_png(tmp_path / "c.png", x)
    back = img.load_png(tmp_path / "c.png")
    assert back.shape == (6, 6, 3)
    assert np.max(np.abs(back - 0.5)) <= 1.0 / 510


def test_png_8bit_gradient(tmp_path):
    x = np.array([[[0.0, 0.25, 0.5], [0.1, 0.6, 0.9]],
                  [[0.33, 0.66, 0.99], [1.0, 0.01, 0.47]]])
    img.save_png(tmp_path / "g.png", x)
    back = img.load_png(tmp_path / "g.png")
    assert np.max(np.abs(back - x)) <= 1.0 / 510


@pytest.mark.parametrize("channels", [1, 3])
def test_png_16bit_roundtrip(tmp_path, channels):
    g = np.random.default_rng(4)
    x = g.random((8, 8, channels))
    img.save_png(tmp_path / "x.png", x, bit_depth=16)
    back = img.load_png(tmp_path / "x.png")
    assert back.shape == x.shape
    assert np.max(np.abs(back - x)) <= 1.0 / (2 * 65535)


def test_png_clips_out_of_range(tmp_path):
    x = np.array([[[-0.5], [1.5]]])
    img.save_png(tmp_path / "o.png", x)
    back = img.load_png(tmp_path / "o.png")
    assert back[0, 0, 0] == 0.0 and back[0, 1, 0] == 1.0


def test_load_image_dispatch(tmp_path):
    x = np.full((3, 3, 1), 0.25)
    img.save_tensor(tmp_path / "a.cmt", x)
    img.save_png(tmp_path / "a.png", x)
    assert np.array_equal(img.load_image(tmp_path / "a.cmt"), x)
    assert img.load_image(tmp_path / "a.png").shape == (3, 3, 1)
    with pytest.raises(img.ImageError):
        img.load_png(tmp_path / "missing.png")


def test_metric_report_without_reference():
    from cmrestore.operators import GaussianBlur, gaussian_taps

    op = GaussianBlur((8, 8, 1), taps=gaussian_taps(3, 1.0))
    x = np.random.default_rng(5).random((8, 8, 1))
    rep = img.metric_report(op, x, op.apply(x))
    assert rep.psnr_db is None
    assert rep.residual_norm < 1e-12
    assert "clipping" in rep.scoring
    assert any("residual_norm" in line for line in rep.lines())
