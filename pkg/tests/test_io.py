import numpy as np
import pytest

from lcov.covmap import extract, make_window, restrict_to_variances
from lcov.errors import InvalidInputError
from lcov.filterbank import FilterBank, random_bank
from lcov.io import (
    FormatError,
    load_bank,
    load_covmap,
    load_image,
    preprocess,
    read_affine,
    read_config,
    read_iml,
    read_pgm,
    save_bank,
    save_covmap,
    write_image,
    write_pgm,
)


def test_ascii_pgm_values(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_text("P2\n# comment\n2 2\n255\n0 85\n170 255\n")
    np.testing.assert_array_equal(read_pgm(p), [[0, 85], [170, 255]])


@pytest.mark.parametrize("maxval", [255, 65535])
@pytest.mark.parametrize("ascii", [False, True])
def test_pgm_roundtrip(tmp_path, rng, maxval, ascii):
    pix = rng.integers(0, maxval + 1, size=(5, 7))
    p = tmp_path / "b.pgm"
    write_pgm(p, pix, maxval=maxval, ascii=ascii)
    np.testing.assert_array_equal(read_pgm(p), pix)


def test_write_image_roundtrip_16bit(tmp_path, rng):
    pix = rng.integers(0, 65536, size=(6, 4)).astype(np.float64)
    pix[0, 0], pix[0, 1] = 0, 65535
    p = tmp_path / "c.pgm"
    write_image(p, pix)
    np.testing.assert_array_equal(load_image(p, "none"), pix)
    assert read_affine(p) == (0.0, 1.0)


def test_write_image_affine_recovers_values(tmp_path, rng):
    img = rng.standard_normal((8, 8))
    p = tmp_path / "d.pgm"
    offset, scale = write_image(p, img)
    rec = offset + scale * read_pgm(p)
    assert np.max(np.abs(rec - img)) <= scale / 2 + 1e-12


def test_pgm_errors(tmp_path):
    p = tmp_path / "e.pgm"
    p.write_bytes(b"P5\n4 4\n255\n" + bytes(10))
    with pytest.raises(FormatError):
        read_pgm(p)
    p.write_bytes(b"P6\n1 1\n255\n" + bytes(3))
    with pytest.raises(FormatError):
        read_pgm(p)
    with pytest.raises(FormatError):
        load_image(tmp_path / "x.tiff")


def test_iml(tmp_path, rng):
    pix = rng.integers(0, 65536, size=(1024, 1536)).astype("<u2")
    p = tmp_path / "f.iml"
    p.write_bytes(pix.tobytes())
    np.testing.assert_array_equal(read_iml(p), pix)
    p.write_bytes(pix.tobytes()[:-2])
    with pytest.raises(FormatError):
        read_iml(p)


def test_preprocess_modes(rng):
    img = rng.uniform(1, 100, size=(8, 8))
    assert abs(preprocess(img, "mean-subtract").mean()) < 1e-12
    s = preprocess(img, "standardize")
    assert s.std() == pytest.approx(1.0)
    ls = preprocess(img, "log-standardize")
    np.testing.assert_allclose(ls, preprocess(np.log(img), "standardize"))
    with pytest.raises(InvalidInputError):
        preprocess(img, "whiten")


def test_bank_roundtrip_bit_exact(tmp_path):
    for bank in (random_bank(3, 5, seed=1), FilterBank(np.ones((1, 2, 2)) / 3, blur_sigma=None)):
        p = tmp_path / "b.bank"
        save_bank(p, bank)
        assert p.stat().st_size == 25 + bank.num_filters * bank.kernel_size**2 * 8
        back = load_bank(p)
        assert back == bank
        assert back.kernels.tobytes() == bank.kernels.tobytes()


def test_bank_errors(tmp_path):
    p = tmp_path / "b.bank"
    save_bank(p, random_bank(2, 3, seed=0))
    data = p.read_bytes()
    p.write_bytes(data[:-1])
    with pytest.raises(FormatError):
        load_bank(p)
    p.write_bytes(b"X" + data[1:])
    with pytest.raises(FormatError):
        load_bank(p)


@pytest.mark.parametrize("kind", ["gaussian", "boxcar", "custom"])
@pytest.mark.parametrize("boundary", ["circular", "valid"])
def test_covmap_roundtrip_bit_exact(tmp_path, rng, kind, boundary):
    r = rng.standard_normal((3, 12, 12))
    if kind == "custom":
        cm = extract(r, 4, 2, window=rng.uniform(size=(4, 4)), boundary=boundary)
    else:
        cm = extract(r, 4, 2, window_kind=kind, boundary=boundary)
    p = tmp_path / "m.map"
    save_covmap(p, cm)
    back = load_covmap(p)
    assert back == cm
    assert back.matrices.tobytes() == cm.matrices.tobytes()


def test_variance_map_roundtrip_stores_diagonal_only(tmp_path, rng):
    cm = restrict_to_variances(extract(rng.standard_normal((4, 8, 8)), 4, 2))
    p = tmp_path / "v.map"
    save_covmap(p, cm)
    assert load_covmap(p) == cm
    full = tmp_path / "f.map"
    save_covmap(full, extract(rng.standard_normal((4, 8, 8)), 4, 2))
    assert full.stat().st_size - p.stat().st_size == 16 * (10 - 4) * 8


def test_covmap_truncated(tmp_path, rng):
    p = tmp_path / "m.map"
    save_covmap(p, extract(rng.standard_normal((2, 8, 8)), 4, 2))
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(FormatError):
        load_covmap(p)


def test_read_config(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\nlambda = 3500\n\nmu=100  # trailing\n")
    assert read_config(p, {"lambda", "mu"}) == {"lambda": "3500", "mu": "100"}
    p.write_text("")
    assert read_config(p, {"lambda"}) == {}
    p.write_text("lamda=1\n")
    with pytest.raises(InvalidInputError, match="valid keys: lambda, mu"):
        read_config(p, {"lambda", "mu"})
