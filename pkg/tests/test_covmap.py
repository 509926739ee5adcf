import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lcov.covmap import (
    CovarianceMap,
    count_measurements,
    eig_power,
    eig_threshold_adaptive,
    eig_threshold_fixed,
    extract,
    extract_adjoint,
    make_window,
    pair_indices,
    participation_ratio,
    restrict_to_variances,
)
from lcov.errors import InvalidInputError
from lcov.signal import anchor


def loop_covariance(r, hood, stride, window, circular=True):
    """Independent oracle: explicit weighted sums around each sample point."""
    n, h, w = r.shape
    c = anchor(hood)
    if circular:
        rows, cols = range(0, h, stride), range(0, w, stride)
    else:
        rows = range(c, h - hood + c + 1, stride)
        cols = range(c, w - hood + c + 1, stride)
    out = np.zeros((len(rows), len(cols), n, n))
    for a, r0 in enumerate(rows):
        for b, c0 in enumerate(cols):
            for u in range(hood):
                for v in range(hood):
                    y = r[:, (r0 + u - c) % h, (c0 + v - c) % w]
                    out[a, b] += window[u, v] * np.outer(y, y)
    return out


def random_psd_map(rng, shape=(3, 4), n=4, rank=None):
    a = rng.standard_normal(shape + (n, rank or n))
    mats = a @ np.swapaxes(a, -1, -2)
    return CovarianceMap(mats, 4, 2, make_window(4), (6, 8))


@pytest.mark.parametrize("boundary", ["circular", "valid"])
@pytest.mark.parametrize("hood,stride", [(4, 2), (5, 3), (3, 1)])
def test_extract_matches_loop(rng, boundary, hood, stride):
    r = rng.standard_normal((3, 11, 9))
    cm = extract(r, hood, stride, boundary=boundary)
    expected = loop_covariance(r, hood, stride, cm.window, circular=boundary == "circular")
    np.testing.assert_allclose(cm.matrices, expected, atol=1e-12)


def test_constant_responses_give_outer_product():
    r = np.ones((2, 8, 8)) * np.array([1.0, 2.0])[:, None, None]
    cm = extract(r, 4, 2)
    np.testing.assert_allclose(cm.matrices, np.broadcast_to([[1, 2], [2, 4]], cm.matrices.shape))


def test_single_filter_map_is_local_energy(rng):
    r = rng.standard_normal((1, 8, 8))
    cm = extract(r, 8, 8, window_kind="boxcar")
    assert cm.matrices.shape == (1, 1, 1, 1)
    assert cm.matrices[0, 0, 0, 0] == pytest.approx(np.mean(r**2))


def test_extracted_matrices_symmetric_psd(rng):
    cm = extract(rng.standard_normal((4, 16, 16)), 8, 2)
    np.testing.assert_array_equal(cm.matrices, np.swapaxes(cm.matrices, -1, -2))
    assert np.linalg.eigvalsh(cm.matrices).min() >= -1e-12


def test_extract_validation(rng):
    r = rng.standard_normal((2, 8, 8))
    with pytest.raises(InvalidInputError):
        extract(r, 9, 2)
    with pytest.raises(InvalidInputError):
        extract(r, 4, 0)
    with pytest.raises(InvalidInputError):
        extract(r, 4, 2, window=-np.ones((4, 4)))
    with pytest.raises(InvalidInputError):
        extract(r, 4, 2, boundary="mirror")


@pytest.mark.parametrize(
    "shape,hood,stride,expected",
    [((180, 120), 8, 2, 54000), ((180, 120), 16, 4, 13500), ((64, 64), 8, 2, 10240)],
)
def test_measurement_counts(shape, hood, stride, expected):
    cm = extract(np.zeros((4,) + shape), hood, stride)
    assert count_measurements(cm).total == expected


def test_variance_map_counts_diagonal(rng):
    cm = extract(rng.standard_normal((4, 16, 16)), 8, 2)
    v = restrict_to_variances(cm)
    assert count_measurements(v).total == cm.num_locations * 4
    np.testing.assert_array_equal(np.diagonal(v.matrices, axis1=2, axis2=3), np.diagonal(cm.matrices, axis1=2, axis2=3))
    assert np.count_nonzero(v.matrices - v.matrices * np.eye(4)) == 0


@pytest.mark.parametrize("boundary", ["circular", "valid"])
def test_extract_adjoint_identity(rng, boundary):
    r = rng.standard_normal((3, 12, 10))
    cm = extract(r, 4, 2, boundary=boundary)
    iu, ju = pair_indices(3)
    wts = rng.standard_normal(cm.grid_shape + (len(iu),))
    lhs = np.sum(wts * cm.matrices[:, :, iu, ju])
    rhs = np.sum(extract_adjoint(cm, wts) * r[iu] * r[ju])
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_fixed_threshold_worked_example():
    cm = CovarianceMap(np.diag([5.0, 1.0, 0.1])[None, None], 1, 1, np.ones((1, 1)), (1, 1))
    out = eig_threshold_fixed(cm, 0.5)
    np.testing.assert_allclose(out.matrices[0, 0], np.diag([5.0, 1.0, 0.0]), atol=1e-12)


def test_adaptive_keeps_top_eigenvalue():
    cm = CovarianceMap(np.diag([100.0, 1.0, 0.5])[None, None], 1, 1, np.ones((1, 1)), (1, 1))
    out = eig_threshold_adaptive(cm, 0.5)
    # energy without the top eigenvalue is 1.5; threshold 0.75 keeps 100 and 1
    np.testing.assert_allclose(out.matrices[0, 0], np.diag([100.0, 1.0, 0.0]), atol=1e-12)


def test_adaptive_lowpass_exclusion():
    # the low-pass channel 0 carries the smaller eigenvalue here
    cm = CovarianceMap(np.diag([1.0, 100.0, 0.5])[None, None], 1, 1, np.ones((1, 1)), (1, 1))
    out = eig_threshold_adaptive(cm, 0.2, exclude="lowpass", lowpass_channel=0)
    np.testing.assert_allclose(out.matrices[0, 0], np.diag([1.0, 100.0, 0.0]), atol=1e-12)


def test_power_worked_example():
    cm = CovarianceMap(np.diag([4.0, 9.0])[None, None], 1, 1, np.ones((1, 1)), (1, 1))
    np.testing.assert_allclose(eig_power(cm, 0.5).matrices[0, 0], np.diag([2.0, 3.0]), atol=1e-12)


def test_edits_preserve_eigenvectors(rng):
    cm = random_psd_map(rng)
    for out in (eig_threshold_fixed(cm, 1.0), eig_power(cm, 0.5), eig_threshold_adaptive(cm, 0.2)):
        comm = out.matrices @ cm.matrices - cm.matrices @ out.matrices
        assert np.max(np.abs(comm)) <= 1e-8 * np.max(np.abs(cm.matrices)) ** 2


def test_edit_validation(rng):
    cm = random_psd_map(rng)
    with pytest.raises(InvalidInputError):
        eig_threshold_fixed(cm, -1)
    with pytest.raises(InvalidInputError):
        eig_power(cm, 0)
    with pytest.raises(InvalidInputError):
        eig_threshold_adaptive(cm, 0.1, exclude="median")


def test_participation_ratio_bounds():
    assert participation_ratio([1.0, 1.0, 1.0]) == pytest.approx(3.0)
    assert participation_ratio([1.0, 0.0, 0.0]) == pytest.approx(1.0)


seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=30, deadline=None)
@given(seeds, st.floats(0.0, 5.0))
def test_fixed_threshold_idempotent(seed, tau):
    cm = random_psd_map(np.random.default_rng(seed))
    once = eig_threshold_fixed(cm, tau)
    twice = eig_threshold_fixed(once, tau)
    np.testing.assert_allclose(twice.matrices, once.matrices, atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_power_one_is_identity(seed):
    cm = random_psd_map(np.random.default_rng(seed))
    np.testing.assert_allclose(eig_power(cm, 1.0).matrices, cm.matrices, atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(seeds, st.floats(0.3, 0.9))
def test_power_below_one_spreads_spectrum(seed, p):
    cm = random_psd_map(np.random.default_rng(seed))
    before = participation_ratio(np.linalg.eigvalsh(cm.matrices))
    after = participation_ratio(np.clip(np.linalg.eigvalsh(eig_power(cm, p).matrices), 0, None))
    assert np.all(after >= before - 1e-8)


@settings(max_examples=30, deadline=None)
@given(seeds, st.floats(0.01, 100.0))
def test_extraction_quadratic_in_responses(seed, c):
    r = np.random.default_rng(seed).standard_normal((2, 8, 8))
    np.testing.assert_allclose(extract(c * r, 4, 2).matrices, c**2 * extract(r, 4, 2).matrices, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(extract(-r, 4, 2).matrices, extract(r, 4, 2).matrices, atol=1e-12)
