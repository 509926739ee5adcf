import numpy as np
import pytest

from lcov.covmap import extract, restrict_to_variances
from lcov.errors import InvalidInputError
from lcov.filterbank import apply, random_bank
from lcov.synthesis import (
    SynthConfig,
    noise_baseline,
    relative_error,
    sign_invariant_error,
    step_size,
    synth_objective,
    synthesize,
)

from conftest import central_difference


def _target(rng, shape=(16, 16), n=3, k=4, hood=4, stride=2, boundary="circular"):
    bank = random_bank(n, k, seed=2)
    ref = rng.standard_normal(shape)
    return bank, ref, extract(apply(bank, ref), hood, stride, boundary=boundary)


def test_step_schedule_is_harmonic():
    assert [step_size(2.0, k) for k in (1, 2, 4, 10)] == [2.0, 1.0, 0.5, 0.2]


def test_objective_zero_at_reference(rng):
    bank, ref, target = _target(rng)
    value, grad = synth_objective(ref, bank, target)
    assert value == 0.0
    assert np.all(grad == 0)


def test_sign_flip_symmetry(rng):
    bank, ref, target = _target(rng)
    x = rng.standard_normal(ref.shape)
    assert synth_objective(x, bank, target)[0] == synth_objective(-x, bank, target)[0]
    np.testing.assert_array_equal(
        extract(apply(bank, -ref), 4, 2).matrices, extract(apply(bank, ref), 4, 2).matrices
    )


def test_objective_matches_direct_sum(rng):
    bank, ref, target = _target(rng)
    x = rng.standard_normal(ref.shape)
    cm = extract(apply(bank, x), 4, 2)
    iu, ju = np.triu_indices(3)
    expected = np.abs(cm.matrices - target.matrices)[:, :, iu, ju].sum()
    assert synth_objective(x, bank, target)[0] == pytest.approx(expected, rel=1e-12)
    full = np.abs(cm.matrices - target.matrices).sum()
    assert synth_objective(x, bank, target, double_count=True)[0] == pytest.approx(full, rel=1e-12)


@pytest.mark.parametrize("boundary", ["circular", "valid"])
@pytest.mark.parametrize("double_count", [False, True])
def test_gradient_finite_differences(rng, boundary, double_count):
    bank, ref, target = _target(rng, shape=(10, 10), boundary=boundary)
    x = rng.standard_normal(ref.shape)
    _, g = synth_objective(x, bank, target, double_count)
    fd = central_difference(lambda v: synth_objective(v, bank, target, double_count)[0], x, h=1e-7)
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) <= 1e-5


def test_variance_target_ignores_off_diagonals(rng):
    bank, ref, target = _target(rng)
    v = restrict_to_variances(target)
    x = rng.standard_normal(ref.shape)
    cm = extract(apply(bank, x), 4, 2)
    d = np.diagonal(cm.matrices - target.matrices, axis1=2, axis2=3)
    assert synth_objective(x, bank, v)[0] == pytest.approx(np.abs(d).sum(), rel=1e-12)


def test_objective_validation(rng):
    bank, ref, target = _target(rng)
    with pytest.raises(InvalidInputError):
        synth_objective(np.zeros((8, 8)), bank, target)
    with pytest.raises(InvalidInputError):
        synth_objective(ref, random_bank(2, 4, 0), target)
    with pytest.raises(InvalidInputError):
        SynthConfig(step0=0)
    with pytest.raises(InvalidInputError):
        SynthConfig(method="adam")


def test_synthesize_from_reference_stops_at_step_zero(rng):
    bank, ref, target = _target(rng)
    for method in ("harmonic", "lbfgs"):
        res = synthesize(target, bank, SynthConfig(max_steps=10, method=method), init=ref)
        assert res.steps == 0 and res.objective == [0.0]


def test_synthesize_records_trace(rng):
    bank, ref, target = _target(rng)
    res = synthesize(target, bank, SynthConfig(max_steps=20, step0=1e-3, seed=5))
    assert res.steps == 20
    assert len(res.objective) == 21
    np.testing.assert_allclose(res.step_sizes, [1e-3 / k for k in range(1, 21)])
    x0 = np.random.default_rng(5).standard_normal(ref.shape)
    assert res.objective[0] == synth_objective(x0, bank, target)[0]
    assert synth_objective(res.best_image, bank, target)[0] == min(res.objective)


def test_synthesize_seeded(rng):
    bank, ref, target = _target(rng)
    cfg = SynthConfig(max_steps=5, step0=1e-3, seed=9)
    np.testing.assert_array_equal(synthesize(target, bank, cfg).image, synthesize(target, bank, cfg).image)


def test_synthesize_decreases_objective(rng):
    bank, ref, target = _target(rng)
    for cfg in (SynthConfig(max_steps=300, step0=3e-2), SynthConfig(max_steps=100, method="lbfgs")):
        res = synthesize(target, bank, cfg)
        assert res.objective[-1] < 0.5 * res.objective[0]


def test_undercomplete_seeds_give_distinct_images(rng):
    # 3 filters, 8x8 windows at stride 4 on 32x32: 64 * 6 = 384 measurements < 1024 pixels
    bank = random_bank(3, 4, seed=2)
    ref = rng.standard_normal((32, 32))
    target = extract(apply(bank, ref), 8, 4)
    runs = [synthesize(target, bank, SynthConfig(max_steps=500, seed=s, method="lbfgs")) for s in (1, 2)]
    a, b = (r.image for r in runs)
    assert sign_invariant_error(a, b) > 0.1
    scale = runs[0].objective[0]
    assert abs(runs[0].objective[-1] - runs[1].objective[-1]) < 0.01 * scale


def test_relative_error():
    ref = np.ones((4, 4))
    assert relative_error(ref, ref) == 0
    assert relative_error(2 * ref, ref) == pytest.approx(1.0)
    assert sign_invariant_error(-ref, ref) == 0
    with pytest.raises(InvalidInputError):
        relative_error(ref, np.zeros((4, 4)))


def test_noise_baseline(rng):
    ref = rng.standard_normal((32, 32)) + 5
    for e in (0.0, 0.015, 0.111):
        assert relative_error(noise_baseline(ref, e, seed=1), ref) == pytest.approx(e, abs=1e-12)
