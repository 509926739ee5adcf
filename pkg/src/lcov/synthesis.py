"""Image synthesis from a target covariance map.

Starting from white noise, subgradient descent with a harmonically decaying
step ``step0 / k`` minimizes the L1 distance between the covariance map of
the current image and the target map. ``method="lbfgs"`` minimizes the same
objective with limited-memory BFGS instead, which reaches the reference in
far fewer steps on natural-image targets.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .covmap import extract, extract_adjoint, pair_indices
from .errors import DivergenceError, InvalidInputError
from .filterbank import apply, reconstruct
from .signal import as_image

METHODS = ("harmonic", "lbfgs")

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthConfig:
    max_steps: int = 10_000
    step0: float = 1.0
    seed: int = 0
    tol: float = 0.0
    log_every: int = 0
    double_count: bool = False
    method: str = "harmonic"

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidInputError(f"method must be one of {METHODS}")
        if self.max_steps < 0:
            raise InvalidInputError("max_steps must be non-negative")
        if not self.step0 > 0:
            raise InvalidInputError("step0 must be positive")


@dataclass
class SynthResult:
    image: np.ndarray
    best_image: np.ndarray
    objective: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)
    steps: int = 0
    relative_error: float | None = None


def step_size(step0, k):
    """Harmonic schedule: step ``k`` (1-based) moves by ``step0 / k``."""
    return step0 / k


def _entry_weights(target, double_count):
    n = target.num_filters
    iu, ju = pair_indices(n)
    if target.diagonal_only:
        weight = (iu == ju).astype(np.float64)
    elif double_count:
        weight = np.where(iu == ju, 1.0, 2.0)
    else:
        weight = np.ones(len(iu))
    return iu, ju, weight


def synth_objective(x, bank, target, double_count=False):
    """L1 covariance mismatch and its gradient with respect to the pixels.

    Off-diagonal entries count once (the stored upper triangle) unless
    ``double_count`` is set. For variance-only targets only diagonals count.
    """
    x = as_image(x)
    if x.shape != target.image_shape:
        raise InvalidInputError(f"image {x.shape} does not match target map {target.image_shape}")
    if bank.num_filters != target.num_filters:
        raise InvalidInputError(
            f"bank has {bank.num_filters} filters, target map expects {target.num_filters}"
        )
    y = apply(bank, x)
    cm = extract(
        y,
        target.neighborhood,
        target.stride,
        window=target.window,
        window_kind=target.window_kind,
        window_sigma=target.window_sigma,
        boundary=target.boundary,
    )
    iu, ju, weight = _entry_weights(target, double_count)
    diff = cm.matrices[:, :, iu, ju] - target.matrices[:, :, iu, ju]
    value = float(np.sum(weight * np.abs(diff)))
    amap = extract_adjoint(target, weight * np.sign(diff))
    dy = np.zeros_like(y)
    # d/dy_i of A_m y_i y_j is A_m y_j, and symmetrically for j
    np.add.at(dy, iu, amap * y[ju])
    np.add.at(dy, ju, amap * y[iu])
    return value, reconstruct(bank, dy)


def _initial_image(target, config, init):
    if init is None:
        return np.random.default_rng(config.seed).standard_normal(target.image_shape)
    x = as_image(init).copy()
    if x.shape != target.image_shape:
        raise InvalidInputError(f"init image {x.shape} does not match target map {target.image_shape}")
    return x


def synthesize(target, bank, config=SynthConfig(), init=None, reference=None):
    """Descend the L1 covariance mismatch from seeded white noise (or ``init``).

    ``objective`` records the value before every step plus the final value;
    ``steps`` counts the updates actually taken.
    """
    x = _initial_image(target, config, init)
    if config.method == "lbfgs":
        result = _synthesize_lbfgs(x, bank, target, config)
    else:
        result = _synthesize_harmonic(x, bank, target, config)
    if reference is not None:
        result.relative_error = sign_invariant_error(result.image, reference)
    return result


def _synthesize_harmonic(x, bank, target, config):
    result = SynthResult(image=x, best_image=x.copy())
    best = np.inf
    value = None
    for k in range(1, config.max_steps + 2):
        value, grad = synth_objective(x, bank, target, config.double_count)
        if not np.isfinite(value):
            raise DivergenceError(f"synthesis objective became {value} at step {k - 1}")
        result.objective.append(value)
        if value < best:
            best = value
            result.best_image = x.copy()
        if value <= config.tol or k > config.max_steps:
            break
        eta = step_size(config.step0, k)
        result.step_sizes.append(eta)
        x = x - eta * grad
        result.steps = k
        if config.log_every and k % config.log_every == 0:
            log.info("step=%d objective=%.6g step_size=%.3g", k, value, eta)
    result.image = x
    return result


def _synthesize_lbfgs(x, bank, target, config):
    from scipy.optimize import minimize

    shape = x.shape
    result = SynthResult(image=x, best_image=x.copy())

    def fun(v):
        value, grad = synth_objective(v.reshape(shape), bank, target, config.double_count)
        if not np.isfinite(value):
            raise DivergenceError(f"synthesis objective became {value}")
        return value, grad.ravel()

    value0, _ = fun(x.ravel())
    result.objective.append(value0)
    if value0 <= config.tol or config.max_steps == 0:
        return result

    def callback(intermediate_result):
        result.steps += 1
        result.objective.append(float(intermediate_result.fun))
        if config.log_every and result.steps % config.log_every == 0:
            log.info("step=%d objective=%.6g", result.steps, intermediate_result.fun)
        if intermediate_result.fun <= config.tol:
            raise StopIteration

    opt = minimize(
        fun,
        x.ravel(),
        jac=True,
        method="L-BFGS-B",
        callback=callback,
        options={"maxiter": config.max_steps, "maxfun": 2 * config.max_steps, "gtol": 0.0, "ftol": 0.0},
    )
    result.image = opt.x.reshape(shape)
    result.best_image = result.image.copy()
    final = float(opt.fun)
    if not result.objective or result.objective[-1] != final:
        result.objective.append(final)
    return result


def relative_error(x, ref):
    """``||x - ref|| / ||ref||``."""
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise InvalidInputError(f"shape mismatch {x.shape} vs {ref.shape}")
    denom = np.linalg.norm(ref)
    if denom == 0:
        raise InvalidInputError("reference image has zero norm")
    return float(np.linalg.norm(x - ref) / denom)


def sign_invariant_error(x, ref):
    """Covariance maps cannot tell ``x`` from ``-x``; take the better sign."""
    return min(relative_error(x, ref), relative_error(-np.asarray(x), ref))


def noise_baseline(ref, target_rel_error, seed):
    """``ref`` plus Gaussian noise scaled to the requested relative error."""
    ref = as_image(ref, "reference")
    if target_rel_error < 0:
        raise InvalidInputError("target_rel_error must be non-negative")
    if target_rel_error == 0:
        return ref.copy()
    noise = np.random.default_rng(seed).standard_normal(ref.shape)
    noise *= target_rel_error * np.linalg.norm(ref) / np.linalg.norm(noise)
    return ref + noise
