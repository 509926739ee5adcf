"""Stochastic gradient descent on the filter-bank energy.

One random crop per step, fixed learning rate, optional spectral gradient
scaling: each filter's gradient is divided, frequency by frequency, by the
root-mean-square amplitude spectrum of the training crops. This equalizes
the very different convergence rates of low and high frequencies caused by
the steep spectrum of natural images.
"""

import csv
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.fft as sfft

from .errors import DivergenceError, InvalidInputError
from .filterbank import FilterBank
from .objective import EnergyBreakdown, PatchSpec, total_energy_and_gradient
from .signal import anchor, embed_kernel, extract_kernel

log = logging.getLogger(__name__)

SPECTRUM_FLOOR = 1e-6
PROBE_CANDIDATES = 256


@dataclass(frozen=True)
class TrainConfig:
    num_filters: int = 4
    kernel_size: int = 20
    patch_size: int = 16
    patch_stride: int | None = None
    window_sigma: float = 3.0
    blur_sigma: float = 3.0
    blur_mode: str = "spatial"
    lam: float = 3500.0
    mu: float = 100.0
    learning_rate: float | None = None
    num_steps: int = 1000
    crop_size: int = 48
    seed: int = 0
    gradient_scaling: bool = True
    deterministic: bool = True
    init_scale: float | None = None
    spectrum_samples: int = 200
    probe_steps: int = 50
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.num_filters < 1 or self.kernel_size < 1 or self.patch_size < 1:
            raise InvalidInputError("num_filters, kernel_size and patch_size must be positive")
        if self.crop_size < self.kernel_size + self.patch_size:
            raise InvalidInputError("crop_size must be at least kernel_size + patch_size")
        if self.window_sigma <= 0 or self.blur_sigma <= 0:
            raise InvalidInputError("window_sigma and blur_sigma must be positive")
        if self.lam < 0 or self.mu < 0:
            raise InvalidInputError("lam and mu must be non-negative")
        if self.learning_rate is not None and self.learning_rate < 0:
            raise InvalidInputError("learning_rate must be non-negative")
        if self.num_steps < 0:
            raise InvalidInputError("num_steps must be non-negative")
        if self.spectrum_samples < 1:
            raise InvalidInputError("spectrum_samples must be >= 1")

    @property
    def stride(self):
        return self.patch_stride if self.patch_stride is not None else max(1, self.patch_size // 2)

    def patch_spec(self):
        """Patches restricted to the pixels whose responses do not wrap around."""
        start = self.kernel_size - 1 - anchor(self.kernel_size)
        extent = self.crop_size - self.kernel_size + 1
        return PatchSpec(
            self.patch_size, self.stride, self.window_sigma, (start, start), (extent, extent)
        )


class ImageEnsemble:
    """Random-crop sampler over a list of images.

    With ``normalize`` each crop is centred and divided by the ensemble
    standard deviation (computed once, after removing each image's mean).
    ``center="crop"`` removes each crop's own mean; ``center="ensemble"``
    removes the ensemble mean only, so crop-to-crop luminance changes (the DC
    bin) survive.
    """

    def __init__(self, images, normalize=True, center="crop"):
        self.images = [np.asarray(im, dtype=np.float64) for im in images]
        if not self.images:
            raise InvalidInputError("empty dataset")
        for im in self.images:
            if im.ndim != 2:
                raise InvalidInputError("dataset images must be 2-D")
        if center not in ("crop", "ensemble"):
            raise InvalidInputError("center must be 'crop' or 'ensemble'")
        self.normalize = normalize
        self.center = center
        count = sum(im.size for im in self.images)
        self.mean = sum(float(im.sum()) for im in self.images) / count
        if normalize:
            sq = sum(float(np.sum((im - im.mean()) ** 2)) for im in self.images)
            std = math.sqrt(sq / count)
            self.scale = std if std > 0 else 1.0
        else:
            self.scale = 1.0

    def crop(self, rng, size):
        im = self.images[int(rng.integers(len(self.images)))]
        if im.shape[0] < size or im.shape[1] < size:
            raise InvalidInputError(f"image {im.shape} is smaller than the {size}px crop")
        r = int(rng.integers(im.shape[0] - size + 1))
        c = int(rng.integers(im.shape[1] - size + 1))
        out = im[r : r + size, c : c + size].copy()
        if self.normalize:
            out = (out - (out.mean() if self.center == "crop" else self.mean)) / self.scale
        return out

    def with_center(self, center):
        out = ImageEnsemble.__new__(ImageEnsemble)
        out.__dict__.update(self.__dict__)
        out.center = center
        return out


def _ensemble(dataset, normalize):
    if isinstance(dataset, ImageEnsemble):
        return dataset
    return ImageEnsemble(dataset, normalize=normalize)


@dataclass
class SpectrumEstimate:
    """Mean power ``E|x^(w)|^2`` over ``count`` crops, full FFT layout."""

    power: np.ndarray
    count: int

    @property
    def shape(self):
        return self.power.shape


def estimate_mean_spectrum(dataset, crop, count, seed):
    """Average ``|fft2(crop)|^2`` over ``count`` random crops.

    A plain list of images is cropped without normalization; pass an
    :class:`ImageEnsemble` to estimate the spectrum of normalized crops.
    """
    if count < 1:
        raise InvalidInputError("count must be >= 1")
    ens = _ensemble(dataset, normalize=False)
    rng = np.random.default_rng(seed)
    acc = np.zeros((crop, crop))
    for _ in range(count):
        acc += np.abs(sfft.fft2(ens.crop(rng, crop))) ** 2
    return SpectrumEstimate(acc / count, count)


def scale_gradient(grad, spectrum):
    """Divide each filter gradient by the RMS amplitude spectrum, bin by bin.

    The taps are embedded at the spectrum's resolution, transformed, divided
    by ``sqrt(power)`` (with power floored at ``SPECTRUM_FLOOR`` times its
    maximum) and cropped back to the kernel support.
    """
    power = np.asarray(spectrum.power, dtype=np.float64)
    peak = float(power.max()) if power.size else 0.0
    if not peak > 0:
        raise InvalidInputError("spectrum estimate is all zero")
    grad = np.asarray(grad, dtype=np.float64)
    amp = np.sqrt(np.maximum(power, SPECTRUM_FLOOR * peak))
    k = grad.shape[-2:]
    spec = sfft.fft2(embed_kernel(grad, power.shape))
    return extract_kernel(np.real(sfft.ifft2(spec / amp)), k)


@dataclass
class TrainLog:
    steps: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    elapsed: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    learning_rate: float | None = None

    def append(self, step, energy, elapsed):
        if self.steps and step <= self.steps[-1]:
            raise ValueError("log steps must increase")
        self.steps.append(step)
        self.energies.append(energy)
        self.elapsed.append(elapsed)

    def totals(self):
        return np.array([e.total for e in self.energies])

    def to_csv(self, path, timestamps=True):
        """Write the log; ``timestamps=False`` zeroes the wall-clock column so
        repeated runs produce identical files."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "local_dim", "recons", "global_dim", "total", "elapsed_seconds"])
            for s, e, t in zip(self.steps, self.energies, self.elapsed):
                writer.writerow(
                    [s, repr(e.local_dim), repr(e.recons), repr(e.global_dim), repr(e.total), f"{t if timestamps else 0.0:.6f}"]
                )


def initial_bank(config):
    """Gaussian taps; the default scale ``1 / (K sqrt(N))`` gives the bank a
    total power gain ``sum_i |f_i(w)|^2`` of about one."""
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
    scale = config.init_scale
    if scale is None:
        scale = 1.0 / (config.kernel_size * math.sqrt(config.num_filters))
    taps = scale * rng.standard_normal(
        (config.num_filters, config.kernel_size, config.kernel_size)
    )
    return FilterBank(taps, blur_sigma=config.blur_sigma, blur_mode=config.blur_mode)


def _streams(config):
    _, crops, spectrum, probe = np.random.SeedSequence(config.seed).spawn(4)
    return np.random.default_rng(crops), int(spectrum.generate_state(1)[0]), probe


def _step(bank, crop, spec, config, spectrum):
    energy, grad = total_energy_and_gradient(crop, bank, spec, config.lam, config.mu)
    if spectrum is not None:
        grad = scale_gradient(grad, spectrum)
    return energy, grad


def probe_learning_rate(ens, bank, config, spectrum, probe_seed):
    """Half the largest rate, halving from a step of one tap-norm, that
    survives ``probe_steps`` steps without the energy growing more than
    tenfold.

    The probe runs on one fixed crop (the highest-contrast of
    ``PROBE_CANDIDATES`` draws) so that crop-to-crop energy differences do
    not masquerade as instability; the factor of two leaves room for crops
    with more contrast than the probe crop.
    """
    spec = config.patch_spec()
    rng = np.random.default_rng(probe_seed)
    crop = max((ens.crop(rng, config.crop_size) for _ in range(PROBE_CANDIDATES)), key=np.var)
    energy, grad = _step(bank, crop, spec, config, spectrum)
    gnorm = float(np.linalg.norm(grad))
    if gnorm == 0:
        return 0.0
    lr = float(np.linalg.norm(bank.kernels)) / gnorm
    base = energy.total
    for _ in range(60):
        trial = bank
        ok = True
        for _ in range(config.probe_steps):
            e, g = _step(trial, crop, spec, config, spectrum)
            if not np.isfinite(e.total) or e.total > 10.0 * abs(base):
                ok = False
                break
            trial = trial.with_kernels(trial.kernels - lr * g)
        if ok:
            e, _ = _step(trial, crop, spec, config, spectrum)
            ok = np.isfinite(e.total) and e.total <= 10.0 * abs(base)
        if ok:
            return 0.5 * lr
        lr *= 0.5
    return lr


def train(dataset, config=TrainConfig(), init=None, callback=None):
    """Run SGD and return ``(bank, log)``.

    ``callback(step, bank)``, if given, is called after every update.
    """
    ens = _ensemble(dataset, normalize=True)
    bank = init if init is not None else initial_bank(config)
    spec = config.patch_spec()
    rng, spectrum_seed, probe_seed = _streams(config)
    spectrum = None
    if config.gradient_scaling:
        # ensemble-centred crops keep a populated DC bin
        spectrum = estimate_mean_spectrum(
            ens.with_center("ensemble"), config.crop_size, config.spectrum_samples, spectrum_seed
        )
    lr = config.learning_rate
    if lr is None:
        lr = probe_learning_rate(ens, bank, config, spectrum, probe_seed)
        log.info("probed learning rate %.4g", lr)
    trace = TrainLog(learning_rate=lr)
    t0 = time.perf_counter()
    for step in range(config.num_steps):
        crop = ens.crop(rng, config.crop_size)
        try:
            with np.errstate(over="raise", invalid="raise"):
                energy, grad = _step(bank, crop, spec, config, spectrum)
                new = bank.kernels - lr * grad
            finite = np.isfinite(energy.total) and np.all(np.isfinite(new))
        except (FloatingPointError, InvalidInputError):
            finite = False
        if not finite:
            path = _write_checkpoint(bank, config, step, diagnostic=True)
            raise DivergenceError(f"energy diverged at step {step}", checkpoint=path)
        trace.append(step, energy, time.perf_counter() - t0)
        bank = bank.with_kernels(new)
        if config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
            if _write_checkpoint(bank, config, step + 1) is not None:
                trace.checkpoints.append(step + 1)
        if callback is not None:
            callback(step + 1, bank)
    return bank, trace


def _write_checkpoint(bank, config, step, diagnostic=False):
    if not config.checkpoint_dir:
        return None
    from .io import save_bank

    os.makedirs(config.checkpoint_dir, exist_ok=True)
    name = f"diverged_{step:07d}.bank" if diagnostic else f"step_{step:07d}.bank"
    path = os.path.join(config.checkpoint_dir, name)
    save_bank(path, bank)
    return path


def config_dict(config):
    return asdict(config)
