"""Convolutional filter banks: analysis, transposed synthesis and the
modulated reconstructions used by the global-diversity term."""

from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .errors import InvalidInputError
from .signal import anchor, as_image, embed_kernel, gaussian_window, kernel_spectrum

BLUR_MODES = ("spatial", "frequency")


@dataclass(frozen=True, eq=False)
class FilterBank:
    """``N`` square ``K x K`` kernels plus the Gaussian blur window ``h``.

    ``blur_sigma=None`` disables blurring (``h`` degenerates to a single unit
    tap). ``blur_mode`` selects how ``h`` acts in the modulated
    reconstructions:

    ``"spatial"``
        each kernel is multiplied tap-wise by ``h / max(h)`` before
        convolving, which blurs its Fourier transform by the dual Gaussian;
    ``"frequency"``
        the Fourier magnitude of each kernel, sampled at image resolution,
        is convolved with a Gaussian over frequency bins of standard
        deviation ``n / (2 pi sigma)`` along an axis of ``n`` bins.
    """

    kernels: np.ndarray
    blur_sigma: float | None = 3.0
    blur_mode: str = "spatial"
    _taper: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        k = np.array(self.kernels, dtype=np.float64)
        if k.ndim == 2:
            k = k[None]
        if k.ndim != 3 or k.shape[1] != k.shape[2] or k.shape[0] < 1 or k.shape[1] < 1:
            raise InvalidInputError(f"kernels must have shape (N, K, K), got {k.shape}")
        if not np.all(np.isfinite(k)):
            raise InvalidInputError("kernels have non-finite taps")
        if self.blur_sigma is not None and not self.blur_sigma > 0:
            raise InvalidInputError("blur_sigma must be positive or None")
        if self.blur_mode not in BLUR_MODES:
            raise InvalidInputError(f"blur_mode must be one of {BLUR_MODES}")
        k.setflags(write=False)
        object.__setattr__(self, "kernels", k)
        h = self.blur
        taper = h / h.max() if h.shape[0] > 1 else np.ones_like(k[0])
        taper.setflags(write=False)
        object.__setattr__(self, "_taper", taper)

    @property
    def num_filters(self):
        return self.kernels.shape[0]

    @property
    def kernel_size(self):
        return self.kernels.shape[1]

    @property
    def blur(self):
        """The window ``h`` (non-negative, sums to one)."""
        if self.blur_sigma is None:
            return np.ones((1, 1))
        return gaussian_window(self.kernel_size, self.blur_sigma)

    @property
    def taper(self):
        """Peak-normalized spatial window applied to the taps in spatial mode."""
        return self._taper

    def with_kernels(self, kernels):
        return FilterBank(kernels, blur_sigma=self.blur_sigma, blur_mode=self.blur_mode)

    def __eq__(self, other):
        if not isinstance(other, FilterBank):
            return NotImplemented
        return (
            self.blur_sigma == other.blur_sigma
            and self.blur_mode == other.blur_mode
            and np.array_equal(self.kernels, other.kernels)
        )

    __hash__ = None


def _check_image(bank, img):
    img = as_image(img)
    if img.shape[0] < bank.kernel_size or img.shape[1] < bank.kernel_size:
        raise InvalidInputError(
            f"image {img.shape} is smaller than the {bank.kernel_size}x{bank.kernel_size} kernels"
        )
    return img


def _check_responses(bank, r):
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 3 or r.shape[0] != bank.num_filters:
        raise InvalidInputError(
            f"response map must have shape ({bank.num_filters}, H, W), got {r.shape}"
        )
    if r.shape[1] < bank.kernel_size or r.shape[2] < bank.kernel_size:
        raise InvalidInputError("response map is smaller than the kernels")
    return r


def apply(bank, img):
    """Response map ``y_i = f_i * x``, shape ``(N, H, W)``."""
    img = _check_image(bank, img)
    spec = sfft.rfft2(img) * kernel_spectrum(bank.kernels, img.shape)
    return sfft.irfft2(spec, s=img.shape)


def reconstruct(bank, r):
    """Transposed synthesis ``sum_i f~_i * y_i`` (the adjoint of :func:`apply`)."""
    r = _check_responses(bank, r)
    shape = r.shape[1:]
    spec = sfft.rfft2(r) * np.conj(kernel_spectrum(bank.kernels, shape))
    return sfft.irfft2(spec.sum(axis=0), s=shape)


def frequency_blur_matrix(n, sigma):
    """Circulant Gaussian blur over ``n`` frequency bins (rows sum to one)."""
    s = n / (2.0 * np.pi * sigma)
    d = np.arange(n)
    d = np.minimum(d, n - d)
    g = np.exp(-0.5 * (d / s) ** 2)
    g /= g.sum()
    idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    return g[idx]


def modulated_gains(bank, shape):
    """Per-filter real gains ``|h . f_i|^2`` on the full ``shape`` frequency grid.

    Returns ``(gains, aux)`` where ``aux`` holds intermediates needed by the
    gradient code in :mod:`lcov.objective`.
    """
    if bank.blur_mode == "spatial":
        g = bank.kernels * bank.taper
        spec = sfft.fft2(embed_kernel(g, shape))
        return np.abs(spec) ** 2, {"spec": spec}
    spec = sfft.fft2(embed_kernel(bank.kernels, shape))
    mag = np.abs(spec)
    if bank.blur_sigma is None:
        by = np.eye(shape[0])
        bx = np.eye(shape[1])
    else:
        by = frequency_blur_matrix(shape[0], bank.blur_sigma)
        bx = frequency_blur_matrix(shape[1], bank.blur_sigma)
    blurred = by @ mag @ bx.T
    return blurred**2, {"spec": spec, "mag": mag, "blurred": blurred, "by": by, "bx": bx}


def modulated_reconstructions(bank, img):
    """Modulated reconstructions ``z~_i = (h f~_i) * (h f_i) * x``, shape ``(N, H, W)``."""
    img = _check_image(bank, img)
    gains, _ = modulated_gains(bank, img.shape)
    return np.real(sfft.ifft2(sfft.fft2(img) * gains))


def oriented_pair(size=9, sigma=1.5, blur_sigma=3.0):
    """Horizontal and vertical first-derivative-of-Gaussian kernels (unit L2 norm)."""
    t = np.arange(size) - anchor(size)
    g = np.exp(-0.5 * (t / sigma) ** 2)
    dg = -t * g
    gx = np.outer(g, dg)
    gy = np.outer(dg, g)
    k = np.stack([gx / np.linalg.norm(gx), gy / np.linalg.norm(gy)])
    return FilterBank(k, blur_sigma=blur_sigma)


def random_bank(num_filters, kernel_size, seed, blur_sigma=3.0, blur_mode="spatial"):
    """Bank with i.i.d. unit-variance Gaussian taps."""
    rng = np.random.default_rng(seed)
    k = rng.standard_normal((num_filters, kernel_size, kernel_size))
    return FilterBank(k, blur_sigma=blur_sigma, blur_mode=blur_mode)
