"""Circular 2-D convolution, FFTs, windows and phase randomization.

Conventions used throughout the package:

* Images are 2-D ``float64`` arrays; kernels are small 2-D arrays.
* Convolution is circular. A kernel's anchor (the tap applied at zero
  offset) is index ``K // 2`` along each axis, so convolving a centred delta
  image reproduces the kernel centred on the delta.
* ``fft2`` is unnormalized and ``ifft2`` carries the ``1/(H*W)`` factor, so
  ``sum(x**2) == sum(abs(fft2(x))**2) / (H*W)``.

``scipy.fft`` honours ``scipy.fft.set_workers`` which is thread-local, so the
CLI's thread limit never leaks between callers.
"""

import numpy as np
import scipy.fft as sfft

from .errors import InvalidInputError


def as_image(img, name="image"):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise InvalidInputError(f"{name} must be a non-empty 2-D array, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise InvalidInputError(f"{name} has non-finite values")
    return img


def anchor(size):
    return size // 2


def embed_kernel(k, shape):
    """Place kernel taps on a grid of ``shape`` with the anchor at the origin.

    Tap ``(u, v)`` lands at ``((u - cu) mod H, (v - cv) mod W)``. Works on
    stacks of kernels (leading axes are preserved).
    """
    k = np.asarray(k, dtype=np.float64)
    kh, kw = k.shape[-2:]
    h, w = shape
    if kh > h or kw > w:
        raise InvalidInputError(f"kernel {kh}x{kw} is larger than image {h}x{w}")
    out = np.zeros(k.shape[:-2] + (h, w))
    rows = (np.arange(kh) - anchor(kh)) % h
    cols = (np.arange(kw) - anchor(kw)) % w
    out[..., rows[:, None], cols[None, :]] = k
    return out


def extract_kernel(grid, ksize):
    """Inverse of :func:`embed_kernel`: gather the taps of a ``ksize`` kernel."""
    kh, kw = ksize
    h, w = grid.shape[-2:]
    rows = (np.arange(kh) - anchor(kh)) % h
    cols = (np.arange(kw) - anchor(kw)) % w
    return grid[..., rows[:, None], cols[None, :]]


def kernel_spectrum(k, shape):
    """Real-FFT spectrum of a kernel (or stack) embedded at image resolution."""
    return sfft.rfft2(embed_kernel(k, shape))


def _check_pair(img, k):
    img = as_image(img)
    k = np.asarray(k, dtype=np.float64)
    if k.ndim != 2:
        raise InvalidInputError(f"kernel must be 2-D, got shape {k.shape}")
    if not np.all(np.isfinite(k)):
        raise InvalidInputError("kernel has non-finite taps")
    if k.shape[0] > img.shape[0] or k.shape[1] > img.shape[1]:
        raise InvalidInputError(f"kernel {k.shape} is larger than image {img.shape}")
    return img, k


def convolve(img, k, boundary="circular"):
    """Circular convolution ``y(t) = sum_u k[u] x(t - (u - anchor))``."""
    if boundary != "circular":
        raise InvalidInputError(f"unsupported boundary {boundary!r}; only 'circular'")
    img, k = _check_pair(img, k)
    spec = sfft.rfft2(img) * kernel_spectrum(k, img.shape)
    return sfft.irfft2(spec, s=img.shape)


def adjoint_convolve(img, k):
    """Adjoint of :func:`convolve` (circular correlation with ``k``).

    For odd-sized kernels this equals convolving with the spatially reversed
    kernel. For even sizes the reversed kernel's anchor is off by one pixel,
    so the exact adjoint is computed in the Fourier domain instead.
    """
    img, k = _check_pair(img, k)
    spec = sfft.rfft2(img) * np.conj(kernel_spectrum(k, img.shape))
    return sfft.irfft2(spec, s=img.shape)


def kernel_gradient(x, r, ksize):
    """Gradient of ``<r, convolve(x, k)>`` with respect to the taps of ``k``.

    ``x`` and ``r`` may be stacks with matching leading axes; the result has
    shape ``leading + ksize``.
    """
    x = np.asarray(x, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    shape = x.shape[-2:]
    corr = sfft.irfft2(sfft.rfft2(r) * np.conj(sfft.rfft2(x)), s=shape)
    return extract_kernel(corr, ksize)


def fft2(img):
    """Unnormalized forward 2-D DFT."""
    return sfft.fft2(as_image(img))


def ifft2(spectrum):
    """Inverse of :func:`fft2` (includes the 1/(H*W) factor); returns the real part."""
    spectrum = np.asarray(spectrum, dtype=np.complex128)
    return np.real(sfft.ifft2(spectrum))


def gaussian_window(size, sigma):
    """``size`` x ``size`` Gaussian centred at ``(size - 1) / 2``, summing to 1."""
    if not sigma > 0:
        raise InvalidInputError("sigma must be positive")
    if size < 1:
        raise InvalidInputError("window size must be at least 1")
    t = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (t / sigma) ** 2)
    w = np.outer(g, g)
    return w / w.sum()


def _self_conjugate_mask(shape):
    """Bins equal to their own negation (DC and, for even sizes, Nyquist)."""
    mask = np.zeros(shape, dtype=bool)
    rows = [0] + ([shape[0] // 2] if shape[0] % 2 == 0 else [])
    cols = [0] + ([shape[1] // 2] if shape[1] % 2 == 0 else [])
    for i in rows:
        for j in cols:
            mask[i, j] = True
    return mask


def random_phases(shape, seed):
    """Uniform random phases with Hermitian symmetry.

    Phases are taken from the DFT of Gaussian white noise, which is
    Hermitian-symmetric with uniformly distributed phase; self-conjugate bins
    get phase zero so they keep their original (real) value.
    """
    rng = np.random.default_rng(seed)
    phase = np.angle(sfft.fft2(rng.standard_normal(shape)))
    phase[_self_conjugate_mask(shape)] = 0.0
    return phase


def phase_randomize(img, seed):
    """Image with the Fourier magnitudes of ``img`` and random phases."""
    img = as_image(img)
    spec = sfft.fft2(img)
    mag = np.abs(spec)
    # self-conjugate bins are real; keep their sign so DC is preserved exactly
    sign = np.where(np.real(spec) < 0, -1.0, 1.0)
    phase = random_phases(img.shape, seed)
    out = mag * np.exp(1j * phase)
    sc = _self_conjugate_mask(img.shape)
    out[sc] = (sign * mag)[sc]
    return np.real(sfft.ifft2(out))


def phase_randomize_kernel(k, seed):
    """:func:`phase_randomize` applied to a kernel's tap grid."""
    return phase_randomize(k, seed)
