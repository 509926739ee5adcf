"""Training energy for a filter bank and its gradient with respect to the taps.

The energy has three parts::

    E = E_local_dim + lam * E_recons + mu * E_global_dim

* ``E_local_dim`` sums nuclear norms of Gaussian-weighted patch matrices of
  the responses (rows = filters, columns = pixels of the patch);
* ``E_recons`` is the squared error of the transposed-bank reconstruction;
* ``E_global_dim`` is minus the nuclear norm of the modulated reconstructions
  over the whole image.
"""

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidInputError
from .filterbank import apply, modulated_gains, reconstruct
from .linalg import nuclear_norm_batch
from .signal import as_image, extract_kernel, gaussian_window, kernel_gradient


@dataclass(frozen=True)
class PatchSpec:
    """Tiling of the response map into Gaussian-weighted patches.

    Patches start at ``origin`` and step by ``stride``; patches that would
    cross the end of the analysed region (``extent`` pixels from ``origin``,
    or the map boundary) are dropped.
    """

    patch_size: int = 16
    stride: int = 8
    sigma: float = 3.0
    origin: tuple = (0, 0)
    extent: tuple | None = None

    def __post_init__(self):
        if self.patch_size < 1:
            raise InvalidInputError("patch_size must be >= 1")
        if not 1 <= self.stride <= self.patch_size:
            raise InvalidInputError("stride must satisfy 1 <= stride <= patch_size")
        if not self.sigma > 0:
            raise InvalidInputError("sigma must be positive")

    @property
    def weight_window(self):
        return gaussian_window(self.patch_size, self.sigma)

    def grid(self, shape):
        """Top-left corners ``(rows, cols)`` of all patches on a map of ``shape``."""
        corners = []
        for axis in range(2):
            start = self.origin[axis]
            end = shape[axis] if self.extent is None else min(shape[axis], start + self.extent[axis])
            n = (end - start - self.patch_size) // self.stride + 1
            corners.append(start + self.stride * np.arange(max(n, 0)))
        return corners


@dataclass(frozen=True)
class EnergyBreakdown:
    local_dim: float
    recons: float
    global_dim: float
    total: float
    lam: float
    mu: float


def _patches(r, spec):
    rows, cols = spec.grid(r.shape[1:])
    if len(rows) == 0 or len(cols) == 0:
        raise InvalidInputError(
            f"no {spec.patch_size}x{spec.patch_size} patch fits in a map of shape {r.shape[1:]}"
        )
    p = spec.patch_size
    view = sliding_window_view(r, (p, p), axis=(1, 2))
    view = view[:, rows[0] : rows[-1] + 1 : spec.stride, cols[0] : cols[-1] + 1 : spec.stride]
    # (gh, gw, N, P, P)
    return np.moveaxis(view, 0, 2), rows, cols


def local_dim_energy(r, spec):
    """Sum of patch nuclear norms and its gradient with respect to ``r``."""
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 3:
        raise InvalidInputError(f"response map must be (N, H, W), got {r.shape}")
    n = r.shape[0]
    p = spec.patch_size
    view, rows, cols = _patches(r, spec)
    sw = np.sqrt(spec.weight_window)
    ymat = (view * sw).reshape(len(rows), len(cols), n, p * p)
    norms, sub = nuclear_norm_batch(ymat)
    sub = sub.reshape(len(rows), len(cols), n, p, p) * sw

    grad = np.zeros_like(r)
    s = spec.stride
    if len(rows) * len(cols) <= p * p:
        for a, r0 in enumerate(rows):
            for b, c0 in enumerate(cols):
                grad[:, r0 : r0 + p, c0 : c0 + p] += sub[a, b]
    else:
        r0, c0 = rows[0], cols[0]
        rspan = s * (len(rows) - 1) + 1
        cspan = s * (len(cols) - 1) + 1
        for u in range(p):
            for v in range(p):
                grad[:, r0 + u : r0 + u + rspan : s, c0 + v : c0 + v + cspan : s] += np.moveaxis(
                    sub[:, :, :, u, v], 2, 0
                )
    return float(norms.sum()), grad


def recons_energy(img, bank, r):
    """Squared reconstruction error and its gradient with respect to ``r``."""
    img = as_image(img)
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (bank.num_filters,) + img.shape:
        raise InvalidInputError(
            f"responses {r.shape} do not match bank/image {(bank.num_filters,) + img.shape}"
        )
    residual = img - reconstruct(bank, r)
    return float(np.sum(residual**2)), -2.0 * apply(bank, residual)


def _modulated_stack(img, bank):
    gains, aux = modulated_gains(bank, img.shape)
    ximg = sfft.fft2(img)
    z = np.real(sfft.ifft2(ximg * gains))
    return z, ximg, aux


def global_dim_energy(img, bank):
    """``-||Z~||_*`` and its gradient with respect to the filter taps."""
    img = as_image(img)
    if img.shape[0] < bank.kernel_size or img.shape[1] < bank.kernel_size:
        raise InvalidInputError("image is smaller than the kernels")
    z, ximg, aux = _modulated_stack(img, bank)
    n = bank.num_filters
    hw = img.shape[0] * img.shape[1]
    norm, sub = nuclear_norm_batch(z.reshape(n, hw))
    dz = -sub.reshape(z.shape)
    # dE/dgain(w), real part only: conjugate bins pair up and cancel the rest
    dgain = np.real(ximg * np.conj(sfft.fft2(dz))) / hw
    k = bank.kernel_size
    if bank.blur_mode == "spatial":
        spec = aux["spec"]
        grid = 2.0 * np.real(sfft.fft2(dgain * np.conj(spec)))
        grad = extract_kernel(grid, (k, k)) * bank.taper
    else:
        spec, mag, blurred = aux["spec"], aux["mag"], aux["blurred"]
        dblur = 2.0 * blurred * dgain
        dmag = aux["by"].T @ dblur @ aux["bx"]
        safe = np.where(mag > 0, mag, 1.0)
        coef = np.where(mag > 0, dmag / safe, 0.0)
        grid = np.real(sfft.fft2(coef * np.conj(spec)))
        grad = extract_kernel(grid, (k, k))
    return -float(norm), grad


def total_energy_and_gradient(img, bank, spec, lam, mu):
    """Full training energy and its gradient with respect to every tap.

    The reconstruction term depends on the taps twice (analysis and the
    transposed synthesis); both paths are included.
    """
    if lam < 0 or mu < 0:
        raise InvalidInputError("lam and mu must be non-negative")
    img = as_image(img)
    k = bank.kernel_size
    y = apply(bank, img)
    e_local, dy = local_dim_energy(y, spec)
    grad = np.zeros_like(bank.kernels)
    e_rec = 0.0
    if lam > 0:
        residual = img - reconstruct(bank, y)
        e_rec = float(np.sum(residual**2))
        dy = dy - 2.0 * lam * apply(bank, residual)
        grad -= 2.0 * lam * kernel_gradient(residual, y, (k, k))
    grad += kernel_gradient(img, dy, (k, k))
    if mu > 0:
        e_glob, g_glob = global_dim_energy(img, bank)
        grad += mu * g_glob
    else:
        e_glob = global_dim_energy(img, bank)[0]
    total = e_local + lam * e_rec + mu * e_glob
    return EnergyBreakdown(e_local, e_rec, e_glob, total, lam, mu), grad


def total_energy(img, bank, spec, lam, mu):
    """Energy only, without the gradient work."""
    img = as_image(img)
    y = apply(bank, img)
    view, rows, cols = _patches(y, spec)
    n, p = bank.num_filters, spec.patch_size
    ymat = (view * np.sqrt(spec.weight_window)).reshape(len(rows), len(cols), n, p * p)
    e_local = float(nuclear_norm_batch(ymat, with_grad=False)[0].sum())
    e_rec = float(np.sum((img - reconstruct(bank, y)) ** 2))
    z, _, _ = _modulated_stack(img, bank)
    e_glob = -float(nuclear_norm_batch(z.reshape(n, -1), with_grad=False)[0])
    total = e_local + lam * e_rec + mu * e_glob
    return EnergyBreakdown(e_local, e_rec, e_glob, total, lam, mu)
