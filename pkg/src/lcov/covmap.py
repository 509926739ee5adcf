"""Local covariance maps of filter responses and edits of their spectra.

A covariance map samples, on a grid with spacing ``stride``, the weighted
second-moment matrix of the response vectors in a ``neighborhood`` x
``neighborhood`` window::

    C_P = sum_t w(t) y(t) y(t)^T

Windows wrap around the image edges by default (``boundary="circular"``), so
a map of an ``H x W`` image has ``ceil(H/stride) * ceil(W/stride)``
locations. ``boundary="valid"`` keeps only windows that fit inside the image.
"""

from dataclasses import dataclass, replace

import numpy as np
import scipy.fft as sfft

from .errors import InvalidInputError
from .linalg import eig_sym_batch, reconstruct_sym
from .signal import anchor, embed_kernel, gaussian_window

WINDOW_KINDS = ("gaussian", "boxcar", "custom")
BOUNDARIES = ("circular", "valid")


def make_window(neighborhood, kind="gaussian", sigma=None):
    if kind == "gaussian":
        return gaussian_window(neighborhood, sigma if sigma is not None else neighborhood / 4.0)
    if kind == "boxcar":
        return np.full((neighborhood, neighborhood), 1.0 / neighborhood**2)
    raise InvalidInputError(f"cannot build a {kind!r} window from a descriptor")


@dataclass(frozen=True, eq=False)
class CovarianceMap:
    """Grid of symmetric ``N x N`` matrices, shape ``(gh, gw, N, N)``.

    ``diagonal_only`` marks maps reduced to local variances; only their
    diagonals count as measurements.
    """

    matrices: np.ndarray
    neighborhood: int
    stride: int
    window: np.ndarray
    image_shape: tuple
    window_kind: str = "gaussian"
    window_sigma: float | None = None
    boundary: str = "circular"
    diagonal_only: bool = False

    def __post_init__(self):
        m = np.asarray(self.matrices, dtype=np.float64)
        if m.ndim != 4 or m.shape[2] != m.shape[3]:
            raise InvalidInputError(f"matrices must have shape (gh, gw, N, N), got {m.shape}")
        object.__setattr__(self, "matrices", m)
        object.__setattr__(self, "image_shape", tuple(int(v) for v in self.image_shape))

    @property
    def grid_shape(self):
        return self.matrices.shape[:2]

    @property
    def num_filters(self):
        return self.matrices.shape[2]

    @property
    def num_locations(self):
        return self.grid_shape[0] * self.grid_shape[1]

    def with_matrices(self, matrices, **changes):
        return replace(self, matrices=matrices, **changes)

    def same_layout(self, other):
        return (
            self.matrices.shape == other.matrices.shape
            and self.neighborhood == other.neighborhood
            and self.stride == other.stride
            and self.image_shape == other.image_shape
            and self.boundary == other.boundary
            and np.array_equal(self.window, other.window)
        )

    def __eq__(self, other):
        if not isinstance(other, CovarianceMap):
            return NotImplemented
        return (
            self.same_layout(other)
            and self.window_kind == other.window_kind
            and self.window_sigma == other.window_sigma
            and self.diagonal_only == other.diagonal_only
            and np.array_equal(self.matrices, other.matrices)
        )

    __hash__ = None


@dataclass(frozen=True)
class MeasurementCount:
    locations: int
    per_location: int
    total: int


def pair_indices(n):
    """Upper-triangular ``(i, j)`` index arrays, row-major, diagonal included."""
    return np.triu_indices(n)


def _sample_positions(shape, neighborhood, stride, boundary):
    """Pixel positions (anchor of each window) along both axes."""
    out = []
    for size in shape:
        if boundary == "circular":
            out.append(np.arange(0, size, stride))
        else:
            n = (size - neighborhood) // stride + 1
            if n < 1:
                raise InvalidInputError("neighborhood does not fit in the response map")
            out.append(stride * np.arange(n) + anchor(neighborhood))
    return out


def _window_spectrum(window, shape):
    return sfft.rfft2(embed_kernel(window, shape))


def _resolve_window(neighborhood, window, window_kind, window_sigma):
    if window is None:
        window = make_window(neighborhood, window_kind, window_sigma)
        if window_kind == "gaussian" and window_sigma is None:
            window_sigma = neighborhood / 4.0
    else:
        window = np.asarray(window, dtype=np.float64)
        window_kind = "custom" if window_kind == "gaussian" and window_sigma is None else window_kind
    if window.shape != (neighborhood, neighborhood):
        raise InvalidInputError("window size must equal the neighborhood size")
    if np.any(window < 0) or not np.all(np.isfinite(window)):
        raise InvalidInputError("window taps must be finite and non-negative")
    return window, window_kind, window_sigma


def extract(
    r,
    neighborhood,
    stride,
    window=None,
    window_kind="gaussian",
    window_sigma=None,
    boundary="circular",
):
    """Covariance map of a response map ``r`` of shape ``(N, H, W)``.

    ``window`` defaults to a Gaussian with standard deviation
    ``neighborhood / 4`` (override with ``window_sigma`` or
    ``window_kind="boxcar"``).
    """
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 3:
        raise InvalidInputError(f"response map must be (N, H, W), got {r.shape}")
    if boundary not in BOUNDARIES:
        raise InvalidInputError(f"boundary must be one of {BOUNDARIES}")
    if stride < 1:
        raise InvalidInputError("stride must be >= 1")
    shape = r.shape[1:]
    if neighborhood < 1 or neighborhood > min(shape):
        raise InvalidInputError("neighborhood must be between 1 and the map size")
    window, window_kind, window_sigma = _resolve_window(neighborhood, window, window_kind, window_sigma)
    n = r.shape[0]
    iu, ju = pair_indices(n)
    rows, cols = _sample_positions(shape, neighborhood, stride, boundary)
    local = _local_sums(r[iu] * r[ju], window, shape)[:, rows[:, None], cols[None, :]]
    mats = np.zeros((len(rows), len(cols), n, n))
    mats[:, :, iu, ju] = np.moveaxis(local, 0, -1)
    mats[:, :, ju, iu] = np.moveaxis(local, 0, -1)
    return CovarianceMap(
        mats,
        neighborhood,
        stride,
        window,
        shape,
        window_kind=window_kind,
        window_sigma=window_sigma,
        boundary=boundary,
    )


def _local_sums(products, window, shape):
    """``sum_u w[u] p(t + u - anchor)`` for a stack of product maps."""
    spec = sfft.rfft2(products) * np.conj(_window_spectrum(window, shape))
    return sfft.irfft2(spec, s=shape)


def extract_adjoint(cm, weights):
    """Pull per-entry weights on the grid back to pixel space.

    ``weights`` has shape ``(gh, gw, M)`` over the upper-triangular pairs.
    Returns the ``(M, H, W)`` maps ``A_m(t) = sum_P weights[P, m] w_P(t)``, so
    that ``sum_P,m weights[P, m] C_P[m] = sum_t,m A_m(t) y_i(t) y_j(t)``.
    """
    shape = cm.image_shape
    rows, cols = _sample_positions(shape, cm.neighborhood, cm.stride, cm.boundary)
    up = np.zeros((weights.shape[-1],) + shape)
    up[:, rows[:, None], cols[None, :]] = np.moveaxis(weights, -1, 0)
    spec = sfft.rfft2(up) * _window_spectrum(cm.window, shape)
    return sfft.irfft2(spec, s=shape)


def count_measurements(cm):
    n = cm.num_filters
    per = n if cm.diagonal_only else n * (n + 1) // 2
    return MeasurementCount(cm.num_locations, per, cm.num_locations * per)


def _spectra(cm):
    vals, vecs = eig_sym_batch(cm.matrices)
    # eigenvalues within round-off of zero are zero; p < 1 powers would inflate them
    tol = cm.num_filters * np.finfo(np.float64).eps * np.max(np.abs(vals), axis=-1, keepdims=True)
    return np.where(vals > tol, vals, 0.0), vecs


def eig_threshold_fixed(cm, tau):
    """Zero every eigenvalue below ``tau``."""
    if tau < 0:
        raise InvalidInputError("tau must be non-negative")
    vals, vecs = _spectra(cm)
    vals = np.where(vals < tau, 0.0, vals)
    return cm.with_matrices(reconstruct_sym(vals, vecs))


def eig_threshold_adaptive(cm, fraction, exclude="largest", lowpass_channel=0):
    """Threshold at ``fraction`` times the local energy.

    The local energy is the eigenvalue sum without the eigenvalue attributed
    to mean luminance: the largest one (``exclude="largest"``), or the one
    whose eigenvector loads most on ``lowpass_channel``
    (``exclude="lowpass"``). That eigenvalue is always kept.
    """
    if fraction < 0:
        raise InvalidInputError("fraction must be non-negative")
    vals, vecs = _spectra(cm)
    if exclude == "largest":
        top = np.zeros(vals.shape[:-1], dtype=int)
    elif exclude == "lowpass":
        top = np.argmax(np.abs(vecs[..., lowpass_channel, :]), axis=-1)
    else:
        raise InvalidInputError("exclude must be 'largest' or 'lowpass'")
    is_top = np.arange(vals.shape[-1]) == top[..., None]
    energy = np.sum(np.where(is_top, 0.0, vals), axis=-1)
    thr = fraction * energy
    keep = is_top | (vals >= thr[..., None])
    return cm.with_matrices(reconstruct_sym(np.where(keep, vals, 0.0), vecs))


def eig_power(cm, p):
    """Raise every eigenvalue to the power ``p`` (``0 ** p == 0``)."""
    if not p > 0:
        raise InvalidInputError("p must be positive")
    vals, vecs = _spectra(cm)
    vals = np.where(vals > 0, vals ** p, 0.0)
    return cm.with_matrices(reconstruct_sym(vals, vecs))


def restrict_to_variances(cm):
    """Keep only the local variances (diagonals)."""
    n = cm.num_filters
    mats = cm.matrices * np.eye(n)
    return cm.with_matrices(mats, diagonal_only=True)


def participation_ratio(vals):
    vals = np.asarray(vals, dtype=np.float64)
    return np.sum(vals, axis=-1) ** 2 / np.sum(vals**2, axis=-1)
