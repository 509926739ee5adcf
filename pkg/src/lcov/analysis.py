"""Local correlation statistics of filter-response pairs and their controls.

For two response channels the local correlation magnitude in a weighted
window is::

    |rho| = |sum w y1 y2| / sqrt(sum w y1^2 * sum w y2^2)

Responses of band-pass filters are treated as zero-mean, so no mean is
removed unless ``subtract_mean=True``.
"""

import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidInputError
from .filterbank import FilterBank, apply
from .signal import gaussian_window, phase_randomize, phase_randomize_kernel

DEGENERATE_RTOL = 1e-12


@dataclass(frozen=True)
class CorrelationMap:
    """``values`` holds ``|rho|`` per window; degenerate windows hold 0 and
    are flagged in ``degenerate``."""

    values: np.ndarray
    degenerate: np.ndarray
    window_size: int
    stride: int

    def valid_values(self):
        return self.values[~self.degenerate]


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    total: int
    excluded: int
    median: float

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_left", "bin_right", "count"])
            for left, right, c in zip(self.edges[:-1], self.edges[1:], self.counts):
                writer.writerow([repr(float(left)), repr(float(right)), int(c)])


class ControlSuite(NamedTuple):
    image: Histogram
    noise_image: Histogram
    randomized_filters: Histogram


def _window_sums(a, window, stride):
    k = window.shape[0]
    view = sliding_window_view(a, (k, k))[::stride, ::stride]
    return np.einsum("abij,ij->ab", view, window)


def local_correlation(r, window=None, stride=8, subtract_mean=False):
    """Map of local correlation magnitudes between the two channels of ``r``.

    ``window`` defaults to a 16x16 Gaussian with standard deviation 3. Only
    windows lying entirely inside the map are evaluated.
    """
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 3 or r.shape[0] != 2:
        raise InvalidInputError(f"local_correlation needs exactly 2 channels, got shape {r.shape}")
    if window is None:
        window = gaussian_window(16, 3.0)
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2 or window.shape[0] != window.shape[1]:
        raise InvalidInputError("window must be square")
    if window.shape[0] > min(r.shape[1:]):
        raise InvalidInputError("window is larger than the response map")
    if stride < 1:
        raise InvalidInputError("stride must be >= 1")
    y1, y2 = r
    s11 = _window_sums(y1 * y1, window, stride)
    s22 = _window_sums(y2 * y2, window, stride)
    s12 = _window_sums(y1 * y2, window, stride)
    if subtract_mean:
        wsum = window.sum()
        m1 = _window_sums(y1, window, stride) / wsum
        m2 = _window_sums(y2, window, stride) / wsum
        s11 = s11 - wsum * m1 * m1
        s22 = s22 - wsum * m2 * m2
        s12 = s12 - wsum * m1 * m2
    floor = DEGENERATE_RTOL * max(float(np.mean(s11)), float(np.mean(s22)), np.finfo(float).tiny)
    degenerate = (s11 < floor) | (s22 < floor)
    denom = np.sqrt(np.where(degenerate, 1.0, s11 * s22))
    rho = np.where(degenerate, 0.0, np.abs(s12) / denom)
    return CorrelationMap(np.clip(rho, 0.0, 1.0), degenerate, window.shape[0], stride)


def correlation_histogram(m, bins=20):
    """Histogram of ``|rho|`` over ``[0, 1]``; degenerate windows are excluded."""
    if bins < 2:
        raise InvalidInputError("bins must be >= 2")
    vals = m.valid_values()
    edges = np.linspace(0.0, 1.0, bins + 1)
    counts, _ = np.histogram(vals, bins=edges)
    median = float(np.median(vals)) if vals.size else float("nan")
    return Histogram(edges, counts, int(vals.size), int(m.degenerate.sum()), median)


def pair_correlation(img, pair, window=None, stride=8, subtract_mean=False):
    return local_correlation(apply(pair, img), window, stride, subtract_mean)


def run_control_suite(img, pair, seed, window=None, stride=8, bins=20):
    """Histograms for the pair on ``img``, on phase-randomized ``img``, and for
    phase-randomized filters on ``img``."""
    if pair.num_filters != 2:
        raise InvalidInputError("run_control_suite needs a 2-filter bank")
    rng = np.random.default_rng(seed)
    img_seed, k_seed0, k_seed1 = (int(s) for s in rng.integers(0, 2**63 - 1, size=3))
    noise = phase_randomize(img, img_seed)
    scrambled = FilterBank(
        np.stack(
            [
                phase_randomize_kernel(pair.kernels[0], k_seed0),
                phase_randomize_kernel(pair.kernels[1], k_seed1),
            ]
        ),
        blur_sigma=pair.blur_sigma,
        blur_mode=pair.blur_mode,
    )
    return ControlSuite(
        correlation_histogram(pair_correlation(img, pair, window, stride), bins),
        correlation_histogram(pair_correlation(noise, pair, window, stride), bins),
        correlation_histogram(pair_correlation(img, scrambled, window, stride), bins),
    )


def best_pair_median(img, bank, window=None, stride=8):
    """Largest median ``|rho|`` over all filter pairs of ``bank`` on ``img``."""
    y = apply(bank, img)
    best = 0.0
    n = bank.num_filters
    for i in range(n):
        for j in range(i + 1, n):
            m = local_correlation(y[[i, j]], window, stride)
            vals = m.valid_values()
            if vals.size:
                best = max(best, float(np.median(vals)))
    return best
