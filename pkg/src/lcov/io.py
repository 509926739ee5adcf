"""File formats: PGM and raw ``.iml`` images, filter banks, covariance maps.

Binary layouts (all little-endian)::

    filter bank   "LCOVBANK1" | uint32 N | uint32 K | float64 blur_sigma
                  | N*K*K float64 taps (filter-major, row-major)
    covariance    "LCOVMAP1" | uint32 grid_h | uint32 grid_w | uint32 N
                  | uint32 neighborhood | uint32 stride | uint32 image_h
                  | uint32 image_w | uint8 window_kind | uint8 boundary
                  | uint8 diagonal_only | float64 window_sigma
                  | [neighborhood**2 float64 window taps, custom windows only]
                  | per location, the upper-triangular entries (row-major),
                  or only the diagonal for variance maps

A ``blur_sigma`` or ``window_sigma`` of NaN encodes "none".
"""

import math
import os
import re
import struct

import numpy as np

from .covmap import BOUNDARIES, WINDOW_KINDS, CovarianceMap, pair_indices
from .errors import InvalidInputError
from .filterbank import FilterBank

BANK_MAGIC = b"LCOVBANK1"
MAP_MAGIC = b"LCOVMAP1"
_BANK_HEADER = struct.Struct("<9sIId")
_MAP_HEADER = struct.Struct("<8s7I3Bd")

IML_SHAPE = (1024, 1536)
PREPROCESSING = ("none", "mean-subtract", "standardize", "log-standardize")


class FormatError(InvalidInputError):
    """Unreadable, truncated or inconsistent file."""


# -- images -----------------------------------------------------------------

_PNM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*([^\s#]+)")


def _pnm_tokens(data, count, pos=0):
    out = []
    for _ in range(count):
        m = _PNM_TOKEN.match(data, pos)
        if m is None:
            raise FormatError("truncated PGM header")
        out.append(m.group(1))
        pos = m.end()
    return out, pos


def read_pgm(path):
    """Read a binary (P5) or ASCII (P2) PGM with 8- or 16-bit samples."""
    with open(path, "rb") as fh:
        data = fh.read()
    (magic, w, h, maxval), pos = _pnm_tokens(data, 4)
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError(f"bad PGM header in {path}") from exc
    if not 0 < maxval < 65536 or w < 1 or h < 1:
        raise FormatError(f"bad PGM header in {path}")
    if magic == b"P2":
        values = data[pos:].split()
        if len(values) < w * h:
            raise FormatError(f"truncated PGM data in {path}")
        return np.array([int(v) for v in values[: w * h]], dtype=np.float64).reshape(h, w)
    if magic != b"P5":
        raise FormatError(f"{path} is not a grey-level PGM (magic {magic!r})")
    pos += 1  # single whitespace byte after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    nbytes = w * h * dtype.itemsize
    raw = data[pos : pos + nbytes]
    if len(raw) < nbytes:
        raise FormatError(f"truncated PGM data in {path}")
    return np.frombuffer(raw, dtype=dtype).astype(np.float64).reshape(h, w)


def write_pgm(path, pixels, maxval=65535, ascii=False):
    """Write integer samples in ``[0, maxval]`` as PGM (P5 by default)."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise InvalidInputError("PGM images must be 2-D")
    q = np.asarray(np.rint(pixels), dtype=np.int64)
    if q.min() < 0 or q.max() > maxval:
        raise InvalidInputError(f"pixel values must lie in [0, {maxval}]")
    h, w = q.shape
    with open(path, "wb") as fh:
        if ascii:
            fh.write(f"P2\n{w} {h}\n{maxval}\n".encode())
            for row in q:
                fh.write((" ".join(str(int(v)) for v in row) + "\n").encode())
        else:
            fh.write(f"P5\n{w} {h}\n{maxval}\n".encode())
            dtype = ">u2" if maxval > 255 else "u1"
            fh.write(q.astype(dtype).tobytes())


def read_iml(path, shape=IML_SHAPE):
    """Raw ``.iml`` image: headerless 16-bit little-endian samples."""
    expected = shape[0] * shape[1] * 2
    size = os.path.getsize(path)
    if size != expected:
        raise FormatError(f"{path}: expected {expected} bytes for {shape[1]}x{shape[0]}, got {size}")
    with open(path, "rb") as fh:
        raw = fh.read()
    return np.frombuffer(raw, dtype="<u2").astype(np.float64).reshape(shape)


def preprocess(img, mode="none", scale=None):
    """Apply one of ``PREPROCESSING``.

    ``standardize`` subtracts the mean and divides by ``scale`` (the image's
    own standard deviation by default, so callers can pass an ensemble value).
    ``log-standardize`` takes ``log`` of the (floored) intensities first.
    """
    img = np.asarray(img, dtype=np.float64)
    if mode == "none":
        return img.copy()
    if mode == "log-standardize":
        img = np.log(np.maximum(img, 1.0))
        mode = "standardize"
    out = img - img.mean()
    if mode == "mean-subtract":
        return out
    if mode == "standardize":
        s = out.std() if scale is None else scale
        return out / s if s > 0 else out
    raise InvalidInputError(f"unknown preprocessing {mode!r}; choose from {PREPROCESSING}")


def load_image(path, preprocessing="none"):
    ext = os.path.splitext(str(path))[1].lower()
    if ext in (".pgm", ".pnm"):
        img = read_pgm(path)
    elif ext == ".iml":
        img = read_iml(path)
    elif ext == ".npy":
        img = np.asarray(np.load(path), dtype=np.float64)
    else:
        raise FormatError(f"unknown image format {ext!r} (expected .pgm, .iml or .npy)")
    if preprocessing == "log-standardize" and ext != ".iml":
        raise InvalidInputError("log-standardize is only defined for .iml sources")
    return preprocess(img, preprocessing)


def write_image(path, img):
    """Write a real image as 16-bit PGM after affine rescaling to full range.

    The mapping ``value = offset + scale * sample`` is written to
    ``<path>.affine`` so the unquantized values can be recovered.
    """
    img = np.asarray(img, dtype=np.float64)
    lo, hi = float(img.min()), float(img.max())
    scale = (hi - lo) / 65535.0 if hi > lo else 1.0
    write_pgm(path, (img - lo) / scale, maxval=65535)
    with open(str(path) + ".affine", "w") as fh:
        fh.write(f"offset={lo!r}\nscale={scale!r}\n")
    return lo, scale


def read_affine(path):
    vals = {}
    with open(str(path) + ".affine") as fh:
        for line in fh:
            k, _, v = line.strip().partition("=")
            vals[k] = float(v)
    return vals["offset"], vals["scale"]


# -- filter banks -------------------------------------------------------------


def save_bank(path, bank):
    sigma = math.nan if bank.blur_sigma is None else float(bank.blur_sigma)
    header = _BANK_HEADER.pack(BANK_MAGIC, bank.num_filters, bank.kernel_size, sigma)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(bank.kernels, dtype="<f8").tobytes())


def load_bank(path, blur_mode="spatial"):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _BANK_HEADER.size:
        raise FormatError(f"{path}: truncated filter-bank header")
    magic, n, k, sigma = _BANK_HEADER.unpack_from(data)
    if magic != BANK_MAGIC:
        raise FormatError(f"{path}: not a filter-bank file")
    expected = _BANK_HEADER.size + n * k * k * 8
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, got {len(data)}")
    taps = np.frombuffer(data, dtype="<f8", offset=_BANK_HEADER.size).reshape(n, k, k)
    return FilterBank(
        taps.astype(np.float64), blur_sigma=None if math.isnan(sigma) else sigma, blur_mode=blur_mode
    )


# -- covariance maps ------------------------------------------------------------


def save_covmap(path, cm):
    gh, gw = cm.grid_shape
    n = cm.num_filters
    sigma = math.nan if cm.window_sigma is None else float(cm.window_sigma)
    header = _MAP_HEADER.pack(
        MAP_MAGIC,
        gh,
        gw,
        n,
        cm.neighborhood,
        cm.stride,
        cm.image_shape[0],
        cm.image_shape[1],
        WINDOW_KINDS.index(cm.window_kind),
        BOUNDARIES.index(cm.boundary),
        int(cm.diagonal_only),
        sigma,
    )
    if cm.diagonal_only:
        entries = cm.matrices[:, :, np.arange(n), np.arange(n)]
    else:
        iu, ju = pair_indices(n)
        entries = cm.matrices[:, :, iu, ju]
    with open(path, "wb") as fh:
        fh.write(header)
        if cm.window_kind == "custom":
            fh.write(np.ascontiguousarray(cm.window, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(entries, dtype="<f8").tobytes())


def load_covmap(path):
    from .covmap import make_window

    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _MAP_HEADER.size:
        raise FormatError(f"{path}: truncated covariance-map header")
    (magic, gh, gw, n, hood, stride, ih, iw, kind, boundary, diag, sigma) = _MAP_HEADER.unpack_from(
        data
    )
    if magic != MAP_MAGIC:
        raise FormatError(f"{path}: not a covariance-map file")
    if kind >= len(WINDOW_KINDS) or boundary >= len(BOUNDARIES):
        raise FormatError(f"{path}: bad window or boundary code")
    kind = WINDOW_KINDS[kind]
    sigma = None if math.isnan(sigma) else sigma
    pos = _MAP_HEADER.size
    if kind == "custom":
        nbytes = hood * hood * 8
        if len(data) < pos + nbytes:
            raise FormatError(f"{path}: truncated window taps")
        window = np.frombuffer(data, dtype="<f8", count=hood * hood, offset=pos).reshape(hood, hood)
        window = window.astype(np.float64)
        pos += nbytes
    else:
        window = make_window(hood, kind, sigma)
    per = n if diag else n * (n + 1) // 2
    expected = pos + gh * gw * per * 8
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, got {len(data)}")
    entries = np.frombuffer(data, dtype="<f8", offset=pos).reshape(gh, gw, per)
    mats = np.zeros((gh, gw, n, n))
    if diag:
        mats[:, :, np.arange(n), np.arange(n)] = entries
    else:
        iu, ju = pair_indices(n)
        mats[:, :, iu, ju] = entries
        mats[:, :, ju, iu] = entries
    return CovarianceMap(
        mats,
        hood,
        stride,
        window,
        (ih, iw),
        window_kind=kind,
        window_sigma=sigma,
        boundary=BOUNDARIES[boundary],
        diagonal_only=bool(diag),
    )


# -- config files -----------------------------------------------------------------


def read_config(path, valid_keys):
    """Parse ``key=value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip().replace("-", "_")
            if not sep:
                raise InvalidInputError(f"{path}:{lineno}: expected key=value")
            if key not in valid_keys:
                raise InvalidInputError(
                    f"{path}:{lineno}: unknown key {key!r}; valid keys: {', '.join(sorted(valid_keys))}"
                )
            out[key] = value.strip()
    return out
