"""Image grid, disc/ring measurement kernels and local measurements.

Coordinates follow the image convention used across the package: ``x`` is the
column index, ``y`` the row index, and pixel centres sit on integer
coordinates. Images are 2-D float64 numpy arrays of shape ``(height, width)``.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels


class GeometryError(ValueError):
    """Invalid kernel geometry (radius or ring ratio out of range)."""


class MeasurementUnavailable(ValueError):
    """Not enough usable pixels to take a measurement at a location."""


MAD_SCALE = kernels.MAD_SCALE
MIN_RING_SAMPLES = kernels.MIN_MAD_SAMPLES
SIGMA_FLOOR_FRACTION = 1e-6


def as_image(data):
    """Validate ``data`` as an image and return it as a read-only float64 array.

    Raises
    ------
    ValueError
        If the array is not 2-D, is empty, or holds non-finite values.
    """
    img = np.array(data, dtype=np.float64, copy=True)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"image must be a non-empty 2-D array, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite intensities")
    img.setflags(write=False)
    return img


def disc_offsets(radius):
    """Integer offsets ``(dy, dx)`` with ``dy**2 + dx**2 <= radius**2``."""
    n = int(np.floor(radius))
    dy, dx = np.mgrid[-n:n + 1, -n:n + 1]
    keep = dy * dy + dx * dx <= radius * radius
    return np.column_stack([dy[keep], dx[keep]]).astype(np.int64)


def ring_offsets(radius, outer):
    """Integer offsets with ``radius**2 < dy**2 + dx**2 <= outer**2``."""
    n = int(np.floor(outer))
    dy, dx = np.mgrid[-n:n + 1, -n:n + 1]
    d2 = dy * dy + dx * dx
    keep = (d2 > radius * radius) & (d2 <= outer * outer)
    return np.column_stack([dy[keep], dx[keep]]).astype(np.int64)


@dataclass(frozen=True)
class MeasureKernels:
    """Inner disc of radius ``radius`` and ring ``radius < d <= alpha*radius``."""

    radius: float
    alpha: float
    inner: np.ndarray = field(repr=False)
    ring: np.ndarray = field(repr=False)
    norm_diff: float

    @property
    def margin(self):
        """Largest offset component; pixels closer than this to a border are not tested."""
        return kernels.offsets_margin(self.ring)

    @property
    def outer_radius(self):
        return self.alpha * self.radius

    def fits(self, shape, x, y):
        m = self.margin
        return m <= x < shape[1] - m and m <= y < shape[0] - m


def build_kernels(radius, alpha):
    """Build the discrete disc and ring masks for radius ``radius`` and ratio ``alpha``.

    ``norm_diff`` is ``sqrt(1/|inner| + 1/|ring|)``, the standard deviation of
    ``m1 - m2`` under unit-variance white noise.
    """
    if not np.isfinite(radius) or radius < 1:
        raise GeometryError(f"inner radius must be >= 1 pixel, got {radius}")
    if not np.isfinite(alpha) or alpha <= 1:
        raise GeometryError(f"ring ratio alpha must be > 1, got {alpha}")
    inner = disc_offsets(radius)
    ring = ring_offsets(radius, alpha * radius)
    if len(ring) == 0:
        raise GeometryError(f"ring is empty for radius={radius}, alpha={alpha}")
    inner.setflags(write=False)
    ring.setflags(write=False)
    norm_diff = float(np.sqrt(1.0 / len(inner) + 1.0 / len(ring)))
    return MeasureKernels(float(radius), float(alpha), inner, ring, norm_diff)


def _gather(img, offsets, x, y, hidden):
    ys = y + offsets[:, 0]
    xs = x + offsets[:, 1]
    if ys.min() < 0 or xs.min() < 0 or ys.max() >= img.shape[0] or xs.max() >= img.shape[1]:
        raise MeasurementUnavailable(f"mask around ({x}, {y}) leaves the image")
    vals = img[ys, xs]
    if hidden is not None:
        vals = vals[~hidden[ys, xs]]
    return vals


def measure_at(img, k, x, y, hidden=None):
    """Mean intensity over the inner disc (``m1``) and the ring (``m2``) at ``(x, y)``.

    Pixels flagged in the boolean mask ``hidden`` are left out of both means.

    Raises
    ------
    MeasurementUnavailable
        If the ring leaves the image, every inner pixel is hidden, or every
        ring pixel is hidden.
    """
    inner = _gather(img, k.inner, x, y, hidden)
    ring = _gather(img, k.ring, x, y, hidden)
    if inner.size == 0:
        raise MeasurementUnavailable(f"all inner pixels hidden at ({x}, {y})")
    if ring.size == 0:
        raise MeasurementUnavailable(f"all ring pixels hidden at ({x}, {y})")
    return float(inner.mean()), float(ring.mean())


def sigma_floor(img):
    """Smallest admissible noise scale for ``img``: a millionth of its dynamic range."""
    span = float(np.max(img) - np.min(img))
    return SIGMA_FLOOR_FRACTION * (span if span > 0 else 1.0)


def robust_scale(values):
    """Scaled median absolute deviation about the median."""
    values = np.asarray(values, dtype=np.float64)
    med = np.median(values)
    return MAD_SCALE * float(np.median(np.abs(values - med)))


def local_sigma(img, k, x, y, hidden=None):
    """Robust local noise scale from the ring pixels around ``(x, y)``.

    Returns ``1.4826 * MAD`` of the non-hidden ring pixels, floored at
    :func:`sigma_floor`.
    """
    ring = _gather(img, k.ring, x, y, hidden)
    if ring.size < MIN_RING_SAMPLES:
        raise MeasurementUnavailable(
            f"only {ring.size} usable ring pixels at ({x}, {y}), need {MIN_RING_SAMPLES}")
    return max(robust_scale(ring), sigma_floor(img))


def estimate_noise(img):
    """Global white-noise standard deviation, robust to smooth backgrounds and sparse spots.

    Uses the scaled MAD of horizontal and vertical first differences divided
    by sqrt(2). Falls back to :func:`sigma_floor` for flat images.
    """
    img = np.asarray(img, dtype=np.float64)
    diffs = []
    if img.shape[1] > 1:
        diffs.append(np.diff(img, axis=1).ravel())
    if img.shape[0] > 1:
        diffs.append(np.diff(img, axis=0).ravel())
    if not diffs:
        return sigma_floor(img)
    d = np.concatenate(diffs)
    return max(robust_scale(d) / np.sqrt(2.0), sigma_floor(img))


def measure_maps(img, k):
    """``m1`` and ``m2`` at every interior pixel (see :mod:`acontrario.kernels`)."""
    img = np.ascontiguousarray(img, dtype=np.float64)
    m = k.margin
    if img.shape[0] <= 2 * m or img.shape[1] <= 2 * m:
        empty = np.empty((max(0, img.shape[0] - 2 * m), max(0, img.shape[1] - 2 * m)))
        return empty, empty.copy()
    m1 = kernels.mask_mean_map(img, np.ascontiguousarray(k.inner), m)
    m2 = kernels.mask_mean_map(img, np.ascontiguousarray(k.ring), m)
    return m1, m2


def local_sigma_map(img, k, hidden=None):
    """:func:`local_sigma` at every interior pixel; NaN where too few ring pixels remain."""
    img = np.ascontiguousarray(img, dtype=np.float64)
    m = k.margin
    if img.shape[0] <= 2 * m or img.shape[1] <= 2 * m:
        return np.empty((max(0, img.shape[0] - 2 * m), max(0, img.shape[1] - 2 * m)))
    if hidden is None:
        hidden = np.zeros(img.shape, dtype=np.bool_)
    out = kernels.ring_mad_map(img, np.ascontiguousarray(k.ring), m,
                               np.ascontiguousarray(hidden, dtype=np.bool_))
    floor = sigma_floor(img)
    return np.where(np.isnan(out), np.nan, np.maximum(out, floor))
