"""A-contrario spot detector.

A pixel is *epsilon-meaningful* when the contrast between the mean of a disc
around it and the mean of the surrounding ring is too large to be expected
from Gaussian white noise more than ``epsilon`` times over the whole image.
Meaningful pixels are grouped into 8-connected components; each component is
one particle, located at its gravity centre and then refined to sub-pixel
precision. A second pass over an image in which first-pass particles are
replaced by their background recovers dim spots hidden by bright neighbours.
"""

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy import ndimage, spatial, special, stats

from .grid import (
    MeasurementUnavailable,
    as_image,
    build_kernels,
    estimate_noise,
    local_sigma_map,
    measure_maps,
    sigma_floor,
)

SIGMA_MODES = ("global", "local")
# Ratio between the optimal disc radius and the Gaussian spread of a spot.
ROPT_PER_SIGMA = 1.45
LADDER_START = 1.0
LADDER_STEP = 0.25
LADDER_MAX = 20.0


@dataclass(frozen=True)
class DetectionModel:
    """Parameters of one detection scale.

    Parameters
    ----------
    radius : float
        Inner disc radius in pixels (>= 1).
    alpha : float
        Ratio of the outer ring radius to ``radius`` (> 1).
    epsilon : float
        Bound on the expected number of detections in pure noise.
    grid_size : int, optional
        Number of tests ``|T|``. Defaults to the pixel count of the image.
    sigma_mode : {"global", "local"}
        ``"global"`` uses one noise level per image (``sigma`` if given,
        otherwise estimated); ``"local"`` uses the robust scale of each ring.
    sigma : float, optional
        Known global noise standard deviation.
    passes : int
        Number of detection passes; passes after the first run on the image
        with earlier particles hidden.
    subpixel_radius : float
        Radius of the neighbourhood used for sub-pixel refinement.
    """

    radius: float = 3.0
    alpha: float = 2.0
    epsilon: float = 1.0
    grid_size: int | None = None
    sigma_mode: str = "global"
    sigma: float | None = None
    passes: int = 2
    subpixel_radius: float = 6.0

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.grid_size is not None and self.grid_size < 1:
            raise ValueError(f"grid_size must be >= 1, got {self.grid_size}")
        if self.sigma_mode not in SIGMA_MODES:
            raise ValueError(f"sigma_mode must be one of {SIGMA_MODES}, got {self.sigma_mode!r}")
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if self.passes < 1:
            raise ValueError(f"passes must be >= 1, got {self.passes}")
        if not self.subpixel_radius > 0:
            raise ValueError(f"subpixel_radius must be > 0, got {self.subpixel_radius}")
        self.kernels  # validates the geometry

    @cached_property
    def kernels(self):
        return build_kernels(self.radius, self.alpha)

    def tests(self, shape):
        return self.grid_size if self.grid_size is not None else int(shape[0] * shape[1])


@dataclass(frozen=True)
class Detection:
    """One detected particle.

    ``x``/``y`` are the refined sub-pixel position, ``x_pix``/``y_pix`` the
    rounded gravity centre of the meaningful component.
    """

    x: float
    y: float
    x_pix: int
    y_pix: int
    nfa: float
    log_nfa: float
    z: float
    r_opt: float
    pass_index: int
    scale_r: float
    background: float = field(default=0.0, repr=False)


@dataclass(frozen=True)
class Component:
    pixels: np.ndarray  # (n, 2) array of (y, x)
    center: tuple       # gravity centre (x, y)


# ---------------------------------------------------------------------------
# NFA and threshold
# ---------------------------------------------------------------------------

def z_threshold(epsilon, n_tests):
    """Smallest z-score whose NFA ``n_tests * P(Z >= z)`` is at most ``epsilon``."""
    if epsilon <= 0:
        return np.inf
    p = 2.0 * epsilon / n_tests
    if p >= 2.0:
        return -np.inf
    return float(np.sqrt(2.0) * special.erfcinv(p))


def threshold(model, n_tests):
    """Threshold ``T`` on ``(m1 - m2) / sigma`` for the discrete kernels of ``model``."""
    return z_threshold(model.epsilon, n_tests) * model.kernels.norm_diff


def continuous_threshold(epsilon, radius, alpha, n_tests):
    """Closed-form threshold for ideal continuous disc and ring kernels."""
    return special.erfcinv(2.0 * epsilon / n_tests) / (
        np.sqrt(np.pi / 2.0) * np.sqrt(1.0 - 1.0 / alpha ** 2) * radius)


def log_nfa_from_z(z, n_tests):
    return np.log(n_tests) + stats.norm.logsf(z)


def nfa_at(model, m1, m2, sigma, n_tests=None):
    """Number of false alarms of a contrast ``m1 - m2`` observed with noise level ``sigma``.

    ``n_tests`` overrides ``model.grid_size``; one of them must be set.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    n = n_tests if n_tests is not None else model.grid_size
    if n is None:
        raise ValueError("number of tests unknown: set model.grid_size or pass n_tests")
    z = (m1 - m2) / (sigma * model.kernels.norm_diff)
    return float(n * stats.norm.sf(z))


# ---------------------------------------------------------------------------
# Meaningful pixels and their components
# ---------------------------------------------------------------------------

def _testable(shape, k, hidden):
    """Pixels whose rings fit in the image and whose inner discs stay clear of hidden pixels."""
    ok = np.zeros(shape, dtype=bool)
    m = k.margin
    ok[m:shape[0] - m, m:shape[1] - m] = True
    if hidden is not None and hidden.any():
        # at least one free pixel between a hidden disc and a new inner disc
        clearance = ndimage.distance_transform_edt(~hidden)
        ok &= clearance > k.radius + 1.0
    return ok


def meaningful_map(img, model, hidden=None, sigma=None):
    """Flag epsilon-meaningful pixels.

    Parameters
    ----------
    img : ndarray
        Image (already holding background substitutes where ``hidden``).
    model : DetectionModel
    hidden : ndarray of bool, optional
        Pixels of previously detected particles. They are not tested, nor is
        any pixel whose inner disc comes within one pixel of them, and they
        are left out of local noise estimates.
    sigma : float, optional
        Global noise level; overrides ``model.sigma`` and the estimate.

    Returns
    -------
    mask : ndarray of bool
        Meaningful pixels, same shape as ``img``.
    z : ndarray
        Contrast z-score ``(m1 - m2) / (sigma_eff * norm_diff)``; NaN where
        not tested.
    """
    img = np.asarray(img, dtype=np.float64)
    k = model.kernels
    z = np.full(img.shape, np.nan)
    mask = np.zeros(img.shape, dtype=bool)
    m = k.margin
    if img.shape[0] <= 2 * m or img.shape[1] <= 2 * m or model.epsilon <= 0:
        return mask, z
    m1, m2 = measure_maps(img, k)
    if model.sigma_mode == "global":
        s = sigma if sigma is not None else (model.sigma if model.sigma is not None else estimate_noise(img))
    else:
        s = local_sigma_map(img, k, hidden)
    inner = (slice(m, img.shape[0] - m), slice(m, img.shape[1] - m))
    z[inner] = (m1 - m2) / (s * k.norm_diff)
    testable = _testable(img.shape, k, hidden)
    z[~testable] = np.nan
    zt = z_threshold(model.epsilon, model.tests(img.shape))
    with np.errstate(invalid="ignore"):
        mask = testable & (z >= zt)
    return mask, z


_EIGHT = np.ones((3, 3), dtype=bool)


def components(mask):
    """8-connected components of ``mask`` with their unweighted gravity centres."""
    labels, n = ndimage.label(mask, structure=_EIGHT)
    if n == 0:
        return []
    out = []
    for idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        ys, xs = np.nonzero(labels[sl] == idx)
        ys = ys + sl[0].start
        xs = xs + sl[1].start
        out.append(Component(np.column_stack([ys, xs]), (float(xs.mean()), float(ys.mean()))))
    return out


# ---------------------------------------------------------------------------
# Spot size estimate
# ---------------------------------------------------------------------------

def radius_ladder(shape, alpha, max_radius=None):
    top = min(LADDER_MAX, min(shape) / (2.0 * alpha))
    if max_radius is not None:
        top = min(top, max_radius)
    n = int(np.floor((top - LADDER_START) / LADDER_STEP + 1e-9)) + 1
    return LADDER_START + LADDER_STEP * np.arange(max(n, 0))


def r_opt(img, center, alpha, hidden=None, max_radius=None):
    """Disc radius maximising the local contrast at ``center``.

    For each radius ``R`` on a 0.25 px ladder the score is
    ``(m1 - m2) / s`` where ``m1`` and ``m2`` are the disc and ring means and
    ``s`` the standard deviation over the whole local window (disc and ring
    together). Radii whose window leaves the image are skipped, as are hidden
    pixels.

    Returns
    -------
    r_opt : float
    profile : list of (radius, score)

    Raises
    ------
    MeasurementUnavailable
        If no radius fits, or the profile carries no positive contrast.
    """
    img = np.asarray(img, dtype=np.float64)
    cx, cy = int(round(center[0])), int(round(center[1]))
    H, W = img.shape
    room = min(cx, cy, W - 1 - cx, H - 1 - cy)
    ladder = radius_ladder(img.shape, alpha, max_radius)
    ladder = ladder[np.floor(alpha * ladder + 1e-12) <= room]
    if room < 0 or ladder.size == 0:
        raise MeasurementUnavailable(f"no admissible radius at ({cx}, {cy})")
    n = int(np.floor(alpha * ladder[-1]))
    dy, dx = np.mgrid[-n:n + 1, -n:n + 1]
    d2 = (dy * dy + dx * dx).ravel()
    vals = img[cy - n:cy + n + 1, cx - n:cx + n + 1].ravel()
    if hidden is not None:
        keep = ~hidden[cy - n:cy + n + 1, cx - n:cx + n + 1].ravel()
        d2, vals = d2[keep], vals[keep]
    order = np.argsort(d2, kind="stable")
    d2, vals = d2[order], vals[order]
    s1 = np.concatenate([[0.0], np.cumsum(vals)])
    s2 = np.concatenate([[0.0], np.cumsum(vals * vals)])
    n_in = np.searchsorted(d2, ladder ** 2 + 1e-9, side="right")
    n_win = np.searchsorted(d2, (alpha * ladder) ** 2 + 1e-9, side="right")
    n_ring = n_win - n_in
    ok = (n_in > 0) & (n_ring > 0)
    floor = sigma_floor(img)
    profile = []
    for R, a, b in zip(ladder[ok], n_in[ok], n_win[ok]):
        m1 = s1[a] / a
        m2 = (s1[b] - s1[a]) / (b - a)
        mean = s1[b] / b
        var = max(s2[b] / b - mean * mean, 0.0)
        score = (m1 - m2) / max(np.sqrt(var), floor)
        profile.append((float(R), float(score)))
    if not profile:
        raise MeasurementUnavailable(f"no admissible radius at ({cx}, {cy})")
    scores = np.array([p[1] for p in profile])
    if not np.any(scores > 0):
        raise MeasurementUnavailable(f"no positive contrast at ({cx}, {cy})")
    best = int(np.argmax(scores))
    return profile[best][0], profile


def hiding_radius(r):
    """Radius of the disc holding about 95% of a particle of optimal radius ``r``."""
    return 2.0 / ROPT_PER_SIGMA * r


# ---------------------------------------------------------------------------
# Sub-pixel refinement
# ---------------------------------------------------------------------------

def subpixel(img, x_pix, y_pix, r):
    """Refine a particle position by a background-subtracted weighted centroid.

    Within the disc of radius ``r`` around ``(x_pix, y_pix)`` each pixel is
    weighted by its excess over the disc median; the refined position is the
    weight-averaged pixel coordinate. A flat disc keeps ``(x_pix, y_pix)``.
    """
    img = np.asarray(img, dtype=np.float64)
    n = int(np.floor(r))
    y0, y1 = max(0, y_pix - n), min(img.shape[0], y_pix + n + 1)
    x0, x1 = max(0, x_pix - n), min(img.shape[1], x_pix + n + 1)
    ys, xs = np.mgrid[y0:y1, x0:x1]
    inside = (xs - x_pix) ** 2 + (ys - y_pix) ** 2 <= r * r
    u = img[y0:y1, x0:x1][inside]
    w = np.maximum(u - np.median(u), 0.0)
    total = w.sum()
    if not total > 0:
        return float(x_pix), float(y_pix)
    return float((xs[inside] * w).sum() / total), float((ys[inside] * w).sum() / total)


# ---------------------------------------------------------------------------
# Detection passes
# ---------------------------------------------------------------------------

def detect_pass(img, model, hidden=None, sigma=None, pass_index=1):
    """One detection pass: meaningful map, components, spot size.

    Returned detections are not yet refined: ``x``/``y`` hold the gravity
    centre of the component.
    """
    img = np.asarray(img, dtype=np.float64)
    mask, z = meaningful_map(img, model, hidden, sigma)
    comps = components(mask)
    if not comps:
        return []
    k = model.kernels
    m = k.margin
    _, m2 = measure_maps(img, k)
    n_tests = model.tests(img.shape)
    out = []
    for comp in comps:
        xg, yg = comp.center
        xp, yp = int(round(xg)), int(round(yg))
        zmax = float(np.nanmax(z[comp.pixels[:, 0], comp.pixels[:, 1]]))
        log_nfa = float(log_nfa_from_z(zmax, n_tests))
        try:
            ro, _ = r_opt(img, (xp, yp), model.alpha, hidden)
        except MeasurementUnavailable:
            ro = model.radius
        out.append(Detection(
            x=xg, y=yg, x_pix=xp, y_pix=yp, nfa=float(np.exp(log_nfa)), log_nfa=log_nfa,
            z=zmax, r_opt=ro, pass_index=pass_index, scale_r=model.radius,
            background=float(m2[yp - m, xp - m]),
        ))
    return out


def _refine(img, det, r):
    xs, ys = subpixel(img, det.x_pix, det.y_pix, r)
    if abs(xs - det.x_pix) > det.scale_r or abs(ys - det.y_pix) > det.scale_r:
        xs, ys = float(det.x_pix), float(det.y_pix)
    return replace(det, x=xs, y=ys)


def _disc(shape, x, y, r):
    n = int(np.ceil(r))
    y0, y1 = max(0, int(np.floor(y)) - n), min(shape[0], int(np.floor(y)) + n + 2)
    x0, x1 = max(0, int(np.floor(x)) - n), min(shape[1], int(np.floor(x)) + n + 2)
    ys, xs = np.mgrid[y0:y1, x0:x1]
    sel = (xs - x) ** 2 + (ys - y) ** 2 <= r * r
    return ys[sel], xs[sel]


def detect_with_hiding(img, model):
    """Run ``model.passes`` detection passes with hiding, then refine positions.

    After each pass, every new particle's disc of radius ``(2/1.45) * r_opt``
    is set to the background level measured at its detection and marked as
    hidden for the following passes. Each detection is refined on the image
    of the pass that found it.
    """
    img = as_image(img)
    sigma = None
    if model.sigma_mode == "global":
        sigma = model.sigma if model.sigma is not None else estimate_noise(img)
    work = np.array(img)
    hidden = np.zeros(img.shape, dtype=bool)
    found = []
    for p in range(1, model.passes + 1):
        dets = detect_pass(work, model, hidden if p > 1 else None, sigma, pass_index=p)
        dets = [d for d in dets if not hidden[d.y_pix, d.x_pix]]
        if not dets:
            break
        dets = [_refine(work, d, model.subpixel_radius) for d in dets]
        found.extend(dets)
        if p < model.passes:
            for d in dets:
                ys, xs = _disc(img.shape, d.x, d.y, hiding_radius(d.r_opt))
                work[ys, xs] = d.background
                hidden[ys, xs] = True
    return found


def detect_multiscale(img, radii, alpha=2.0, epsilon=1.0, **model_kwargs):
    """Detect at several inner radii and merge duplicates.

    Detections closer than the smaller of their two radii are merged, keeping
    the one with the lower NFA (equal NFA: the smaller radius). The result is
    ordered by ``(y, x)``.
    """
    radii = sorted(float(r) for r in radii)
    if not radii:
        raise ValueError("radii must be non-empty")
    img = as_image(img)
    pool = []
    for r in radii:
        model = DetectionModel(radius=r, alpha=alpha, epsilon=epsilon, **model_kwargs)
        pool.extend(detect_with_hiding(img, model))
    return merge_detections(pool)


def merge_detections(pool):
    """Greedy duplicate removal across scales, most meaningful first."""
    pool = sorted(pool, key=lambda d: (d.log_nfa, d.scale_r, d.y, d.x))
    if len(pool) < 2:
        return sorted(pool, key=lambda d: (d.y, d.x))
    xy = np.array([[d.x, d.y] for d in pool])
    rmax = max(d.scale_r for d in pool)
    neighbours = [[] for _ in pool]
    for a, b in spatial.cKDTree(xy).query_pairs(rmax):
        neighbours[a].append(b)
        neighbours[b].append(a)
    kept = np.zeros(len(pool), dtype=bool)
    for i, d in enumerate(pool):
        clash = any(kept[j] and np.hypot(*(xy[i] - xy[j])) < min(d.scale_r, pool[j].scale_r)
                    for j in neighbours[i])
        kept[i] = not clash
    return sorted((d for d, k in zip(pool, kept) if k), key=lambda d: (d.y, d.x))


def detect(img, model):
    """Convenience wrapper: :func:`detect_with_hiding` ordered by ``(y, x)``."""
    return sorted(detect_with_hiding(img, model), key=lambda d: (d.y, d.x))
