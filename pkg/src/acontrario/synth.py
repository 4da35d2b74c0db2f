"""Synthetic ground-truthed data: spot images and particle motion.

Images are a background plus Gaussian spots plus additive Gaussian white
noise. SNR is the spot peak amplitude divided by the noise standard deviation.
All randomness comes from a seeded PCG64 generator, so a seed fully
determines the output.
"""

import re
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

RNG_NAME = "PCG64"
BACKGROUND_KINDS = ("uniform", "gradient", "nonuniform")
IMAGE_TYPES = {"A": "uniform", "B": "gradient", "C": "nonuniform"}
DENSITIES = {"low": 100, "mid": 500, "high": 1000}
SCENARIOS = ("vesicle", "receptor")

# Defaults for the detection benchmark scenes.
BASE_LEVEL = 200.0
NOISE_SIGMA = 10.0
SPOT_SIGMA = 2.0
GRADIENT_SPAN = 200.0
NONUNIFORM_SMOOTH = 40.0


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class Background:
    """Image background.

    ``uniform`` is flat at ``low``; ``gradient`` ramps linearly from ``low``
    to ``high`` along ``direction`` (degrees, 0 = +x); ``nonuniform`` is
    white noise blurred by a Gaussian of std ``smooth`` pixels and rescaled
    to span ``[low, high]``.
    """

    kind: str = "uniform"
    low: float = BASE_LEVEL
    high: float = BASE_LEVEL
    direction: float = 0.0
    smooth: float = NONUNIFORM_SMOOTH

    def __post_init__(self):
        if self.kind not in BACKGROUND_KINDS:
            raise ValueError(f"background kind must be one of {BACKGROUND_KINDS}, got {self.kind!r}")


@dataclass(frozen=True)
class Spot:
    x: float
    y: float
    sigma: float
    amplitude: float


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    background: Background = field(default_factory=Background)
    spots: tuple = ()
    noise_sigma: float = NOISE_SIGMA
    seed: int = 0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("scene must be at least 1x1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        for s in self.spots:
            if not (s.amplitude > 0 and s.sigma > 0):
                raise ValueError(f"spot amplitude and sigma must be > 0: {s}")


def render_background(bg, width, height, rng):
    if bg.kind == "uniform":
        return np.full((height, width), float(bg.low))
    if bg.kind == "gradient":
        ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
        t = np.deg2rad(bg.direction)
        proj = xs * np.cos(t) + ys * np.sin(t)
        span = proj.max() - proj.min()
        frac = (proj - proj.min()) / span if span > 0 else np.zeros_like(proj)
        return bg.low + (bg.high - bg.low) * frac
    field_ = ndimage.gaussian_filter(rng.standard_normal((height, width)), bg.smooth, mode="reflect")
    span = field_.max() - field_.min()
    frac = (field_ - field_.min()) / span if span > 0 else np.zeros_like(field_)
    return bg.low + (bg.high - bg.low) * frac


def render_spots(img, spots):
    """Add Gaussian spots to ``img`` in place, sampled at pixel centres."""
    H, W = img.shape
    for s in spots:
        n = int(np.ceil(5 * s.sigma))
        y0, y1 = max(0, int(np.floor(s.y)) - n), min(H, int(np.floor(s.y)) + n + 2)
        x0, x1 = max(0, int(np.floor(s.x)) - n), min(W, int(np.floor(s.x)) + n + 2)
        if y0 >= y1 or x0 >= x1:
            continue
        ys, xs = np.mgrid[y0:y1, x0:x1]
        img[y0:y1, x0:x1] += s.amplitude * np.exp(
            -((xs - s.x) ** 2 + (ys - s.y) ** 2) / (2.0 * s.sigma ** 2))
    return img


def render_frame(spec, rng=None):
    """Render a scene.

    Returns
    -------
    img : ndarray of shape (height, width)
    truth : ndarray of shape (n_spots, 2)
        Exact ``(x, y)`` spot centres.
    """
    if rng is None:
        rng = make_rng(spec.seed)
    img = render_background(spec.background, spec.width, spec.height, rng)
    render_spots(img, spec.spots)
    if spec.noise_sigma > 0:
        img += rng.normal(0.0, spec.noise_sigma, img.shape)
    truth = np.array([[s.x, s.y] for s in spec.spots]).reshape(-1, 2)
    return img, truth


def snr_to_amplitude(snr, noise_sigma, background=None):
    """Peak amplitude giving ``snr`` over Gaussian noise of std ``noise_sigma``.

    ``background`` is accepted for interface symmetry; the peak-over-noise
    convention does not depend on it.
    """
    if not snr > 0:
        raise ValueError(f"snr must be > 0, got {snr}")
    return float(snr) * float(noise_sigma)


def grid_positions(n_spots, width, height, rng, jitter=0.25):
    """Spread ``n_spots`` over a square grid, each jittered inside its cell."""
    side = int(np.ceil(np.sqrt(n_spots)))
    cw, ch = width / side, height / side
    cells = [(i, j) for j in range(side) for i in range(side)][:n_spots]
    pos = np.array([[(i + 0.5) * cw, (j + 0.5) * ch] for i, j in cells])
    pos += rng.uniform(-jitter, jitter, pos.shape) * np.array([cw, ch])
    return pos


def benchmark_scene(image_type, snr, seed, n_spots=256, size=512, spot_sigma=SPOT_SIGMA,
                    noise_sigma=NOISE_SIGMA):
    """Detection benchmark frame of type ``A`` (uniform), ``B`` (gradient) or ``C`` (non-uniform)."""
    kind = IMAGE_TYPES[image_type.upper()]
    rng = make_rng(seed)
    if kind == "uniform":
        bg = Background("uniform", BASE_LEVEL, BASE_LEVEL)
    elif kind == "gradient":
        bg = Background("gradient", BASE_LEVEL - GRADIENT_SPAN / 2, BASE_LEVEL + GRADIENT_SPAN / 2,
                        direction=float(rng.uniform(0, 360)))
    else:
        bg = Background("nonuniform", BASE_LEVEL - GRADIENT_SPAN / 2, BASE_LEVEL + GRADIENT_SPAN / 2)
    amp = snr_to_amplitude(snr, noise_sigma)
    spots = tuple(Spot(float(x), float(y), spot_sigma, amp)
                  for x, y in grid_positions(n_spots, size, size, rng))
    return SceneSpec(size, size, bg, spots, noise_sigma, int(rng.integers(2 ** 63)))


# ---------------------------------------------------------------------------
# Particle motion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MotionSpec:
    """Particle motion scenario.

    ``vesicle`` particles diffuse with per-axis step std ``step_std``.
    ``receptor`` particles alternate between that Brownian state and a
    directed state that adds a constant drift of ``speed`` px/frame along a
    heading drawn when the directed phase starts. ``p_to_directed`` and
    ``p_to_brownian`` are the per-frame switch probabilities. Each particle
    dies with probability ``p_death`` per frame; births keep the expected
    population at ``n_particles``.
    """

    scenario: str = "vesicle"
    n_particles: int = DENSITIES["low"]
    n_frames: int = 50
    step_std: float = 1.0
    speed: float = 2.0
    p_to_directed: float = 0.1
    p_to_brownian: float = 0.1
    p_death: float = 0.01
    start_directed: bool | None = None
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        for name in ("p_to_directed", "p_to_brownian", "p_death"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.n_frames < 3:
            raise ValueError(f"n_frames must be >= 3, got {self.n_frames}")
        if self.n_particles < 0 or self.step_std < 0 or self.speed < 0:
            raise ValueError("n_particles, step_std and speed must be >= 0")


def _reflect(p, v, lo, hi):
    """Mirror positions into [lo, hi] and flip the matching velocity components."""
    span = np.broadcast_to(np.asarray(hi, dtype=np.float64) - lo, p.shape)
    safe = np.where(span > 0, span, 1.0)
    q = np.mod(p - lo, 2 * safe)
    flipped = (q > safe) & (span > 0)
    q = np.where(flipped, 2 * safe - q, q)
    q = np.where(span > 0, q, 0.0)
    return lo + q, np.where(flipped, -v, v)


def simulate_tracks(motion, width, height):
    """Simulate hole-free ground-truth tracks.

    Returns
    -------
    list of (frames, xy)
        ``frames`` is a consecutive int array, ``xy`` an ``(n, 2)`` array.
    """
    rng = make_rng(motion.seed)
    K = motion.n_frames
    hi = np.array([width - 1.0, height - 1.0])
    receptor = motion.scenario == "receptor"
    stationary = (motion.p_to_directed / (motion.p_to_directed + motion.p_to_brownian)
                  if motion.p_to_directed + motion.p_to_brownian > 0 else 0.0)

    def spawn(n):
        pos = rng.uniform(0, 1, (n, 2)) * hi
        if not receptor:
            directed = np.zeros(n, dtype=bool)
        elif motion.start_directed is None:
            directed = rng.uniform(size=n) < stationary
        else:
            directed = np.full(n, bool(motion.start_directed))
        heading = rng.uniform(0, 2 * np.pi, n)
        vel = motion.speed * np.column_stack([np.cos(heading), np.sin(heading)])
        return pos, directed, vel

    pos, directed, vel = spawn(motion.n_particles)
    ids = list(range(motion.n_particles))
    history = {i: ([0], [p.copy()]) for i, p in zip(ids, pos)}
    next_id = motion.n_particles
    for k in range(1, K):
        n = len(ids)
        if n:
            step = rng.normal(0.0, motion.step_std, (n, 2)) if motion.step_std > 0 else np.zeros((n, 2))
            step = step + np.where(directed[:, None], vel, 0.0)
            pos, vel = _reflect(pos + step, vel, 0.0, hi)
            if receptor:
                u = rng.uniform(size=n)
                start = ~directed & (u < motion.p_to_directed)
                stop = directed & (u < motion.p_to_brownian)
                if start.any():
                    heading = rng.uniform(0, 2 * np.pi, int(start.sum()))
                    vel[start] = motion.speed * np.column_stack([np.cos(heading), np.sin(heading)])
                directed = (directed | start) & ~stop
            alive = rng.uniform(size=n) >= motion.p_death
            pos, directed, vel = pos[alive], directed[alive], vel[alive]
            ids = [i for i, a in zip(ids, alive) if a]
            for i, p in zip(ids, pos):
                history[i][0].append(k)
                history[i][1].append(p.copy())
        n_new = rng.poisson(motion.n_particles * motion.p_death)
        if n_new:
            p_new, d_new, v_new = spawn(n_new)
            pos = np.vstack([pos, p_new])
            directed = np.concatenate([directed, d_new])
            vel = np.vstack([vel, v_new])
            for p in p_new:
                history[next_id] = ([k], [p.copy()])
                ids.append(next_id)
                next_id += 1
    return [(np.array(f, dtype=np.int64), np.array(xy)) for f, xy in history.values()]


def tracks_to_frames(tracks, n_frames):
    """Positions present in each frame, as a list of ``(n_k, 2)`` arrays."""
    per = [[] for _ in range(n_frames)]
    for frames, xy in tracks:
        for f, p in zip(frames, xy):
            per[int(f)].append(p)
    return [np.array(p).reshape(-1, 2) for p in per]


@dataclass(frozen=True)
class SequenceSpec:
    """Rendering parameters shared by all frames of a simulated sequence."""

    width: int = 512
    height: int = 512
    snr: float = 4.0
    spot_sigma: float = 1.5
    noise_sigma: float = NOISE_SIGMA
    background: float = BASE_LEVEL
    seed: int = 0


def simulate_sequence(motion, scene=SequenceSpec()):
    """Simulate tracks and render one image per frame.

    Returns
    -------
    images : list of ndarray
    tracks : list of (frames, xy)
    """
    tracks = simulate_tracks(motion, scene.width, scene.height)
    amp = snr_to_amplitude(scene.snr, scene.noise_sigma, scene.background)
    rng = make_rng(scene.seed)
    images = []
    for pts in tracks_to_frames(tracks, motion.n_frames):
        spec = SceneSpec(scene.width, scene.height, Background("uniform", scene.background, scene.background),
                         tuple(Spot(float(x), float(y), scene.spot_sigma, amp) for x, y in pts),
                         scene.noise_sigma)
        img, _ = render_frame(spec, rng)
        images.append(img)
    return images, tracks


# ---------------------------------------------------------------------------
# Named presets
# ---------------------------------------------------------------------------

_DET_PRESET = re.compile(r"^type([ABC])-snr(\d+(?:\.\d+)?)$", re.IGNORECASE)
_SEQ_PRESET = re.compile(r"^(vesicle|receptor)-(low|mid|high)-snr(\d+(?:\.\d+)?)$", re.IGNORECASE)


def parse_preset(name):
    """Decode a preset name.

    ``typeA-snr4`` style names give ``("detection", image_type, snr)``;
    ``vesicle-low-snr4`` style names give ``("tracking", scenario, density, snr)``.
    """
    m = _DET_PRESET.match(name)
    if m:
        return ("detection", m.group(1).upper(), float(m.group(2)))
    m = _SEQ_PRESET.match(name)
    if m:
        return ("tracking", m.group(1).lower(), m.group(2).lower(), float(m.group(3)))
    raise ValueError(f"unknown preset {name!r}; expected e.g. typeA-snr4 or vesicle-low-snr4")
