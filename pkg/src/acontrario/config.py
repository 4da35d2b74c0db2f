"""Run configuration shared by the command-line stages.

A configuration is a flat set of ``key = value`` pairs. Values from a config
file are overridden by explicit command-line flags, and every field is
checked against the preconditions of the stage that consumes it before any
stage runs.
"""

import dataclasses
import math
from dataclasses import dataclass, field

from . import io
from .detect import SIGMA_MODES
from .link import LinkerConfig

# Inner radius, ring ratio and NFA threshold tuned per benchmark image type.
DETECTION_PRESETS = {
    "typeA": dict(radii=(3.0,), alpha=2.0, epsilon=0.3),
    "typeB": dict(radii=(2.0,), alpha=3.5, epsilon=0.3),
    "typeC": dict(radii=(3.0,), alpha=1.25, epsilon=0.1),
}


class UsageError(ValueError):
    """Invalid command-line or configuration value."""


def _floats(text):
    if isinstance(text, (tuple, list)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).replace(";", ",").split(",") if v.strip())


def _optional_float(text):
    if text is None or (isinstance(text, str) and text.strip().lower() in ("", "none", "auto")):
        return None
    return float(text)


def _optional_int(text):
    if text is None or (isinstance(text, str) and text.strip().lower() in ("", "none")):
        return None
    return int(text)


@dataclass
class RunConfig:
    # detection
    radii: tuple = (2.0, 3.0)
    alpha: float = 2.0
    epsilon: float = 1.0
    sigma_mode: str = "global"
    passes: int = 2
    subpixel_radius: float = 6.0
    workers: int = 1
    # linking
    link_epsilon: float = 1.0
    chunk: int = 16
    overlap: int = 5
    min_length: int = 3
    delta_max: float | None = None
    width: float | None = None
    height: float | None = None
    n_frames: int | None = None
    # simulation
    preset: str | None = None
    frames: int | None = None
    particles: int | None = None
    seed: int = 0
    # evaluation
    tolerance: float = 4.0
    gate: float = 5.0
    ladder: tuple = (0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0)
    extra: dict = field(default_factory=dict, repr=False)

    _CONVERT = {
        "radii": _floats, "ladder": _floats, "alpha": float, "epsilon": float, "sigma_mode": str,
        "passes": int, "subpixel_radius": float, "workers": int, "link_epsilon": float,
        "chunk": int, "overlap": int, "min_length": int, "delta_max": _optional_float,
        "width": _optional_float, "height": _optional_float, "n_frames": _optional_int,
        "preset": lambda v: None if v in (None, "", "none") else str(v),
        "frames": _optional_int, "particles": _optional_int, "seed": int,
        "tolerance": float, "gate": float,
    }

    @classmethod
    def keys(cls):
        return [f.name for f in dataclasses.fields(cls) if f.name != "extra"]

    def update(self, values, source="config"):
        """Set fields from a mapping of raw values, converting types."""
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in self._CONVERT:
                self.extra[key] = raw
                continue
            try:
                setattr(self, key, self._CONVERT[key](raw))
            except (TypeError, ValueError):
                raise UsageError(f"{source}: invalid value for {key}: {raw!r}") from None
        return self

    def apply_detection_preset(self, name):
        if name not in DETECTION_PRESETS:
            raise UsageError(f"unknown detection preset {name!r}; choose from {', '.join(DETECTION_PRESETS)}")
        for k, v in DETECTION_PRESETS[name].items():
            setattr(self, k, v)

    def validate(self):
        """Raise :class:`UsageError` for any field outside its admissible range."""
        checks = [
            (len(self.radii) > 0 and all(r >= 1 and math.isfinite(r) for r in self.radii), "radii must be >= 1"),
            (self.alpha > 1, "alpha must be > 1"),
            (self.epsilon >= 0, "epsilon must be >= 0"),
            (self.sigma_mode in SIGMA_MODES, f"sigma_mode must be one of {SIGMA_MODES}"),
            (self.passes >= 1, "passes must be >= 1"),
            (self.subpixel_radius > 0, "subpixel_radius must be > 0"),
            (self.workers >= 1, "workers must be >= 1"),
            (self.tolerance > 0, "tolerance must be > 0"),
            (self.gate > 0, "gate must be > 0"),
            (self.width is None or self.width > 0, "width must be > 0"),
            (self.height is None or self.height > 0, "height must be > 0"),
            (self.frames is None or self.frames >= 1, "frames must be >= 1"),
            (self.particles is None or self.particles >= 0, "particles must be >= 0"),
            (self.n_frames is None or self.n_frames >= 1, "n_frames must be >= 1"),
            (len(self.ladder) >= 3, "ladder needs at least 3 values"),
        ]
        for ok, message in checks:
            if not ok:
                raise UsageError(message)
        try:
            self.linker()
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        return self

    def linker(self):
        return LinkerConfig(epsilon=self.link_epsilon, min_length=self.min_length,
                            chunk_size=self.chunk, overlap=self.overlap if self.chunk else 0,
                            delta_max=self.delta_max)

    def detection_kwargs(self):
        return dict(alpha=self.alpha, epsilon=self.epsilon, sigma_mode=self.sigma_mode,
                    passes=self.passes, subpixel_radius=self.subpixel_radius)

    def as_items(self):
        out = {}
        for key in self.keys():
            v = getattr(self, key)
            if v is None:
                continue
            out[key] = ",".join(format(x, "g") for x in v) if isinstance(v, tuple) else v
        return out


def load(path=None, overrides=None):
    """Build a validated :class:`RunConfig` from an optional file and flag overrides."""
    cfg = RunConfig()
    if path is not None:
        cfg.update(io.read_keyvalue(path), source=str(path))
    if overrides:
        cfg.update({k: v for k, v in overrides.items() if v is not None}, source="command line")
    return cfg
