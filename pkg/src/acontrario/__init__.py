"""A-contrario particle detection and tracking for fluorescence image sequences."""

from ._accel import backend
from .detect import Detection, DetectionModel, detect_multiscale, detect_with_hiding
from .evaluation import pair_tracks, score_detections, score_tracks, track_distance
from .grid import build_kernels, estimate_noise
from .link import LinkerConfig, PointCloudSequence, Track, best_track, extract_tracks, extract_tracks_chunked

__version__ = "0.1.0"

__all__ = [
    "Detection", "DetectionModel", "LinkerConfig", "PointCloudSequence", "Track", "backend",
    "best_track", "build_kernels", "detect_multiscale", "detect_with_hiding",
    "estimate_noise", "extract_tracks", "extract_tracks_chunked", "pair_tracks",
    "score_detections", "score_tracks", "track_distance",
]
