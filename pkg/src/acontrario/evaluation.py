"""Detection and tracking scores.

Tracks are ``(frames, xy)`` pairs: an integer frame array and the matching
``(n, 2)`` positions, one position per frame at most.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, spatial

DETECTION_TOLERANCE = 4.0
TRACK_GATE = 5.0
FROC_TARGET = 0.01


# ---------------------------------------------------------------------------
# Detection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DetectionScore:
    n_tp: int
    n_fp: int
    n_fn: int
    tolerance: float

    @property
    def tpr(self):
        n = self.n_tp + self.n_fn
        return self.n_tp / n if n else math.nan

    @property
    def fpr_star(self):
        n = self.n_tp + self.n_fn
        return self.n_fp / n if n else math.nan


def match_points(a, b, tolerance):
    """Greedy one-to-one nearest matching of two point sets.

    Pairs closer than ``tolerance`` (inclusive) are taken in increasing
    distance order, ties broken by index.

    Returns
    -------
    list of (i, j, distance)
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    if len(a) == 0 or len(b) == 0:
        return []
    hits = spatial.cKDTree(a).query_ball_tree(spatial.cKDTree(b), tolerance)
    ii = np.fromiter((i for i, h in enumerate(hits) for _ in h), dtype=np.int64)
    jj = np.fromiter((j for h in hits for j in h), dtype=np.int64)
    if len(ii) == 0:
        return []
    d = np.hypot(*(a[ii] - b[jj]).T)
    order = np.lexsort((jj, ii, d))
    used_a, used_b, out = set(), set(), []
    for k in order:
        i, j = int(ii[k]), int(jj[k])
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        out.append((i, j, float(d[k])))
    return out


def _frames_list(points):
    if isinstance(points, np.ndarray):
        return [points.reshape(-1, 2)]
    return [np.asarray(p, dtype=np.float64).reshape(-1, 2) for p in points]


def score_detections(truth, detections, tolerance=DETECTION_TOLERANCE):
    """Count true/false positives and misses.

    ``truth`` and ``detections`` are per-frame lists of ``(n, 2)`` arrays (or
    single arrays for one frame). Matching is done frame by frame.
    """
    if not tolerance > 0:
        raise ValueError(f"tolerance must be > 0, got {tolerance}")
    truth = _frames_list(truth)
    detections = _frames_list(detections)
    n = max(len(truth), len(detections))
    truth += [np.empty((0, 2))] * (n - len(truth))
    detections += [np.empty((0, 2))] * (n - len(detections))
    tp = fp = fn = 0
    for t, d in zip(truth, detections):
        m = len(match_points(t, d, tolerance))
        tp += m
        fn += len(t) - m
        fp += len(d) - m
    return DetectionScore(tp, fp, fn, float(tolerance))


@dataclass(frozen=True)
class SensitivityReport:
    """FROC curve over a parameter ladder and the sensitivities at FPR* = 0.01.

    ``s_t`` and ``s_f`` are the magnitudes of the derivatives of TPR and FPR*
    with respect to the parameter at the interpolated operating point; both
    are NaN when the ladder does not reach the target FPR*.
    """

    parameters: np.ndarray
    curve: list
    s_t: float
    s_f: float
    operating_parameter: float
    in_range: bool
    target: float = FROC_TARGET


def froc_and_sensitivity(parameters, tpr, fpr_star, target=FROC_TARGET):
    """Assemble a FROC curve and the TPR/FPR* sensitivities at ``FPR* = target``.

    Derivatives come from centred finite differences on the (sorted) ladder,
    linearly interpolated at the parameter value where FPR* crosses the
    target. No extrapolation is done outside the ladder.
    """
    p = np.asarray(parameters, dtype=np.float64)
    t = np.asarray(tpr, dtype=np.float64)
    f = np.asarray(fpr_star, dtype=np.float64)
    if not (p.shape == t.shape == f.shape) or p.ndim != 1:
        raise ValueError("parameters, tpr and fpr_star must be 1-D of equal length")
    if len(p) < 3:
        raise ValueError(f"need at least 3 ladder points, got {len(p)}")
    order = np.argsort(p, kind="stable")
    p, t, f = p[order], t[order], f[order]
    if len(np.unique(p)) != len(p):
        raise ValueError("ladder parameters must be distinct")
    curve = [(float(a), float(b)) for a, b in zip(f, t)]
    dt = np.gradient(t, p)
    df = np.gradient(f, p)
    hit = None
    for k in range(len(p) - 1):
        lo, hi = sorted((f[k], f[k + 1]))
        if lo <= target <= hi:
            w = 0.0 if f[k + 1] == f[k] else (target - f[k]) / (f[k + 1] - f[k])
            hit = (k, w)
            break
    if hit is None:
        return SensitivityReport(p, curve, math.nan, math.nan, math.nan, False, target)
    k, w = hit
    at = lambda v: float((1 - w) * v[k] + w * v[k + 1])
    return SensitivityReport(p, curve, abs(at(dt)), abs(at(df)), at(p), True, target)


# ---------------------------------------------------------------------------
# Tracking
# ---------------------------------------------------------------------------

def _as_track(track):
    frames, xy = track
    frames = np.asarray(frames, dtype=np.int64)
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    if len(frames) != len(xy):
        raise ValueError("track frames and positions differ in length")
    return dict(zip(frames.tolist(), map(tuple, xy)))


def track_distance(t1, t2=None, gate=TRACK_GATE):
    """Gated distance between two tracks, or between ``t1`` and a dummy when ``t2`` is None.

    Each frame where both tracks exist contributes ``min(distance, gate)``;
    each frame where exactly one exists contributes ``gate``.
    """
    if not gate > 0:
        raise ValueError(f"gate must be > 0, got {gate}")
    a = _as_track(t1) if not isinstance(t1, dict) else t1
    b = {} if t2 is None else (_as_track(t2) if not isinstance(t2, dict) else t2)
    total = 0.0
    for f in a.keys() | b.keys():
        pa, pb = a.get(f), b.get(f)
        if pa is None or pb is None:
            total += gate
        else:
            total += min(math.hypot(pa[0] - pb[0], pa[1] - pb[1]), gate)
    return total


@dataclass(frozen=True)
class Pairing:
    """Optimal truth-to-estimate assignment; ``match[i]`` is an estimate index or -1 (dummy)."""

    match: tuple
    distance: float
    unpaired: tuple


def _cost_matrix(X, Y, gate):
    """All pairwise :func:`track_distance` values.

    Uses ``d = gate * (|A| + |B| - |A & B|) - sum over close frames of (gate - dist)``
    where "close" means both tracks exist and lie within ``gate``.
    """
    nx, ny = len(X), len(Y)
    if nx == 0 or ny == 0:
        return np.zeros((nx, ny))
    frames = sorted(set().union(*X, *Y))
    col = {f: k for k, f in enumerate(frames)}
    px = np.zeros((nx, len(frames)))
    py = np.zeros((ny, len(frames)))
    per_frame = {f: ([], [], [], []) for f in frames}
    for i, x in enumerate(X):
        for f, p in x.items():
            px[i, col[f]] = 1
            per_frame[f][0].append(i)
            per_frame[f][1].append(p)
    for j, y in enumerate(Y):
        for f, p in y.items():
            py[j, col[f]] = 1
            per_frame[f][2].append(j)
            per_frame[f][3].append(p)
    cost = gate * (px.sum(1)[:, None] + py.sum(1)[None, :] - px @ py.T)
    for ix, ax, iy, ay in per_frame.values():
        if not ix or not iy:
            continue
        ax, ay = np.array(ax), np.array(ay)
        hits = spatial.cKDTree(ax).query_ball_tree(spatial.cKDTree(ay), gate)
        for a, hs in enumerate(hits):
            for b in hs:
                d = math.hypot(*(ax[a] - ay[b]))
                if d < gate:
                    cost[ix[a], iy[b]] -= gate - d
    return cost


def pair_tracks(truth, estimate, gate=TRACK_GATE):
    """Minimum-cost one-to-one pairing of truth tracks with estimates padded by dummies."""
    X = [_as_track(t) for t in truth]
    Y = [_as_track(t) for t in estimate]
    nx, ny = len(X), len(Y)
    if nx == 0:
        return Pairing((), 0.0, tuple(range(ny)))
    cost = np.empty((nx, ny + nx))
    cost[:, :ny] = _cost_matrix(X, Y, gate)
    cost[:, ny:] = gate * np.array([len(x) for x in X], dtype=np.float64)[:, None]
    rows, cols = optimize.linear_sum_assignment(cost)
    match = [-1] * nx
    for r, c in zip(rows, cols):
        match[r] = int(c) if c < ny else -1
    total = float(cost[rows, cols].sum())
    paired = {m for m in match if m >= 0}
    return Pairing(tuple(match), total, tuple(j for j in range(ny) if j not in paired))


@dataclass(frozen=True)
class TrackScore:
    alpha: float
    beta: float
    jsc: float
    jsc_theta: float
    rmse: float
    pairing: Pairing = field(repr=False)

    def items(self):
        return [("alpha", self.alpha), ("beta", self.beta), ("jsc", self.jsc),
                ("jsc_theta", self.jsc_theta), ("rmse", self.rmse)]


def score_tracks(truth, estimate, gate=TRACK_GATE, match_tolerance=None):
    """The five tracking scores of ``estimate`` against ``truth``.

    ``match_tolerance`` (default: ``gate``) decides whether two frame-aligned
    positions of a paired truth/estimate couple count as a match for JSC,
    JSC_theta and RMSE.
    """
    tol = gate if match_tolerance is None else match_tolerance
    X = [_as_track(t) for t in truth]
    Y = [_as_track(t) for t in estimate]
    pairing = pair_tracks(truth, estimate, gate)
    d_null = sum(track_distance(x, None, gate) for x in X)
    d_spur = sum(track_distance(Y[j], None, gate) for j in pairing.unpaired)
    if d_null > 0:
        alpha = 1.0 - pairing.distance / d_null
        beta = (d_null - pairing.distance) / (d_null + d_spur)
    else:
        alpha = 1.0
        beta = 1.0 if d_spur == 0 else 0.0

    tp = fn = fp = 0
    tp_t = fn_t = fp_t = 0
    sq = []
    for x, j in zip(X, pairing.match):
        if j < 0:
            fn += len(x)
            fn_t += 1
            continue
        y = Y[j]
        hits = 0
        for f, px in x.items():
            py = y.get(f)
            if py is not None:
                dist = math.hypot(px[0] - py[0], px[1] - py[1])
                if dist <= tol:
                    hits += 1
                    sq.append(dist * dist)
        tp += hits
        fn += len(x) - hits
        fp += len(y) - hits
        if hits:
            tp_t += 1
        else:
            fn_t += 1
            fp_t += 1
    for j in pairing.unpaired:
        fp += len(Y[j])
        fp_t += 1
    jsc = tp / (tp + fn + fp) if tp + fn + fp else 1.0
    jsc_t = tp_t / (tp_t + fn_t + fp_t) if tp_t + fn_t + fp_t else 1.0
    rmse = math.sqrt(sum(sq) / len(sq)) if sq else math.nan
    return TrackScore(alpha, beta, jsc, jsc_t, rmse, pairing)
