"""A-contrario trajectory extraction.

Trajectories are hole-free sequences of one point per consecutive frame. The
smoothness statistic of a trajectory is its maximal acceleration (largest
norm of a discrete second difference). Under the naive model (points drawn
uniformly and independently in every frame) the probability that a given
length-``l`` trajectory has maximal acceleration at most ``delta`` is bounded
by ``(pi * delta**2 / area) ** (l - 2)``.

The number of false alarms multiplies this bound by the number of candidate
trajectories: ``N_max ** l`` point choices for each of the ``W`` admissible
(start frame, length) windows. Summing the per-window budgets keeps the
expected number of epsilon-meaningful trajectories in pure noise at most
``epsilon``.

The most meaningful trajectory is found exactly by dynamic programming;
trajectories are extracted greedily until none is epsilon-meaningful.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import spatial

from . import kernels


class InvalidTrack(ValueError):
    """A trajectory too short to carry an acceleration."""


class ConfigError(ValueError):
    """Inconsistent linker parameters."""


@dataclass(frozen=True)
class PointCloudSequence:
    """Per-frame point sets on a ``width`` x ``height`` domain."""

    frames: tuple
    width: float
    height: float

    def __post_init__(self):
        frames = tuple(np.asarray(f, dtype=np.float64).reshape(-1, 2) for f in self.frames)
        object.__setattr__(self, "frames", frames)
        if len(frames) < 1:
            raise ValueError("a sequence needs at least one frame")
        if not (self.width > 0 and self.height > 0):
            raise ValueError("domain must have positive area")

    @property
    def n_frames(self):
        return len(self.frames)

    @property
    def area(self):
        return float(self.width) * float(self.height)

    @property
    def n_max(self):
        return max(len(f) for f in self.frames)


@dataclass(frozen=True)
class Track:
    """A hole-free trajectory: point ``indices[p]`` of frame ``start + p``."""

    start: int
    indices: tuple
    xy: np.ndarray
    delta: float
    log_nfa: float

    @property
    def length(self):
        return len(self.indices)

    @property
    def frames(self):
        return np.arange(self.start, self.start + self.length)

    @property
    def nfa(self):
        return math.exp(self.log_nfa) if self.log_nfa < 700 else math.inf

    def points(self):
        return [(self.start + p, i) for p, i in enumerate(self.indices)]


@dataclass(frozen=True)
class LinkerConfig:
    """Linker parameters.

    ``chunk_size = 0`` disables chunking. ``delta_max`` caps the second
    difference of any DP transition; ``None`` uses the largest acceleration
    an epsilon-meaningful track could have (exact), ``math.inf`` disables
    pruning.
    """

    epsilon: float = 1.0
    min_length: int = 3
    chunk_size: int = 16
    overlap: int = 5
    delta_max: float | None = None

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.min_length < 3:
            raise ConfigError(f"min_length must be >= 3, got {self.min_length}")
        if self.chunk_size < 0:
            raise ConfigError(f"chunk_size must be >= 0, got {self.chunk_size}")
        if self.chunk_size:
            if self.overlap <= 0 or self.overlap >= self.chunk_size:
                raise ConfigError(
                    f"need 0 < overlap < chunk_size, got overlap={self.overlap}, chunk_size={self.chunk_size}")
            if self.chunk_size < self.min_length:
                raise ConfigError("chunk_size must be >= min_length")
        if self.delta_max is not None and not self.delta_max > 0:
            raise ConfigError(f"delta_max must be > 0, got {self.delta_max}")


# ---------------------------------------------------------------------------
# Statistic and NFA
# ---------------------------------------------------------------------------

def max_acceleration(xy):
    """Largest Euclidean norm of ``y[i+1] - 2*y[i] + y[i-1]`` along a trajectory."""
    xy = np.asarray(xy, dtype=np.float64)
    if len(xy) < 3:
        raise InvalidTrack(f"acceleration needs at least 3 points, got {len(xy)}")
    acc = xy[2:] - 2.0 * xy[1:-1] + xy[:-2]
    return float(np.max(np.hypot(acc[:, 0], acc[:, 1])))


def n_windows(n_frames, min_length=3):
    """Number of (start frame, length) windows with length in ``[min_length, n_frames]``."""
    m = n_frames - min_length + 1
    return m * (m + 1) // 2 if m > 0 else 0


def log_nfa(n_frames, n_max, area, length, delta, min_length=3):
    """Natural log of the trajectory NFA; ``-inf`` for ``delta == 0``."""
    if length < 3:
        raise InvalidTrack(f"acceleration needs at least 3 points, got {length}")
    w = n_windows(n_frames, min_length)
    if w == 0 or n_max == 0:
        return math.inf
    base = math.pi * delta * delta / area
    if base == 0:
        return -math.inf
    return math.log(w) + length * math.log(n_max) + (length - 2) * math.log(base)


def track_nfa(seq, track, min_length=3):
    """NFA of ``track`` (a :class:`Track` or an ``(l, 2)`` position array) in ``seq``."""
    xy = track.xy if isinstance(track, Track) else np.asarray(track, dtype=np.float64)
    delta = max_acceleration(xy)
    return math.exp(log_nfa(seq.n_frames, seq.n_max, seq.area, len(xy), delta, min_length))


def delta_bound(n_frames, n_max, area, epsilon, min_length=3):
    """Largest max-acceleration for which some length gives NFA <= ``epsilon``."""
    if epsilon <= 0 or n_max == 0:
        return 0.0
    w = n_windows(n_frames, min_length)
    if w == 0:
        return 0.0
    best = -math.inf
    for ell in range(min_length, n_frames + 1):
        best = max(best, (math.log(epsilon) - math.log(w) - ell * math.log(n_max)) / (ell - 2))
    return math.sqrt(area / math.pi * math.exp(best))


# ---------------------------------------------------------------------------
# Dynamic program over a window of frames
# ---------------------------------------------------------------------------

class _Window:
    """Triples of points admissible in frames ``first .. last`` (inclusive)."""

    def __init__(self, seq, first, last, delta_max):
        self.seq = seq
        self.first = first
        self.last = last
        self.layers = {}
        prev_keys = None
        for t in range(first + 2, last + 1):
            layer = self._build(seq.frames[t - 2], seq.frames[t - 1], seq.frames[t], delta_max, prev_keys)
            self.layers[t] = layer
            prev_keys = layer["keys"]
        # keys of pair heads at frame first+1 do not exist: tails there are all -1

    @staticmethod
    def _build(a, b, c, delta_max, prev_keys):
        na, nb, nc = len(a), len(b), len(c)
        empty = dict(h=np.empty(0, np.int64), j=np.empty(0, np.int64), i=np.empty(0, np.int64),
                     acc=np.empty(0), head=np.empty(0, np.int32), tail=np.empty(0, np.int32),
                     pair_j=np.empty(0, np.int64), pair_i=np.empty(0, np.int64),
                     keys=np.empty(0, np.int64), n_pairs=0, nb=nb, nc=nc)
        if na == 0 or nb == 0 or nc == 0:
            return empty
        hh, jj = np.meshgrid(np.arange(na), np.arange(nb), indexing="ij")
        hh, jj = hh.ravel(), jj.ravel()
        pred = 2.0 * b[jj] - a[hh]
        if math.isinf(delta_max):
            h = np.repeat(hh, nc)
            j = np.repeat(jj, nc)
            i = np.tile(np.arange(nc), len(hh))
        else:
            hits = spatial.cKDTree(c).query_ball_point(pred, delta_max)
            counts = np.fromiter((len(x) for x in hits), dtype=np.int64, count=len(hits))
            if counts.sum() == 0:
                return empty
            h = np.repeat(hh, counts)
            j = np.repeat(jj, counts)
            i = np.fromiter((v for x in hits for v in x), dtype=np.int64, count=int(counts.sum()))
        d = c[i] - 2.0 * b[j] + a[h]
        acc = np.hypot(d[:, 0], d[:, 1])
        keep = acc <= delta_max
        h, j, i, acc = h[keep], j[keep], i[keep], acc[keep]
        if len(h) == 0:
            return empty
        head_key = j * nc + i
        keys, head = np.unique(head_key, return_inverse=True)
        order = np.lexsort((h, head))
        h, j, i, acc, head = h[order], j[order], i[order], acc[order], head[order]
        tail = np.full(len(h), -1, dtype=np.int32)
        if prev_keys is not None and len(prev_keys):
            tail_key = h * nb + j
            pos = np.searchsorted(prev_keys, tail_key)
            pos = np.minimum(pos, len(prev_keys) - 1)
            found = prev_keys[pos] == tail_key
            tail[found] = pos[found]
        return dict(h=h, j=j, i=i, acc=acc, head=head.astype(np.int32), tail=tail,
                    pair_j=keys // nc, pair_i=keys % nc, keys=keys, n_pairs=len(keys), nb=nb, nc=nc)

    def run(self, avail):
        """Fill the DP tables for the availability masks ``avail[frame]``."""
        tables = {}
        d_prev = np.empty((0, 3))
        for t in range(self.first + 2, self.last + 1):
            L = self.layers[t]
            lmax = t - self.first + 1
            if L["n_pairs"] == 0:
                d_cur = np.empty((0, lmax + 1))
                tables[t] = (d_cur, np.empty((0, lmax + 1), np.int32))
                d_prev = d_cur
                continue
            ok = avail[t][L["i"]] & avail[t - 1][L["j"]] & avail[t - 2][L["h"]]
            d_cur, b_cur = kernels.dp_layer(L["head"], L["tail"], L["acc"], ok,
                                            np.ascontiguousarray(d_prev), L["n_pairs"], lmax)
            tables[t] = (d_cur, b_cur)
            d_prev = d_cur
        return tables

    def backtrack(self, tables, t, p, ell):
        """Point indices of the length-``ell`` track ending with head pair ``p`` at frame ``t``."""
        seq = []
        L = self.layers[t]
        seq.append(int(L["pair_i"][p]))
        while True:
            q = tables[t][1][p, ell]
            L = self.layers[t]
            if ell == 3:
                seq.extend([int(L["j"][q]), int(L["h"][q])])
                break
            seq.append(int(L["j"][q]))
            p = int(L["tail"][q])
            t -= 1
            ell -= 1
        return tuple(reversed(seq))


def _make_track(seq, start, indices, min_length):
    xy = np.array([seq.frames[start + p][i] for p, i in enumerate(indices)])
    delta = max_acceleration(xy)
    return Track(start, tuple(indices), xy, delta,
                 log_nfa(seq.n_frames, seq.n_max, seq.area, len(indices), delta, min_length))


def _resolve_delta(seq, cfg):
    if cfg.delta_max is not None:
        return float(cfg.delta_max)
    return delta_bound(seq.n_frames, seq.n_max, seq.area, cfg.epsilon, cfg.min_length)


def _best_in_window(win, seq, cfg, avail):
    if win.last - win.first + 1 < cfg.min_length:
        return None
    tables = win.run(avail)
    w = n_windows(seq.n_frames, cfg.min_length)
    if w == 0 or seq.n_max == 0:
        return None
    log_const = math.log(w)
    log_n = math.log(seq.n_max)
    best_key, best = None, []
    for t, (d, _) in tables.items():
        if d.shape[0] == 0:
            continue
        for ell in range(cfg.min_length, d.shape[1]):
            col = d[:, ell]
            finite = np.isfinite(col)
            if not finite.any():
                continue
            with np.errstate(divide="ignore"):
                lnfa = log_const + ell * log_n + (ell - 2) * np.log(math.pi * col * col / seq.area)
            lnfa[~finite] = np.inf
            v = float(lnfa.min())
            # lower NFA, then longer, then earlier start
            key = (v, -ell, t - ell + 1)
            if best_key is None or key < best_key:
                best_key, best = key, []
            if key == best_key:
                best.extend((t, int(p), ell) for p in np.flatnonzero(lnfa == v))
    if best_key is None:
        return None
    candidates = [win.backtrack(tables, t, p, ell) for t, p, ell in best]
    indices = min(candidates)
    return _make_track(seq, best_key[2], indices, cfg.min_length)


def _fresh_avail(seq):
    return [np.ones(len(f), dtype=bool) for f in seq.frames]


def best_track(seq, cfg=LinkerConfig(), available=None):
    """Most meaningful hole-free track over the available points, or ``None``.

    ``available`` is a per-frame list of boolean masks (default: all points).
    Ties are broken by the longer track, then the earlier start, then the
    lexicographically smaller index sequence.
    """
    if seq.n_frames < cfg.min_length:
        return None
    win = _Window(seq, 0, seq.n_frames - 1, _resolve_delta(seq, cfg))
    return _best_in_window(win, seq, cfg, available if available is not None else _fresh_avail(seq))


def _extract_window(seq, cfg, first, last):
    if cfg.epsilon <= 0 or last - first + 1 < cfg.min_length:
        return []
    win = _Window(seq, first, last, _resolve_delta(seq, cfg))
    avail = _fresh_avail(seq)
    log_eps = math.log(cfg.epsilon)
    out = []
    while True:
        tr = _best_in_window(win, seq, cfg, avail)
        if tr is None or not tr.log_nfa <= log_eps:
            break
        out.append(tr)
        for f, i in tr.points():
            avail[f][i] = False
    return out


def extract_tracks(seq, cfg=LinkerConfig()):
    """Greedily extract epsilon-meaningful tracks over the whole sequence."""
    return _extract_window(seq, cfg, 0, seq.n_frames - 1)


def chunk_bounds(n_frames, chunk_size, overlap):
    """Inclusive ``(first, last)`` frame ranges of overlapping chunks covering the sequence."""
    if chunk_size <= 0 or chunk_size >= n_frames:
        return [(0, n_frames - 1)]
    if not 0 < overlap < chunk_size:
        raise ConfigError(f"need 0 < overlap < chunk_size, got {overlap}, {chunk_size}")
    out = []
    start = 0
    while True:
        end = min(start + chunk_size, n_frames) - 1
        out.append((start, end))
        if end == n_frames - 1:
            return out
        start += chunk_size - overlap


def _sub_track(seq, cfg, start, indices):
    if len(indices) < cfg.min_length:
        return None
    tr = _make_track(seq, start, indices, cfg.min_length)
    return tr if tr.log_nfa <= math.log(cfg.epsilon) else None


def _free_runs(track, used):
    """Maximal runs of consecutive frames whose points are not in ``used``."""
    runs, cur = [], []
    for (f, i) in track.points():
        if (f, i) in used:
            if cur:
                runs.append(cur)
            cur = []
        else:
            cur.append((f, i))
    if cur:
        runs.append(cur)
    return runs


def extract_tracks_chunked(seq, cfg=LinkerConfig()):
    """Extract tracks chunk by chunk and stitch them across chunk overlaps.

    Each chunk is processed independently with NFAs counted over the whole
    sequence. A new track sharing at least two identical points with an
    earlier track in the overlap is merged into it (earlier track's points up
    to the last shared frame, the new track's afterwards), provided the
    merged track is still epsilon-meaningful. Unmerged tracks lose any points
    already taken and keep their longest remaining run if it is still
    meaningful.
    """
    bounds = chunk_bounds(seq.n_frames, cfg.chunk_size, cfg.overlap)
    if len(bounds) == 1:
        return extract_tracks(seq, cfg)
    if cfg.epsilon <= 0:
        return []
    chunks = [_extract_window(seq, cfg, a, b) for a, b in bounds]

    accepted = list(chunks[0])
    used = {pt: n for n, tr in enumerate(accepted) for pt in tr.points()}
    for new_tracks in chunks[1:]:
        # candidate stitches: (shared count, new track, old track)
        links = []
        for k, tr in enumerate(new_tracks):
            counts = {}
            for pt in tr.points():
                if pt in used:
                    counts[used[pt]] = counts.get(used[pt], 0) + 1
            for old, c in counts.items():
                if c >= 2:
                    links.append((-c, k, old))
        links.sort()
        stitched_new, stitched_old = set(), set()
        pending = []
        for _, k, old in links:
            if k in stitched_new or old in stitched_old:
                continue
            merged = _merge(seq, cfg, accepted[old], new_tracks[k], used, old)
            if merged is None:
                continue
            for pt in accepted[old].points():
                used.pop(pt, None)
            accepted[old] = merged
            for pt in merged.points():
                used[pt] = old
            stitched_new.add(k)
            stitched_old.add(old)
        for k, tr in enumerate(new_tracks):
            if k not in stitched_new:
                pending.append(tr)
        for tr in pending:
            runs = _free_runs(tr, used)
            if not runs:
                continue
            run = max(runs, key=len)
            sub = _sub_track(seq, cfg, run[0][0], [i for _, i in run])
            if sub is None:
                continue
            accepted.append(sub)
            for pt in sub.points():
                used[pt] = len(accepted) - 1
    return sorted(accepted, key=lambda tr: (tr.start, tr.indices))


def _merge(seq, cfg, old, new, used, old_id):
    shared = [f for f, i in new.points() if used.get((f, i)) == old_id]
    last_shared = max(shared)
    o = dict(old.points())
    n = dict(new.points())
    lo, hi = min(o.keys() | n.keys()), max(o.keys() | n.keys())
    merged = []
    for f in range(lo, hi + 1):
        if f <= last_shared:
            i = o.get(f, n.get(f))
        else:
            i = n.get(f, o.get(f))
        if i is None:
            return None
        owner = used.get((f, i))
        if owner is not None and owner != old_id:
            return None
        merged.append(i)
    return _sub_track(seq, cfg, lo, merged)


def link(seq, cfg=LinkerConfig()):
    """Chunked extraction when ``cfg.chunk_size`` is set, plain extraction otherwise."""
    if cfg.chunk_size:
        return extract_tracks_chunked(seq, cfg)
    return extract_tracks(seq, cfg)
