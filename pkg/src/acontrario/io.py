"""File formats: binary PGM images, detection/track/score CSVs, key=value files, SVG plots."""

import csv
import math
import re
from pathlib import Path

import numpy as np


class FormatError(ValueError):
    """A file does not follow its documented format."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


# ---------------------------------------------------------------------------
# PGM (binary "P5")
# ---------------------------------------------------------------------------

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def read_pgm(path):
    """Read an 8- or 16-bit binary PGM file as a float64 array of shape (height, width)."""
    raw = Path(path).read_bytes()
    pos = 0
    tokens = []
    for _ in range(4):
        m = _TOKEN.match(raw, pos)
        if m is None:
            raise FormatError("truncated PGM header", path)
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P5":
        raise FormatError(f"not a binary PGM (magic {tokens[0]!r})", path)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError("non-integer PGM header field", path) from None
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise FormatError(f"invalid PGM geometry {width}x{height} maxval {maxval}", path)
    pos += 1  # single whitespace byte after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height
    if len(raw) - pos < count * dtype.itemsize:
        raise FormatError("truncated PGM pixel data", path)
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=pos)
    return data.reshape(height, width).astype(np.float64)


def write_pgm(path, img, maxval=65535):
    """Write ``img`` as a binary PGM, rounding and clipping to ``[0, maxval]``."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("PGM images are 2-D")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    data = np.clip(np.rint(img), 0, maxval).astype(dtype)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())


# ---------------------------------------------------------------------------
# CSV tables
# ---------------------------------------------------------------------------

DETECTION_HEADER = ["frame", "x", "y", "nfa", "r_opt", "pass", "scale_r"]
TRACK_HEADER = ["track_id", "frame", "x", "y"]
PASS_LABELS = {1: "first"}


def pass_label(index):
    return PASS_LABELS.get(index, "afterHiding")


def _fmt(v, spec):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return format(v, spec)


def write_detections(path, rows):
    """Write detection rows.

    ``rows`` is an iterable of ``(frame, detection)`` pairs where ``detection``
    has the attributes of :class:`acontrario.detect.Detection`, or of plain
    ``(frame, x, y)`` tuples for ground truth (remaining columns left empty).
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DETECTION_HEADER)
        for row in rows:
            if len(row) == 2:
                frame, d = row
                w.writerow([int(frame), _fmt(d.x, ".4f"), _fmt(d.y, ".4f"), _fmt(d.nfa, ".6e"),
                            _fmt(d.r_opt, ".2f"), pass_label(d.pass_index), _fmt(d.scale_r, "g")])
            else:
                frame, x, y = row
                w.writerow([int(frame), _fmt(float(x), ".4f"), _fmt(float(y), ".4f"), "", "", "", ""])


def _read_table(path, required):
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise FormatError("empty file, expected a header", path, 1) from None
        missing = [c for c in required if c not in header]
        if missing:
            raise FormatError(f"missing column(s) {', '.join(missing)}", path, 1)
        idx = [header.index(c) for c in required]
        out = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) < len(header):
                raise FormatError(f"expected {len(header)} fields, got {len(rec)}", path, lineno)
            out.append([rec[i] for i in idx] + [lineno])
        return out


def read_points(path):
    """Read ``frame,x,y`` from a detection CSV.

    Returns
    -------
    frames : ndarray of int
    xy : ndarray of shape (n, 2)
    """
    rows = _read_table(path, ["frame", "x", "y"])
    frames = np.empty(len(rows), dtype=np.int64)
    xy = np.empty((len(rows), 2))
    for n, (f, x, y, lineno) in enumerate(rows):
        try:
            frames[n] = int(f)
            xy[n] = float(x), float(y)
        except ValueError:
            raise FormatError(f"malformed row {[f, x, y]}", path, lineno) from None
        if frames[n] < 0 or not np.all(np.isfinite(xy[n])):
            raise FormatError(f"invalid frame or position {[f, x, y]}", path, lineno)
    return frames, xy


def points_by_frame(frames, xy, n_frames=None):
    """Split flat ``(frames, xy)`` arrays into a per-frame list of ``(n_k, 2)`` arrays."""
    if n_frames is None:
        n_frames = int(frames.max()) + 1 if len(frames) else 0
    order = np.argsort(frames, kind="stable")
    frames, xy = frames[order], xy[order]
    cuts = np.searchsorted(frames, np.arange(n_frames + 1))
    return [xy[cuts[k]:cuts[k + 1]] for k in range(n_frames)]


def write_tracks(path, tracks):
    """Write tracks as ``track_id,frame,x,y`` sorted by (track_id, frame).

    ``tracks`` is a sequence of ``(frames, xy)`` pairs; the track id is the
    position in the sequence.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACK_HEADER)
        for tid, (frames, xy) in enumerate(tracks):
            order = np.argsort(frames, kind="stable")
            for f, (x, y) in zip(np.asarray(frames)[order], np.asarray(xy)[order]):
                w.writerow([tid, int(f), format(float(x), ".4f"), format(float(y), ".4f")])


def read_tracks(path):
    """Read a track CSV into a list of ``(frames, xy)`` pairs ordered by track id."""
    rows = _read_table(path, TRACK_HEADER)
    by_id = {}
    for tid, f, x, y, lineno in rows:
        try:
            key = int(tid)
            rec = (int(f), float(x), float(y))
        except ValueError:
            raise FormatError(f"malformed row {[tid, f, x, y]}", path, lineno) from None
        if rec[0] < 0 or not (math.isfinite(rec[1]) and math.isfinite(rec[2])):
            raise FormatError(f"invalid frame or position {[tid, f, x, y]}", path, lineno)
        by_id.setdefault(key, []).append(rec)
    tracks = []
    for key in sorted(by_id):
        recs = sorted(by_id[key])
        frames = np.array([r[0] for r in recs], dtype=np.int64)
        if len(np.unique(frames)) != len(frames):
            raise FormatError(f"track {key} has two positions in one frame", path)
        tracks.append((frames, np.array([[r[1], r[2]] for r in recs])))
    return tracks


def write_scores(path, items):
    """Write ``metric,value`` rows from an iterable of ``(name, value)`` pairs."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        for name, value in items:
            if isinstance(value, float):
                value = "nan" if math.isnan(value) else format(value, ".10g")
            w.writerow([name, value])


# ---------------------------------------------------------------------------
# key=value files (run configs and scenario manifests)
# ---------------------------------------------------------------------------

def read_keyvalue(path):
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are skipped."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"expected key=value, got {line!r}", path, lineno)
            key, value = (s.strip() for s in line.split("=", 1))
            if not key:
                raise FormatError("empty key", path, lineno)
            out[key] = value
    return out


def write_keyvalue(path, items, comment=None):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        for key, value in items.items():
            fh.write(f"{key} = {value}\n")


# ---------------------------------------------------------------------------
# SVG
# ---------------------------------------------------------------------------

def write_froc_svg(path, curves, width=480, height=360, xlabel="FPR*", ylabel="TPR"):
    """Plot one or more polylines as plain SVG 1.1 ``path`` elements.

    ``curves`` maps a label to a sequence of ``(x, y)`` points.
    """
    pad = 50
    pts = [p for c in curves.values() for p in c]
    xmax = max([p[0] for p in pts] + [1e-9]) * 1.05
    ymax = max(1.0, max([p[1] for p in pts] + [0.0]))
    sx = lambda v: pad + (width - 2 * pad) * v / xmax
    sy = lambda v: height - pad - (height - 2 * pad) * v / ymax
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}">',
        f'<path d="M {pad} {pad} L {pad} {height - pad} L {width - pad} {height - pad}" '
        'stroke="black" fill="none"/>',
        f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle" font-size="12">{xlabel}</text>',
        f'<text x="14" y="{height / 2}" font-size="12" transform="rotate(-90 14 {height / 2})">{ylabel}</text>',
        f'<text x="{pad - 4}" y="{sy(ymax) + 4}" text-anchor="end" font-size="10">{ymax:g}</text>',
        f'<text x="{sx(xmax / 1.05)}" y="{height - pad + 14}" text-anchor="middle" font-size="10">{xmax / 1.05:.3g}</text>',
    ]
    for n, (label, c) in enumerate(curves.items()):
        if not c:
            continue
        d = " ".join(("M" if i == 0 else "L") + f" {sx(x):.2f} {sy(y):.2f}" for i, (x, y) in enumerate(c))
        color = colors[n % len(colors)]
        parts.append(f'<path d="{d}" stroke="{color}" fill="none" stroke-width="1.5"/>')
        parts.append(f'<text x="{width - pad}" y="{pad + 14 * n}" text-anchor="end" '
                     f'font-size="11" fill="{color}">{label}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
