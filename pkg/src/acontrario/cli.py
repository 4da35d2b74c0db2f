"""Command-line pipeline: ``simulate``, ``detect``, ``link``, ``evaluate`` and ``froc``.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable or malformed
input, partial results), 3 internal invariant violation.
"""

import argparse
import multiprocessing
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import evaluation, io, link, synth
from .config import DETECTION_PRESETS, UsageError
from .detect import detect_multiscale

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
MANIFEST = "manifest.txt"
DETECTION_FRAMES = 16


class DataError(Exception):
    """Input data cannot be used; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _err(message):
    print(f"acontrario: {message}", file=sys.stderr)


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _frame_name(k):
    return f"frame_{k:04d}.pgm"


def cmd_simulate(cfg, out):
    if cfg.preset is None:
        raise UsageError("simulate needs --preset (e.g. typeA-snr4, vesicle-low-snr4)")
    try:
        kind, *rest = synth.parse_preset(cfg.preset)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise DataError(f"cannot write to {out}: {exc.strerror or exc}") from None

    manifest = {"preset": cfg.preset, "seed": cfg.seed}
    if kind == "detection":
        image_type, snr = rest
        n = cfg.frames or DETECTION_FRAMES
        truth_rows = []
        for k in range(n):
            spec = synth.benchmark_scene(image_type, snr, seed=(cfg.seed, k))
            img, truth = synth.render_frame(spec)
            io.write_pgm(out / _frame_name(k), img)
            truth_rows.extend((k, x, y) for x, y in truth)
        io.write_detections(out / "truth.csv", truth_rows)
        width = height = spec.width
        manifest.update(kind="detection", image_type=image_type, snr=format(snr, "g"))
    else:
        scenario, density, snr = rest
        n = cfg.frames or synth.MotionSpec.n_frames
        try:
            motion = synth.MotionSpec(
                scenario=scenario,
                n_particles=cfg.particles if cfg.particles is not None else synth.DENSITIES[density],
                n_frames=n, seed=cfg.seed)
        except ValueError as exc:
            raise UsageError(f"tracking scenario: {exc} (--frames)") from None
        scene = synth.SequenceSpec(snr=snr, seed=cfg.seed + 1)
        images, tracks = synth.simulate_sequence(motion, scene)
        for k, img in enumerate(images):
            io.write_pgm(out / _frame_name(k), img)
        io.write_tracks(out / "truth_tracks.csv", tracks)
        io.write_detections(out / "truth.csv",
                            sorted((int(f), x, y) for fr, xy in tracks for f, (x, y) in zip(fr, xy)))
        width, height = scene.width, scene.height
        manifest.update(kind="tracking", scenario=scenario, density=density, snr=format(snr, "g"),
                        particles=motion.n_particles)
    manifest.update(width=width, height=height, n_frames=n,
                    frames=",".join(_frame_name(k) for k in range(n)))
    io.write_keyvalue(out / MANIFEST, manifest, comment="simulated scenario")
    return EXIT_OK


# ---------------------------------------------------------------------------
# detect
# ---------------------------------------------------------------------------

def _image_list(paths):
    """Expand directories (manifest order, else sorted ``*.pgm``) into image paths."""
    images, manifest = [], None
    for p in map(Path, paths):
        if p.is_dir():
            mf = p / MANIFEST
            if mf.exists():
                manifest = io.read_keyvalue(mf)
                names = [n for n in manifest.get("frames", "").split(",") if n]
                images.extend(p / n for n in names)
            else:
                images.extend(sorted(p.glob("*.pgm")))
        else:
            images.append(p)
    return images, manifest


def _detect_file(job):
    path, radii, kwargs = job
    try:
        img = io.read_pgm(path)
    except (OSError, io.FormatError) as exc:
        return None, f"{path}: {exc}"
    return detect_multiscale(img, radii, **kwargs), None


def run_detection(images, radii, kwargs, workers=1):
    """Detect on every image; returns per-frame detection lists and error messages."""
    jobs = [(p, radii, kwargs) for p in images]
    if workers > 1 and len(jobs) > 1:
        # spawn: forking after the compiled kernels started their thread pool is unsafe
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            results = list(pool.map(_detect_file, jobs))
    else:
        results = [_detect_file(j) for j in jobs]
    return [r for r, _ in results], [e for _, e in results if e]


def cmd_detect(cfg, images, out):
    images, _ = _image_list(images)
    per_frame, errors = run_detection(images, cfg.radii, cfg.detection_kwargs(), cfg.workers)
    rows = [(k, d) for k, dets in enumerate(per_frame) if dets for d in sorted(dets, key=lambda d: (d.y, d.x))]
    io.write_detections(out, rows)
    for e in errors:
        _err(e)
    return EXIT_DATA if errors else EXIT_OK


# ---------------------------------------------------------------------------
# link
# ---------------------------------------------------------------------------

def cmd_link(cfg, detections, out):
    if cfg.width is None or cfg.height is None:
        raise UsageError("link needs the domain size: --width/--height, --manifest or a config file")
    try:
        frames, xy = io.read_points(detections)
    except io.FormatError as exc:
        raise DataError(str(exc)) from None
    n = cfg.n_frames if cfg.n_frames is not None else (int(frames.max()) + 1 if len(frames) else 0)
    if len(frames) and frames.max() >= n:
        raise DataError(f"{detections}: frame {int(frames.max())} outside the {n}-frame sequence")
    if n == 0:
        io.write_tracks(out, [])
        return EXIT_OK
    seq = link.PointCloudSequence(io.points_by_frame(frames, xy, n), cfg.width, cfg.height)
    tracks = link.link(seq, cfg.linker())
    io.write_tracks(out, [(tr.frames, tr.xy) for tr in tracks])
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate / froc
# ---------------------------------------------------------------------------

def _check_frames(truth_frames, est_frames, truth_path, est_path):
    if len(est_frames) and (len(truth_frames) == 0 or est_frames.max() > truth_frames.max()):
        hi = int(truth_frames.max()) if len(truth_frames) else -1
        raise DataError(f"frame range mismatch: {est_path} reaches frame {int(est_frames.max())} "
                        f"but {truth_path} ends at frame {hi}")


def cmd_evaluate(cfg, truth, estimate, mode, out=None, svg=None):
    try:
        if mode == "detection":
            tf, txy = io.read_points(truth)
            ef, exy = io.read_points(estimate)
            _check_frames(tf, ef, truth, estimate)
            n = int(tf.max()) + 1 if len(tf) else 0
            s = evaluation.score_detections(io.points_by_frame(tf, txy, n), io.points_by_frame(ef, exy, n),
                                            cfg.tolerance)
            items = [("n_tp", s.n_tp), ("n_fp", s.n_fp), ("n_fn", s.n_fn), ("tpr", s.tpr),
                     ("fpr_star", s.fpr_star), ("tolerance", s.tolerance)]
        else:
            X = io.read_tracks(truth)
            Y = io.read_tracks(estimate)
            tf = np.concatenate([f for f, _ in X]) if X else np.empty(0, np.int64)
            ef = np.concatenate([f for f, _ in Y]) if Y else np.empty(0, np.int64)
            _check_frames(tf, ef, truth, estimate)
            items = evaluation.score_tracks(X, Y, cfg.gate).items()
    except io.FormatError as exc:
        raise DataError(str(exc)) from None
    for name, value in items:
        print(f"{name}\t{value:.6g}" if isinstance(value, float) else f"{name}\t{value}")
    if out:
        io.write_scores(out, items)
    return EXIT_OK


def cmd_froc(cfg, images, truth, out=None, svg=None):
    images, _ = _image_list(images)
    try:
        tf, txy = io.read_points(truth)
    except io.FormatError as exc:
        raise DataError(str(exc)) from None
    n = len(images)
    if len(tf) and tf.max() >= n:
        raise DataError(f"frame range mismatch: {truth} reaches frame {int(tf.max())} but only {n} images given")
    gt = io.points_by_frame(tf, txy, n)
    tpr, fpr = [], []
    kwargs = cfg.detection_kwargs()
    for eps in cfg.ladder:
        kwargs["epsilon"] = eps
        per_frame, errors = run_detection(images, cfg.radii, kwargs, cfg.workers)
        if errors:
            for e in errors:
                _err(e)
            return EXIT_DATA
        dets = [np.array([[d.x, d.y] for d in ds]).reshape(-1, 2) for ds in per_frame]
        s = evaluation.score_detections(gt, dets, cfg.tolerance)
        tpr.append(s.tpr)
        fpr.append(s.fpr_star)
    rep = evaluation.froc_and_sensitivity(cfg.ladder, tpr, fpr)
    items = [(f"tpr@{e:g}", t) for e, t in zip(cfg.ladder, tpr)]
    items += [(f"fpr_star@{e:g}", f) for e, f in zip(cfg.ladder, fpr)]
    items += [("s_t", rep.s_t), ("s_f", rep.s_f), ("operating_epsilon", rep.operating_parameter),
              ("in_range", int(rep.in_range))]
    for name, value in items:
        print(f"{name}\t{value:.6g}" if isinstance(value, float) else f"{name}\t{value}")
    if not rep.in_range:
        _err(f"FPR* never crosses {rep.target} on this ladder; sensitivities not extrapolated")
    if out:
        io.write_scores(out, items)
    if svg:
        io.write_froc_svg(svg, {"a contrario": rep.curve})
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _common(p):
    p.add_argument("--config", type=Path, help="key=value file providing defaults")


def _detection_flags(p):
    p.add_argument("--preset", dest="det_preset", choices=sorted(DETECTION_PRESETS),
                   help="per-image-type radius, alpha and epsilon")
    p.add_argument("--radii", help="comma-separated inner radii (default 2,3)")
    p.add_argument("--alpha", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--sigma-mode", choices=["global", "local"])
    p.add_argument("--passes", type=int)
    p.add_argument("--workers", type=int, help="parallel worker processes for frames")


def build_parser():
    parser = _Parser(prog="acontrario", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="render a synthetic scenario with ground truth")
    _common(p)
    p.add_argument("--preset", help="typeA-snr4, vesicle-low-snr4, receptor-high-snr2, ...")
    p.add_argument("--frames", type=int)
    p.add_argument("--particles", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, type=Path, help="output directory")

    p = sub.add_parser("detect", help="detect spots in PGM frames")
    _common(p)
    _detection_flags(p)
    p.add_argument("images", nargs="*", help="PGM files or scenario directories")
    p.add_argument("--out", required=True, type=Path, help="detections CSV")

    p = sub.add_parser("link", help="link detections into tracks")
    _common(p)
    p.add_argument("detections", type=Path)
    p.add_argument("--out", required=True, type=Path, help="tracks CSV")
    p.add_argument("--manifest", type=Path, help="scenario manifest giving width, height, n_frames")
    p.add_argument("--width", type=float)
    p.add_argument("--height", type=float)
    p.add_argument("--epsilon", dest="link_epsilon", type=float)
    p.add_argument("--chunk", type=int, help="chunk size in frames; 0 disables chunking")
    p.add_argument("--overlap", type=int)
    p.add_argument("--min-length", type=int)

    p = sub.add_parser("evaluate", help="score detections or tracks against ground truth")
    _common(p)
    p.add_argument("truth", type=Path)
    p.add_argument("estimate", type=Path, nargs="?")
    p.add_argument("--mode", choices=["detection", "tracking"], default="detection")
    p.add_argument("--tolerance", type=float)
    p.add_argument("--gate", type=float)
    p.add_argument("--froc", nargs="+", metavar="IMAGES",
                   help="sweep the epsilon ladder on these images instead of scoring ESTIMATE")
    p.add_argument("--ladder", help="comma-separated epsilon values")
    _detection_flags(p)
    p.add_argument("--out", type=Path, help="metric,value CSV")
    p.add_argument("--svg", type=Path, help="FROC plot (with --froc)")

    p = sub.add_parser("froc", help="FROC curve and sensitivities over an epsilon ladder")
    _common(p)
    _detection_flags(p)
    p.add_argument("images", nargs="+")
    p.add_argument("--truth", required=True, type=Path)
    p.add_argument("--ladder")
    p.add_argument("--tolerance", type=float)
    p.add_argument("--out", type=Path)
    p.add_argument("--svg", type=Path)
    return parser


_NOT_CONFIG = {"command", "config", "out", "images", "detections", "truth", "estimate", "mode",
               "froc", "svg", "manifest", "det_preset"}


def _resolve(args):
    cfg = config_mod.RunConfig()
    if args.config is not None:
        try:
            cfg.update(io.read_keyvalue(args.config), source=str(args.config))
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc.strerror or exc}") from None
    manifest = getattr(args, "manifest", None)
    if manifest is not None:
        try:
            mf = io.read_keyvalue(manifest)
        except OSError as exc:
            raise UsageError(f"cannot read manifest {manifest}: {exc.strerror or exc}") from None
        cfg.update({k: mf[k] for k in ("width", "height", "n_frames") if k in mf}, source=str(manifest))
    if getattr(args, "det_preset", None):
        cfg.apply_detection_preset(args.det_preset)
    flags = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG and v is not None}
    cfg.update(flags, source="command line")
    return cfg.validate()


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _resolve(args)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.out)
        if args.command == "detect":
            return cmd_detect(cfg, args.images, args.out)
        if args.command == "link":
            return cmd_link(cfg, args.detections, args.out)
        if args.command == "evaluate":
            if args.froc:
                return cmd_froc(cfg, args.froc, args.truth, args.out, args.svg)
            if args.estimate is None:
                raise UsageError("evaluate needs ESTIMATE (or --froc IMAGES)")
            return cmd_evaluate(cfg, args.truth, args.estimate, args.mode, args.out)
        if args.command == "froc":
            return cmd_froc(cfg, args.images, args.truth, args.out, args.svg)
    except UsageError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except (DataError, io.FormatError) as exc:
        _err(str(exc))
        return EXIT_DATA
    except OSError as exc:
        _err(f"{getattr(exc, 'filename', '') or ''}: {exc.strerror or exc}")
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort contract
        _err(f"internal error: {type(exc).__name__}: {exc}")
        return EXIT_INTERNAL
    return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
