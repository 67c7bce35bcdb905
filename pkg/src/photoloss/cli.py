"""Command-line interface: ``photoloss <subcommand> ...``.

Every run prints one JSON document ``{"result": ..., "manifest": ...}`` to
stdout. Floats are written with 17 significant digits. Exit codes: 0 ok,
1 contract violation or unreadable input, 2 property-suite failure,
64 usage error (unknown flag, missing argument).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, synth
from .errors import ContractViolation, RasterLoadError
from .geometry import CameraIntrinsics, PlanarCoeffs, RigidPose, coeffs_to_depth, staged_synthesis
from .imaging import (
    DepthMap,
    ImagePlane,
    WindowSpec,
    load_labels,
    load_raster,
    read_pfm,
    save_labels,
    save_raster,
    write_pfm,
)
from .losses import (
    LossWeights,
    SampleSets,
    line_consistency_loss,
    multi_source_photometric,
    plane_consistency_loss,
    sample_line_sets,
    sample_plane_sets,
    smoothness_loss,
    total_loss,
)
from .metrics import evaluate
from .optimize import fit, write_trajectory_csv
from .problems import problem_from_dict, scene_from_dict
from .proofs import run_property_suites
from .ssim import SsimConfig, similarity_map

log = logging.getLogger("photoloss")

EXIT_OK, EXIT_CONTRACT, EXIT_PROPERTY, EXIT_USAGE = 0, 1, 2, 64
THREADS_ENV = "PHOTOLOSS_THREADS"
# contract violations, undecodable rasters, unreadable files, documents missing a field
INPUT_ERRORS = (ContractViolation, RasterLoadError, OSError, KeyError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# --------------------------------------------------------------------------
# JSON with 17 significant digits


def _encode(obj, indent: int, level: int) -> str:
    pad = "\n" + " " * (indent * (level + 1)) if indent else ""
    end = "\n" + " " * (indent * level) if indent else ""
    sep = "," + pad if indent else ", "
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return format(x, ".17g") if math.isfinite(x) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{" + pad + sep.join(items) + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = obj.tolist() if isinstance(obj, np.ndarray) else obj
        if not len(seq):
            return "[]"
        return "[" + pad + sep.join(_encode(v, indent, level + 1) for v in seq) + end + "]"
    raise TypeError(f"cannot encode {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    """JSON text with every float at 17 significant digits (non-finite -> null)."""
    return _encode(obj, indent, 0)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# --------------------------------------------------------------------------
# input helpers


def _read_json(path) -> object:
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ContractViolation(f"{path}: invalid JSON ({e})") from e


def _load_image(path, L: float) -> ImagePlane:
    if str(path).lower().endswith(".pfm"):
        return ImagePlane(read_pfm(path), L)
    img = load_raster(path, "png", L)
    if not isinstance(img, ImagePlane):
        raise ContractViolation(f"{path} is not an image")
    return img


def _load_depth(path) -> DepthMap:
    d = load_raster(path, "pfm")
    return d


def _load_coeffs(path) -> PlanarCoeffs:
    data = read_pfm(path)
    if data.ndim != 3 or data.shape[2] != 3:
        raise ContractViolation(f"{path}: planar coefficients need a 3-channel PFM")
    return PlanarCoeffs(data)


def _load_intrinsics(path) -> CameraIntrinsics:
    d = _read_json(path)
    if isinstance(d, dict) and "intrinsics" in d:
        d = d["intrinsics"]
    return CameraIntrinsics.from_dict(d)


def _pose_list(doc) -> list:
    """A pose, a list of poses, or ``{"poses": [...]}``."""
    if isinstance(doc, dict) and "poses" in doc:
        doc = doc["poses"]
    if isinstance(doc, dict):
        doc = [doc]
    if not isinstance(doc, list) or not doc:
        raise ContractViolation("pose document must hold at least one pose")
    return doc


def _segments(doc) -> list:
    segs = doc["segments"] if isinstance(doc, dict) else doc
    out = []
    for s in segs:
        if isinstance(s, dict):
            out.append((tuple(s["start"]), tuple(s["end"])))
        else:
            out.append((tuple(s[0]), tuple(s[1])))
    return out


def _ssim_cfg(args, L: float) -> SsimConfig:
    window = WindowSpec.gaussian11() if args.window == "gaussian11" else WindowSpec()
    return SsimConfig(M1=args.M1, M2=args.M2, L=L, k=args.k, window=window)


# --------------------------------------------------------------------------
# subcommands; each returns (result dict, list of input paths, exit code)


def cmd_ssim(args):
    a, b = _load_image(args.image_a, args.L), _load_image(args.image_b, args.L)
    cfg = _ssim_cfg(args, args.L)
    smap = similarity_map(a, b, cfg)
    if args.map:
        write_pfm(args.map, smap.channel_mean)
    result = {
        "mean_index": smap.mean(),
        "mean_luminance": float(smap.luminance.mean()),
        "mean_contrast_structure": float(smap.contrast_structure.mean()),
        "min_index": float(smap.index.min()),
        "ssim_config": cfg.to_dict(),
    }
    return result, [args.image_a, args.image_b], EXIT_OK


def _depth_from_args(args, K):
    if (args.depth is None) == (args.coeffs is None):
        raise ContractViolation("give exactly one of --depth or --coeffs")
    if args.depth is not None:
        return _load_depth(args.depth), None, [args.depth]
    co = _load_coeffs(args.coeffs)
    return coeffs_to_depth(co, K), co, [args.coeffs]


def cmd_warp(args):
    K = _load_intrinsics(args.intrinsics)
    src = _load_image(args.source, args.L)
    depth, _, dpaths = _depth_from_args(args, K)
    poses = [RigidPose.from_dict(p) for p in _pose_list(_read_json(args.pose))]
    res = staged_synthesis(src, depth, K, poses)
    if args.out:
        save_raster(args.out, res.images[-1], bitdepth=16 if args.out.endswith(".png") else 8)
    if args.mask_out:
        save_raster(args.mask_out, ImagePlane(res.masks[-1].astype(np.float64)), bitdepth=8)
    valid = res.masks[-1]
    diff = np.abs(res.images[-1].data - res.composed_image.data)[valid & res.composed_mask]
    result = {
        "stages": len(poses),
        "valid_fraction": [float(m.mean()) for m in res.masks],
        "composed_pose": res.composed_pose.to_dict(),
        "max_abs_vs_composed_warp": float(diff.max()) if diff.size else 0.0,
    }
    return result, [args.source, args.intrinsics, args.pose, *dpaths], EXIT_OK


def cmd_loss(args):
    K = _load_intrinsics(args.intrinsics)
    target = _load_image(args.target, args.L)
    sources = [_load_image(p, args.L) for p in args.source]
    depth, co, dpaths = _depth_from_args(args, K)
    pose_doc = _pose_list(_read_json(args.poses))
    # one entry per source: a pose or a list of stage poses
    per_source = [[RigidPose.from_dict(p) for p in (e if isinstance(e, list) else [e])] for e in pose_doc]
    if len(per_source) != len(sources):
        raise ContractViolation(f"{len(per_source)} pose entries for {len(sources)} sources")
    n_stage = {len(p) for p in per_source}
    if len(n_stage) != 1:
        raise ContractViolation("every source needs the same number of stage poses")
    weights = LossWeights.from_dict(_read_json(args.weights)) if args.weights else LossWeights()
    cfg = _ssim_cfg(args, args.L)
    staged = [staged_synthesis(s, depth, K, p) for s, p in zip(sources, per_source)]
    n = n_stage.pop()
    # with residual poses the supervised images are I^1..I^n; a single pose supervises I^0
    stages = range(1, n) if n > 1 else range(1)
    stage_results = [
        multi_source_photometric(target, [r.images[j] for r in staged], [r.masks[j] for r in staged],
                                 weights.alpha, cfg, args.reduction)
        for j in stages
    ]
    rng = np.random.default_rng(args.seed)
    l_sm = smoothness_loss(co, target, skip_zero_channels=True) if co is not None else 0.0
    l_pc = l_lc = 0.0
    inputs = [args.target, *args.source, args.intrinsics, args.poses, *dpaths]
    if args.labels:
        sets = SampleSets(plane_sets=sample_plane_sets(load_labels(args.labels), args.plane_samples, rng))
        sets.check_bounds(*depth.shape)
        if len(sets.plane_sets):
            l_pc = plane_consistency_loss(sets.plane_points(depth, K))
        inputs.append(args.labels)
    if args.segments:
        sets = SampleSets(line_sets=sample_line_sets(_segments(_read_json(args.segments)), args.line_samples, rng))
        sets.check_bounds(*depth.shape)
        if len(sets.line_sets):
            l_lc = line_consistency_loss(sets.line_points(depth, K))
        inputs.append(args.segments)
    if args.weights:
        inputs.append(args.weights)
    report = total_loss(stage_results, weights, l_sm, l_pc, l_lc)
    result = report.to_dict()
    result["ssim_config"] = cfg.to_dict()
    result["valid_fraction"] = [float(r.mask.mean()) for r in stage_results]
    return result, inputs, EXIT_OK


def cmd_eval(args):
    pred, gt = _load_depth(args.pred), _load_depth(args.gt)
    rep = evaluate(pred, gt, median_scale=not args.no_median_scale, cap=args.cap)
    result = rep.to_dict()
    result["median_scaled"] = not args.no_median_scale
    result["cap"] = args.cap
    return result, [args.pred, args.gt], EXIT_OK


def cmd_verify(args):
    ks = [float(k) for k in args.k.split(",") if k.strip()]
    rep = run_property_suites(args.pairs, ks, args.seed)
    code = EXIT_OK if rep.passed else EXIT_PROPERTY
    return rep.to_dict(timing=not args.deterministic), [], code


def cmd_synth(args):
    if (args.spec is None) == (args.stock is None):
        raise ContractViolation("give exactly one of --spec or --stock")
    doc = _read_json(args.spec) if args.spec else {"stock": args.stock}
    spec = scene_from_dict(doc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = write_bundle(spec, out)
    result = {"out": str(out), "views": len(spec.poses), "files": files}
    return result, [args.spec] if args.spec else [], EXIT_OK


def write_bundle(spec: synth.SceneSpec, out: Path) -> list:
    """Images (16-bit PNG), depth and coefficients (PFM), labels (16-bit PNG), segments, poses."""
    files = []

    def emit(name, writer):
        writer(out / name)
        files.append(name)

    emit("scene.json", lambda p: p.write_text(dumps(spec.to_dict())))
    emit("intrinsics.json", lambda p: p.write_text(dumps(spec.intrinsics.to_dict())))
    rel = [synth.relative_pose(spec, 0, i).to_dict() for i in range(len(spec.poses))]
    emit("poses.json", lambda p: p.write_text(dumps({
        "world_to_camera": [q.to_dict() for q in spec.poses],
        "from_view0": rel,
    })))
    for i in range(len(spec.poses)):
        r = synth.render(spec, i)
        emit(f"image_{i}.png", lambda p: save_raster(p, r.image, bitdepth=16))
        emit(f"depth_{i}.pfm", lambda p: save_raster(p, r.depth))
        emit(f"coeffs_{i}.pfm", lambda p: write_pfm(p, r.coeffs.data))
        emit(f"labels_{i}.png", lambda p: save_labels(p, r.labels))
        emit(f"segments_{i}.json", lambda p: p.write_text(dumps({"segments": [s.to_dict() for s in r.segments]})))
    return files


def cmd_fit(args):
    doc = _read_json(args.problem)
    problem = problem_from_dict(doc, args.seed if args.seed_given else None)
    res = fit(problem)
    if args.out:
        write_trajectory_csv(args.out, res)
    final = res.final
    result = {
        "status": res.status,
        "message": res.message,
        "variable": problem.variable,
        "iterations": len(res.trajectory) - 1,
        "final": final,
        "initial": res.trajectory[0],
        "final_depth_median_rel": res.final_depth_median_rel,
    }
    return result, [args.problem], EXIT_OK if res.status != "diverged" else EXIT_CONTRACT


COMMANDS = {
    "ssim": cmd_ssim,
    "warp": cmd_warp,
    "loss": cmd_loss,
    "eval": cmd_eval,
    "verify": cmd_verify,
    "synth": cmd_synth,
    "fit": cmd_fit,
}


# --------------------------------------------------------------------------
# parser


def _u64(text: str) -> int:
    n = int(text)
    if not 0 <= n < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return n


def _common(p):
    p.add_argument("--config", help="JSON file of option defaults for this subcommand")
    p.add_argument("--seed", type=_u64, default=0, help="RNG seed (u64)")
    p.add_argument("--threads", type=int, default=None, help=f"worker threads (fallback ${THREADS_ENV})")
    p.add_argument("--deterministic", action="store_true", help="omit timing from the manifest")
    p.add_argument("--manifest", help="also write the run manifest to this file")


def _ssim_opts(p):
    p.add_argument("--k", type=float, default=5.0, help="SSIM' scale (1 = plain SSIM)")
    p.add_argument("--M1", type=float, default=0.01)
    p.add_argument("--M2", type=float, default=0.03)
    p.add_argument("--window", choices=("box", "gaussian11"), default="box")
    p.add_argument("--L", type=float, default=1.0, help="dynamic range images are normalized to")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="photoloss", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"photoloss {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("ssim", help="SSIM / SSIM' between two images")
    p.add_argument("image_a")
    p.add_argument("image_b")
    p.add_argument("--map", help="write the channel-mean index map as PFM")
    _ssim_opts(p)
    p.set_defaults(k=1.0)

    p = sub.add_parser("warp", help="inverse-warp a source view (1-3 staged poses)")
    p.add_argument("--source", required=True)
    p.add_argument("--depth")
    p.add_argument("--coeffs")
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--pose", required=True, help="JSON pose or list of stage poses")
    p.add_argument("--out")
    p.add_argument("--mask-out")
    p.add_argument("--L", type=float, default=1.0)

    p = sub.add_parser("loss", help="total training loss report")
    p.add_argument("--target", required=True)
    p.add_argument("--source", required=True, action="append")
    p.add_argument("--depth")
    p.add_argument("--coeffs")
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--poses", required=True, help="JSON: one pose (or stage-pose list) per source")
    p.add_argument("--labels", help="plane label PNG")
    p.add_argument("--segments", help="line segment JSON")
    p.add_argument("--weights", help="LossWeights JSON")
    p.add_argument("--reduction", choices=("min", "mean"), default="min")
    p.add_argument("--plane-samples", type=int, default=64)
    p.add_argument("--line-samples", type=int, default=16)
    _ssim_opts(p)

    p = sub.add_parser("eval", help="depth metrics of a prediction against ground truth")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--no-median-scale", action="store_true")
    p.add_argument("--cap", type=float, default=10.0)

    p = sub.add_parser("verify", help="property suites")
    p.add_argument("suite", choices=("proofs",))
    p.add_argument("--pairs", type=int, default=1000)
    p.add_argument("--k", default="1.5,2,5,10", help="comma-separated k grid")

    p = sub.add_parser("synth", help="render a synthetic scene bundle")
    p.add_argument("--spec", help="scene JSON (SceneSpec or {\"stock\": name})")
    p.add_argument("--stock", choices=("fronto_parallel", "room", "wall_and_texture"))
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit", help="gradient-descent toy fit")
    p.add_argument("--problem", required=True)
    p.add_argument("--out", help="trajectory CSV")

    for name, sp in sub.choices.items():
        _common(sp)
    return parser


def _resolve_threads(args) -> int:
    if args.threads is not None:
        n = args.threads
    else:
        env = os.environ.get(THREADS_ENV)
        if env is None or env == "":
            return 1
        try:
            n = int(env)
        except ValueError as e:
            raise ContractViolation(f"${THREADS_ENV} must be an integer, got {env!r}") from e
    if n < 1:
        raise ContractViolation("thread count must be positive")
    return n


def _parse(parser, argv):
    args = parser.parse_args(argv)
    cfg_path = getattr(args, "config", None)
    seed_given = "--seed" in argv or any(a.startswith("--seed=") for a in argv)
    if cfg_path:
        cfg = _read_json(cfg_path)
        if not isinstance(cfg, dict):
            raise ContractViolation("--config must hold a JSON object")
        sp = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sp._actions}
        unknown = set(cfg) - known
        if unknown:
            raise ContractViolation(f"unknown config keys: {sorted(unknown)}")
        sp.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})
        args = parser.parse_args(argv)
        seed_given = seed_given or "seed" in cfg
    args.seed_given = seed_given
    return args


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = _parse(parser, argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except INPUT_ERRORS as e:
        print(dumps({"error": str(e)}), file=sys.stderr)
        return EXIT_CONTRACT
    try:
        threads = _resolve_threads(args)
        t0 = time.perf_counter()
        result, inputs, code = COMMANDS[args.command](args)
        elapsed = time.perf_counter() - t0
    except INPUT_ERRORS as e:
        print(dumps({"error": str(e), "type": type(e).__name__}), file=sys.stderr)
        return EXIT_CONTRACT
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("seed_given", "manifest")}
    config["threads"] = threads
    manifest = {
        "subcommand": args.command,
        "config": config,
        "inputs": {str(p): sha256_file(p) for p in inputs if p},
        "tool_version": __version__,
    }
    if not args.deterministic:
        manifest["timing"] = {"seconds": elapsed}
    if args.manifest:
        Path(args.manifest).write_text(dumps(manifest) + "\n")
    print(dumps({"result": result, "manifest": manifest}))
    return code


if __name__ == "__main__":
    sys.exit(main())
