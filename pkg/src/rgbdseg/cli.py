"""Command-line interface: ``rgbdseg <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import synthetic
from .evaluation import SWEEP_HEADER, SweepRow, chamfer_error, extract_boundaries, sweep, write_sweep_csv
from .graph_seg import segment_linear_baseline, segment_multistage, window_from_frames
from .pipeline import (
    PipelineConfig,
    PipelineError,
    WindowState,
    load_states,
    recut,
    run_baseline,
    run_stream,
    write_run,
)
from .rgbd_io import read_pnm, write_pgm16, write_sequence, write_tum_associate
from .temporal_match import calibrate_gates

logger = logging.getLogger("rgbdseg")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file; flags override its entries")
    g = p.add_argument_group("configuration keys")
    for key in PipelineConfig.keys():
        names = [f"--{key}"]
        if "_" in key:
            names.append(f"--{key.replace('_', '-')}")
        g.add_argument(*names, dest=f"cfg_{key}", metavar="V", default=None)


def _config(args) -> PipelineConfig:
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    if getattr(args, "output", None):
        overrides["output_dir"] = args.output
    if args.config:
        return PipelineConfig.from_file(args.config, overrides)
    return PipelineConfig.from_mapping(overrides)


def _add_input(p: argparse.ArgumentParser) -> None:
    p.add_argument("manifest", help="text file of 'timestamp color depth' lines")
    p.add_argument("--tum-associate", action="store_true",
                   help="manifest is a TUM associate.txt (timestamp rgb timestamp depth)")
    p.add_argument("-o", "--output", help="output directory (same as --output_dir)")


def cmd_segment(args) -> int:
    cfg = _config(args)
    runner = run_baseline if args.command == "baseline" else run_stream
    n = write_run(runner(cfg, args.manifest, tum_associate=args.tum_associate), cfg)
    print(f"wrote {n} frames to {cfg.output_dir}")
    return 0


def cmd_recut(args) -> int:
    cfg = _config(args)
    zeta = cfg.zeta
    states = (WindowState.load(p) for p in load_states(args.state_dir))
    out = args.output or cfg.output_dir
    cfg.save_state = False
    n = write_run(recut(states, zeta, cfg.match_params()), cfg, out)
    print(f"wrote {n} frames to {out}")
    return 0


def _read_labels(directory: Path) -> dict[int, np.ndarray]:
    out = {}
    for path in sorted(directory.glob("labels_*.pgm")):
        out[int(path.stem.split("_")[1])] = read_pnm(path)
    return out


def cmd_eval(args) -> int:
    if args.sweep:
        return _eval_sweep(args)
    if not (args.pred and args.gt):
        raise SystemExit("eval needs --pred and --gt directories, or --sweep")
    pred, gt = _read_labels(Path(args.pred)), _read_labels(Path(args.gt))
    frames = sorted(set(pred) & set(gt))
    if not frames:
        raise SystemExit("no frame index appears in both label directories")
    rows = []
    for t in frames:
        gb = extract_boundaries(gt[t])
        if not gb.any():
            continue
        e = chamfer_error(extract_boundaries(pred[t]), gb, args.chamfer_mask)
        rows.append(SweepRow(args.scene, args.method, "", "", str(t), e))
    mean = float(np.mean([r.e_bound for r in rows])) if rows else float("nan")
    rows.append(SweepRow(args.scene, args.method, "", "", "mean", mean))
    if args.csv:
        write_sweep_csv(args.csv, rows)
    print(f"E_bound mean over {len(rows) - 1} frames: {mean:.6f}")
    return 0


def _eval_sweep(args) -> int:
    values = [float(v) for v in args.values.split(",")]
    scenes = {}
    for name in args.scenes.split(","):
        params = synthetic.PRESETS[name](width=args.width, height=args.height, n_frames=args.frames)
        sf = synthetic.render_scene(params, args.seed)
        scenes[name] = (window_from_frames([f.frame for f in sf]), np.stack([f.labels for f in sf]))
    methods = {}
    if args.sweep == "k_color":
        methods["multistage"] = lambda w, v: segment_multistage(w, args.k_depth, v, args.min_size)
        methods[f"baseline_a{args.alpha:g}"] = lambda w, v: segment_linear_baseline(w, args.alpha, v, args.min_size)
    elif args.sweep == "k_depth":
        methods["multistage"] = lambda w, v: segment_multistage(w, v, args.k_color, args.min_size)
    elif args.sweep == "alpha":
        methods["baseline"] = lambda w, v: segment_linear_baseline(w, v, args.k, args.min_size)
    else:
        raise SystemExit(f"unknown sweep parameter {args.sweep!r}")
    rows = sweep(scenes, args.sweep, values, methods, args.chamfer_mask)
    out = args.csv or "sweep.csv"
    write_sweep_csv(out, rows)
    print(",".join(SWEEP_HEADER))
    for r in rows:
        print(",".join(str(v) for v in r.as_tuple()))
    return 0


def cmd_synth(args) -> int:
    params = synthetic.PRESETS[args.scene](width=args.width, height=args.height, n_frames=args.frames)
    frames = synthetic.render_scene(params, args.seed)
    out = Path(args.output)
    if args.tum_associate:
        manifest = write_tum_associate([f.frame for f in frames], out)
    else:
        manifest = write_sequence([f.frame for f in frames], out)
    gt = out / "gt"
    gt.mkdir(parents=True, exist_ok=True)
    for t, f in enumerate(frames):
        write_pgm16(gt / f"labels_{t:06d}.pgm", f.labels.astype(np.uint16))
    print(f"wrote {len(frames)} frames, manifest {manifest}")
    return 0


def cmd_calibrate(args) -> int:
    cfg = _config(args)
    cfg.max_dh = cfg.max_dd = cfg.max_dn_ratio = float("inf")
    cfg.restrict_candidates = False
    samples = []
    prev_sizes = None
    for r in run_stream(cfg, args.manifest, tum_associate=args.tum_associate):
        if r.match_terms is not None:
            dh, dd, dn = r.match_terms
            for i, j in r.pairs:
                big = max(r.region_sizes[i], prev_sizes[j])
                samples.append((dh[i, j], dd[i, j], dn[i, j] / big))
        prev_sizes = r.region_sizes
    gates = calibrate_gates(samples, args.sigmas)
    text = "".join(f"{k} = {v!r}\n" for k, v in gates.items())
    print(f"# {len(samples)} matched pairs, mean + {args.sigmas:g} sigma")
    print(text, end="")
    if args.output:
        Path(args.output).write_text(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rgbdseg", description="Streaming RGBD video segmentation")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, helptext in (("segment", "multistage segmentation with hierarchy and tracking"),
                           ("baseline", "linear colour/depth combination segmentation")):
        p = sub.add_parser(name, help=helptext)
        _add_input(p)
        _add_config_flags(p)
        p.set_defaults(func=cmd_segment)

    p = sub.add_parser("recut", help="re-cut saved windows at another zeta")
    p.add_argument("state_dir", help="output directory of a run made with --save_state true")
    p.add_argument("-o", "--output", help="output directory")
    _add_config_flags(p)
    p.set_defaults(func=cmd_recut)

    p = sub.add_parser("eval", help="boundary error of label maps, or parameter sweeps on synthetic scenes")
    p.add_argument("--pred", help="directory of predicted labels_*.pgm")
    p.add_argument("--gt", help="directory of ground-truth labels_*.pgm")
    p.add_argument("--scene", default="input")
    p.add_argument("--method", default="labels")
    p.add_argument("--sweep", choices=("k_color", "k_depth", "alpha"))
    p.add_argument("--values", default="75,150,300,600,1200")
    p.add_argument("--scenes", default="two-plane,tabletop,moving-boxes")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--k", type=float, default=300.0)
    p.add_argument("--k-depth", type=float, default=0.5)
    p.add_argument("--k-color", type=float, default=300.0)
    p.add_argument("--min-size", type=int, default=50)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=48)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--chamfer-mask", choices=("exact", "3-4"), default="exact",
                   help="exact Euclidean distance transform or the 3-4 chamfer approximation")
    p.add_argument("--csv", help="write rows (scene,method,param,value,frame,E_bound) here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="render a synthetic scene with ground truth")
    p.add_argument("scene", choices=sorted(synthetic.PRESETS))
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=48)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tum-associate", action="store_true", help="write TUM layout with associate.txt")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calibrate-match", help="estimate matching gates from a dry run (mean + k sigma)")
    _add_input(p)
    p.add_argument("--sigmas", type=float, default=3.0)
    _add_config_flags(p)
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, PipelineError) as exc:
        print(f"rgbdseg {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
