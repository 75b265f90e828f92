"""Command-line interface.

Subcommands mirror the pipeline stages (depth, counter, label, export-train,
filter, refine, fuse, eval) plus `run` for the end-to-end variants and
`synth` to generate a self-contained synthetic demo workspace. The workspace
root comes from the positional argument or the MVSKIT_WORKSPACE environment
variable.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import pipeline as pl
from .errors import BadRange, ConfigError, MvsError, OutOfRange
from .scene import load_scene

logger = logging.getLogger(__name__)

WORKSPACE_ENV = "MVSKIT_WORKSPACE"


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "workspace",
        nargs="?",
        default=None,
        help=f"workspace root (default: ${WORKSPACE_ENV})",
    )
    p.add_argument("--seed", type=int, default=0, help="estimation seed")
    p.add_argument("--downsample", type=float, default=0.5, help="input image scale factor")
    p.add_argument("--force", action="store_true", help="recompute even when cached")
    p.add_argument("--threads", type=int, default=1, help="worker threads for per-view stages")
    p.add_argument("--zmin", type=float, default=None, help="scene depth range lower bound")
    p.add_argument("--zmax", type=float, default=None, help="scene depth range upper bound")
    p.add_argument("--iterations", type=int, default=None, help="red-black iterations per level")
    p.add_argument("--levels", type=int, default=None, help="pyramid levels (1 = single scale)")
    p.add_argument("-v", "--verbose", action="store_true")


def _workspace_root(args) -> Path:
    root = args.workspace or os.environ.get(WORKSPACE_ENV)
    if not root:
        raise ConfigError(f"no workspace given and ${WORKSPACE_ENV} is not set")
    root = Path(root)
    if not root.is_dir():
        raise ConfigError(f"workspace {root} does not exist")
    return root


def _build_config(args, variant: str | None = None) -> pl.PipelineConfig:
    import dataclasses

    config = pl.PipelineConfig(
        variant=variant or getattr(args, "variant", "fast"),
        downsample=args.downsample,
        seed=args.seed,
        threads=args.threads,
        force=args.force,
        tau=getattr(args, "tau", 0.05),
        tolerances=tuple(getattr(args, "tolerance", None) or (0.01,)),
    )
    pm = config.patchmatch
    if args.zmin is not None and args.zmax is not None:
        pm = dataclasses.replace(pm, depth_range=(args.zmin, args.zmax))
    if args.iterations is not None:
        pm = dataclasses.replace(pm, iterations=args.iterations)
    if args.levels is not None:
        pm = dataclasses.replace(pm, levels=args.levels)
    config.patchmatch = pm
    if getattr(args, "min_support", None) is not None:
        config.fusion = dataclasses.replace(config.fusion, min_support=args.min_support)
    return config


def _load_bundle(args, config) -> "pl.SceneBundle":
    root = _workspace_root(args)
    depth_range = None
    if args.zmin is not None and args.zmax is not None:
        depth_range = (args.zmin, args.zmax)
    return load_scene(root, downsample=config.downsample, depth_range=depth_range)


def cmd_depth(args) -> None:
    config = _build_config(args)
    bundle = _load_bundle(args, config)
    pl.stage_depth(pl.Workspace(bundle.root), bundle, config)


def cmd_counter(args) -> None:
    config = _build_config(args)
    bundle = _load_bundle(args, config)
    ws = pl.Workspace(bundle.root)
    pl.stage_counter(ws, bundle, config)


def cmd_label(args) -> None:
    config = _build_config(args)
    config.label_max_dist = args.max_dist
    bundle = _load_bundle(args, config)
    ws = pl.Workspace(bundle.root)
    gt_dir = Path(args.gt) if args.gt else bundle.root / "gt"
    pl.stage_label(ws, bundle, config, gt_dir)


def cmd_export_train(args) -> None:
    config = _build_config(args)
    bundle = _load_bundle(args, config)
    ws = pl.Workspace(bundle.root)
    manifest = pl.stage_export_train(ws, bundle, config)
    print(manifest)


def cmd_filter(args) -> None:
    config = _build_config(args)
    bundle = _load_bundle(args, config)
    ws = pl.Workspace(bundle.root)
    conf_paths = pl.stage_confidence(ws, bundle, config)
    pl.stage_filter(ws, bundle, config, conf_paths, mask_k=args.mask_k)


def cmd_refine(args) -> None:
    config = _build_config(args)
    bundle = _load_bundle(args, config)
    ws = pl.Workspace(bundle.root)
    conf_paths = pl.stage_confidence(ws, bundle, config)
    pl.stage_refine(ws, bundle, config, conf_paths)


def cmd_fuse(args) -> None:
    config = _build_config(args, variant=getattr(args, "variant", "fast"))
    bundle = _load_bundle(args, config)
    ws = pl.Workspace(bundle.root)
    maps_dir = args.maps
    if not (bundle.root / maps_dir).is_dir():
        raise ConfigError(f"maps directory {maps_dir!r} not found in the workspace")
    pl.stage_fuse(ws, bundle, config, maps_dir)


def cmd_eval(args) -> None:
    config = _build_config(args)
    root = _workspace_root(args)
    ws = pl.Workspace(root)
    gt = Path(args.gt) if args.gt else root / "gt" / "cloud.ply"
    if not gt.exists():
        raise ConfigError(f"ground-truth cloud {gt} not found")
    pl.stage_eval(ws, config, gt)


def cmd_run(args) -> None:
    config = _build_config(args, variant=args.variant)
    bundle = _load_bundle(args, config)
    result = pl.run_pipeline(bundle, config)
    print(result["cloud"])


def cmd_synth(args) -> None:
    from .synthetic import make_plane_scene, write_workspace

    out = Path(args.out)
    scene = make_plane_scene(
        width=args.width, height=args.height, n_views=args.views, texture_seed=args.seed
    )
    write_workspace(scene, out)
    print(out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvskit",
        description="Multi-view stereo: PatchMatch depth maps, confidence-driven "
        "filtering/refinement, fusion and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("depth", help="estimate depth/normal maps for every view")
    _add_common(p)
    p.set_defaults(func=cmd_depth)

    p = sub.add_parser("counter", help="build cross-view support counter maps")
    _add_common(p)
    p.set_defaults(func=cmd_counter)

    p = sub.add_parser("label", help="build GT inlier/outlier label maps")
    _add_common(p)
    p.add_argument("--gt", default=None, help="directory with GT depth PFMs (default gt/)")
    p.add_argument("--max-dist", type=float, default=2.0, help="max projection distance in px")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("export-train", help="export confidence-training samples")
    _add_common(p)
    p.set_defaults(func=cmd_export_train)

    p = sub.add_parser("filter", help="confidence (and optional support) filtering")
    _add_common(p)
    p.add_argument("--tau", type=float, default=0.05, help="confidence threshold")
    p.add_argument("--mask-k", type=int, default=None, help="also require >= k supporting views")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("refine", help="piecewise-planar depth refinement")
    _add_common(p)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("fuse", help="fuse depth maps into cloud.ply")
    _add_common(p)
    p.add_argument("--maps", default="filtered", help="workspace maps directory to fuse")
    p.add_argument("--min-support", type=int, default=None, help="minimum supporting views")
    p.add_argument("--variant", choices=pl.VARIANTS, default="fast")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="accuracy/completeness/F1 against a GT cloud")
    _add_common(p)
    p.add_argument("--gt", default=None, help="GT cloud PLY (default gt/cloud.ply)")
    p.add_argument(
        "--tolerance",
        type=float,
        action="append",
        default=None,
        help="evaluation tolerance (repeatable)",
    )
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", help="end-to-end pipeline")
    _add_common(p)
    p.add_argument("--variant", choices=pl.VARIANTS, default="fast")
    p.add_argument("--tau", type=float, default=0.05, help="confidence filter threshold")
    p.add_argument("--min-support", type=int, default=None, help="fusion minimum support")
    p.add_argument(
        "--tolerance", type=float, action="append", default=None, help="eval tolerance"
    )
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("synth", help="generate a synthetic plane workspace")
    p.add_argument("--out", required=True, help="output workspace directory")
    p.add_argument("--width", type=int, default=192)
    p.add_argument("--height", type=int, default=144)
    p.add_argument("--views", type=int, default=2)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except (ConfigError, BadRange, OutOfRange) as exc:
        logger.error("%s", exc)
        return 2
    except MvsError as exc:
        logger.error("%s", exc)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
