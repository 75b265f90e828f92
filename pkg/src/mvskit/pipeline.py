"""Pipeline orchestration: staged execution with on-disk caching.

Every stage writes its outputs into the workspace and records a stamp with a
digest of its inputs (files + relevant config). A stage reruns only when the
digest changes, an output is missing, or --force is given. Stage outputs are
exchanged through the documented file formats, so any stage can also be run
in isolation through the CLI.

Pipeline variants:
    fast:    depth -> counter -> confidence -> filter(tau) -> fuse
    refined: depth -> counter -> confidence -> refine -> re-counter ->
             re-confidence -> filter(tau) -> fuse (5 deg normal preset)
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import formats
from .confidence import heuristic_confidence, load_confidence_pfm, save_confidence_pfm
from .consistency import ConsistencyThresholds, CounterMap, build_counter_map, build_label_map
from .errors import ConfigError, MissingMaps
from .evaluation import evaluate_clouds, report_to_json, report_to_table
from .fusion import FusedPointCloud, FusionConfig, filter_by_confidence, filter_by_support, fuse
from .patchmatch import DepthNormalMap, PatchMatchConfig, estimate_all_multiscale
from .refine import RefineConfig, invert_depth, refine, state_to_normals
from .scene import SceneBundle

logger = logging.getLogger(__name__)

VARIANTS = ("fast", "refined")


@dataclass
class PipelineConfig:
    """All stage parameters plus the pipeline variant."""

    variant: str = "fast"
    downsample: float = 0.5
    seed: int = 0
    threads: int = 1
    force: bool = False
    tau: float = 0.05
    label_max_dist: float = 2.0
    tolerances: tuple[float, ...] = (0.01,)
    patchmatch: PatchMatchConfig = field(default_factory=PatchMatchConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    refine_cfg: RefineConfig = field(default_factory=RefineConfig)
    thresholds: ConsistencyThresholds = field(default_factory=ConsistencyThresholds)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not (0.0 <= self.tau <= 1.0):
            raise ConfigError(f"tau must be in [0, 1], got {self.tau}")
        if not (0.0 < self.downsample <= 1.0):
            raise ConfigError(f"downsample must be in (0, 1], got {self.downsample}")

    def resolved_fusion(self) -> FusionConfig:
        """The refined variant forces the 5-degree normal-consistency preset."""
        if self.variant == "refined":
            return dataclasses.replace(self.fusion, max_normal_angle_deg=5.0)
        return self.fusion


# ---------------------------------------------------------------------------
# stage cache


def _sha1_file(path: Path) -> str:
    h = hashlib.sha1()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _digest(input_files: list[Path], extra) -> str:
    h = hashlib.sha1()
    for p in sorted(Path(f) for f in input_files):
        h.update(str(p.name).encode())
        h.update(_sha1_file(p).encode())
    h.update(json.dumps(extra, sort_keys=True, default=str).encode())
    return h.hexdigest()


class Workspace:
    """Directory layout helper plus the stage-stamp store."""

    def __init__(self, root):
        self.root = Path(root)

    def dir(self, *parts) -> Path:
        d = self.root.joinpath(*parts)
        d.mkdir(parents=True, exist_ok=True)
        return d

    def stamp_path(self, stage: str) -> Path:
        return self.dir(".stamps") / f"{stage}.json"

    def is_current(self, stage: str, digest: str, outputs: list[Path]) -> bool:
        stamp = self.stamp_path(stage)
        if not stamp.exists():
            return False
        try:
            data = json.loads(stamp.read_text())
        except json.JSONDecodeError:
            return False
        if data.get("digest") != digest:
            return False
        return all(Path(p).exists() for p in data.get("outputs", [])) and all(
            p.exists() for p in outputs
        )

    def write_stamp(self, stage: str, digest: str, outputs: list[Path]) -> None:
        self.stamp_path(stage).write_text(
            json.dumps({"digest": digest, "outputs": [str(p) for p in outputs]}, indent=2)
        )

    def camera_files(self) -> list[Path]:
        files = sorted((self.root / "cameras").glob("*"))
        scene_json = self.root / "scene.json"
        if scene_json.exists():
            files.append(scene_json)
        return files

    def image_files(self) -> list[Path]:
        return sorted(p for p in (self.root / "images").iterdir() if p.is_file())


def _save_map(dirpath: Path, name: str, dn: DepthNormalMap) -> list[Path]:
    depth_path = dirpath / f"{name}.pfm"
    normal_path = dirpath / f"{name}_normal.pfm"
    formats.write_depth_pfm(depth_path, dn.depth, dn.valid)
    normal = np.where(dn.valid[..., None], dn.normal, 0.0).astype(np.float32)
    formats.write_pfm(normal_path, normal)
    return [depth_path, normal_path]


def _load_map(dirpath: Path, name: str) -> DepthNormalMap:
    depth_path = dirpath / f"{name}.pfm"
    normal_path = dirpath / f"{name}_normal.pfm"
    if not depth_path.exists() or not normal_path.exists():
        raise MissingMaps(f"missing maps for {name} under {dirpath}")
    depth, valid = formats.read_depth_pfm(depth_path)
    normal = formats.read_pfm(normal_path).astype(np.float64)
    norms = np.linalg.norm(normal, axis=-1, keepdims=True)
    nz = norms[..., 0] > 0
    normal[nz] /= norms[nz]
    valid &= nz
    return DepthNormalMap(depth=depth, normal=normal, valid=valid)


# ---------------------------------------------------------------------------
# stages


def stage_depth(ws: Workspace, bundle: SceneBundle, config: PipelineConfig) -> list[Path]:
    """Joint multi-scale depth/normal estimation for every view."""
    out_dir = ws.dir("depth")
    names = bundle.view_names()
    cfg = config.patchmatch
    if cfg.depth_range is None:
        if bundle.depth_range is None:
            raise ConfigError("no depth range: provide scene.json or --zmin/--zmax")
        cfg = dataclasses.replace(cfg, depth_range=bundle.depth_range)

    digest = _digest(
        ws.image_files() + ws.camera_files(),
        {
            "stage": "depth",
            "patchmatch": dataclasses.asdict(cfg),
            "downsample": config.downsample,
            "seed": config.seed,
        },
    )
    outputs = [out_dir / f"{n}.pfm" for n in names] + [out_dir / f"{n}_normal.pfm" for n in names]
    if not config.force and ws.is_current("depth", digest, outputs):
        logger.info("depth: cached")
        return outputs

    logger.info("depth: estimating %d views (levels=%d)", len(names), cfg.levels)
    maps = estimate_all_multiscale(bundle.views, cfg, seed=config.seed, threads=config.threads)
    written = []
    for view, dn in zip(bundle.views, maps):
        written += _save_map(out_dir, view.name, dn)
        logger.info("depth: %s valid %.1f%%", view.name, 100.0 * dn.valid.mean())
    ws.write_stamp("depth", digest, written)
    return written


def _counter_stage(
    ws: Workspace,
    bundle: SceneBundle,
    config: PipelineConfig,
    maps_dir: str,
    out_name: str,
) -> list[Path]:
    """Counter maps for the maps in `maps_dir` (shared by plain and refined)."""
    out_dir = ws.dir(out_name)
    names = bundle.view_names()
    map_files = sorted(ws.dir(maps_dir).glob("*.pfm"))
    digest = _digest(
        map_files,
        {"stage": out_name, "thresholds": dataclasses.asdict(config.thresholds)},
    )
    outputs = [out_dir / f"{n}.pfm" for n in names]
    if not config.force and ws.is_current(out_name, digest, outputs):
        logger.info("%s: cached", out_name)
        return outputs

    maps = {n: _load_map(ws.dir(maps_dir), n) for n in names}
    cams = {n: v.camera for n, v in zip(names, bundle.views)}
    written = []
    for i, name in enumerate(names):
        src_names = [names[j] for j in bundle.sources[i]]
        counter = build_counter_map(
            maps[name],
            cams[name],
            [maps[s] for s in src_names],
            [cams[s] for s in src_names],
            config.thresholds,
        )
        path = out_dir / f"{name}.pfm"
        formats.write_pfm(path, counter.count.astype(np.float32))
        written.append(path)
    ws.write_stamp(out_name, digest, written)
    return written


def stage_counter(ws, bundle, config) -> list[Path]:
    return _counter_stage(ws, bundle, config, "depth", "counter")


def _load_counter(ws: Workspace, dirname: str, name: str, n_sources: int) -> CounterMap:
    data = formats.read_pfm(ws.dir(dirname) / f"{name}.pfm")
    return CounterMap(count=np.round(data).astype(np.int32), n_sources=n_sources)


def _confidence_stage(
    ws: Workspace,
    bundle: SceneBundle,
    config: PipelineConfig,
    counter_dir: str,
    user_dir: str,
    auto_dir: str,
) -> dict[str, Path]:
    """Resolve per-view confidence: user file if present, else heuristic.

    Heuristic maps are cached under `auto_dir` so user-provided files in
    `user_dir` are never overwritten.
    """
    names = bundle.view_names()
    resolved: dict[str, Path] = {}
    heuristic_needed = []
    for name in names:
        user_path = ws.root / user_dir / f"{name}.pfm"
        if user_path.exists():
            logger.info("confidence: using provided %s", user_path)
            resolved[name] = user_path
        else:
            heuristic_needed.append(name)

    if heuristic_needed:
        out_dir = ws.dir(auto_dir)
        counter_files = [ws.dir(counter_dir) / f"{n}.pfm" for n in heuristic_needed]
        digest = _digest(counter_files, {"stage": auto_dir, "sources": bundle.sources})
        outputs = [out_dir / f"{n}.pfm" for n in heuristic_needed]
        if config.force or not ws.is_current(auto_dir, digest, outputs):
            logger.warning(
                "confidence: no files under %s/ for %d views; falling back to the "
                "counter-based heuristic",
                user_dir,
                len(heuristic_needed),
            )
            for name in heuristic_needed:
                i = names.index(name)
                n_sources = max(1, len(bundle.sources[i]))
                counter = _load_counter(ws, counter_dir, name, n_sources)
                conf = heuristic_confidence(counter)
                save_confidence_pfm(out_dir / f"{name}.pfm", conf)
            ws.write_stamp(auto_dir, digest, outputs)
        else:
            logger.info("%s: cached", auto_dir)
        for name, path in zip(heuristic_needed, outputs):
            resolved[name] = path
    return resolved


def stage_confidence(ws, bundle, config) -> dict[str, Path]:
    return _confidence_stage(ws, bundle, config, "counter", "conf", "conf_auto")


def _filter_stage(
    ws: Workspace,
    bundle: SceneBundle,
    config: PipelineConfig,
    maps_dir: str,
    conf_paths: dict[str, Path],
    out_name: str,
    mask_k: int | None = None,
) -> list[Path]:
    out_dir = ws.dir(out_name)
    names = bundle.view_names()
    map_files = sorted(ws.dir(maps_dir).glob("*.pfm"))
    digest = _digest(
        map_files + [conf_paths[n] for n in names],
        {"stage": out_name, "tau": config.tau, "mask_k": mask_k},
    )
    outputs = []
    for n in names:
        outputs += [out_dir / f"{n}.pfm", out_dir / f"{n}_normal.pfm"]
    if not config.force and ws.is_current(out_name, digest, outputs):
        logger.info("%s: cached", out_name)
        return outputs

    written = []
    for i, name in enumerate(names):
        dn = _load_map(ws.dir(maps_dir), name)
        conf = load_confidence_pfm(conf_paths[name])
        filtered = filter_by_confidence(dn, conf, config.tau)
        if mask_k is not None:
            counter = _load_counter(ws, "counter", name, max(1, len(bundle.sources[i])))
            filtered = filter_by_support(filtered, counter, mask_k)
        removed = dn.valid.sum() - filtered.valid.sum()
        logger.info("%s: %s removed %d pixels", out_name, name, int(removed))
        written += _save_map(out_dir, name, filtered)
    ws.write_stamp(out_name, digest, written)
    return written


def stage_filter(ws, bundle, config, conf_paths, mask_k=None) -> list[Path]:
    return _filter_stage(ws, bundle, config, "depth", conf_paths, "filtered", mask_k)


def stage_refine(ws, bundle, config, conf_paths) -> list[Path]:
    """Confidence-weighted piecewise-planar refinement of every depth map."""
    out_dir = ws.dir("refined")
    names = bundle.view_names()
    map_files = sorted(ws.dir("depth").glob("*.pfm"))
    digest = _digest(
        map_files + [conf_paths[n] for n in names],
        {"stage": "refined", "refine": dataclasses.asdict(config.refine_cfg)},
    )
    outputs = []
    for n in names:
        outputs += [out_dir / f"{n}.pfm", out_dir / f"{n}_normal.pfm"]
    if not config.force and ws.is_current("refined", digest, outputs):
        logger.info("refined: cached")
        return outputs

    written = []
    for i, name in enumerate(names):
        dn = _load_map(ws.dir("depth"), name)
        conf = load_confidence_pfm(conf_paths[name])
        d_bar, valid = invert_depth(dn.depth, dn.valid)
        view = bundle.views[i]
        state = refine(
            d_bar,
            conf,
            view.image.astype(np.float64),
            config.refine_cfg,
            valid=valid,
        )
        logger.info(
            "refined: %s objective %.4g -> %.4g (%d iterations)",
            name,
            state.objective_history[0],
            min(state.objective_history),
            len(state.objective_history) - 1,
        )
        depth = 1.0 / state.d
        normal = state_to_normals(state, view.camera)
        refined_map = DepthNormalMap(
            depth=depth, normal=normal, valid=np.ones(depth.shape, dtype=bool)
        )
        written += _save_map(out_dir, name, refined_map)
    ws.write_stamp("refined", digest, written)
    return written


def stage_fuse(ws, bundle, config, maps_dir: str) -> Path:
    out_path = ws.root / "cloud.ply"
    names = bundle.view_names()
    map_files = sorted(ws.dir(maps_dir).glob("*.pfm"))
    fusion_cfg = config.resolved_fusion()
    digest = _digest(
        map_files, {"stage": "fuse", "maps": maps_dir, "fusion": dataclasses.asdict(fusion_cfg)}
    )
    if not config.force and ws.is_current("fuse", digest, [out_path]):
        logger.info("fuse: cached")
        return out_path

    maps = [_load_map(ws.dir(maps_dir), n) for n in names]
    cloud = fuse(bundle.views, maps, fusion_cfg)
    cloud.save_ply(out_path)
    logger.info("fuse: %d points -> %s", len(cloud), out_path)
    ws.write_stamp("fuse", digest, [out_path])
    return out_path


def stage_eval(ws, config, gt_cloud_path) -> Path:
    cloud_path = ws.root / "cloud.ply"
    if not cloud_path.exists():
        raise MissingMaps("no cloud.ply in the workspace; run fusion first")
    gt_cloud_path = Path(gt_cloud_path)
    out_path = ws.root / "report.json"
    digest = _digest(
        [cloud_path, gt_cloud_path], {"stage": "eval", "tolerances": list(config.tolerances)}
    )
    if not config.force and ws.is_current("eval", digest, [out_path]):
        logger.info("eval: cached")
        return out_path

    recon = FusedPointCloud.load_ply(cloud_path)
    gt = FusedPointCloud.load_ply(gt_cloud_path)
    reports = evaluate_clouds(recon.positions, gt.positions, config.tolerances)
    out_path.write_text(report_to_json(reports))
    print(report_to_table(reports), end="")
    ws.write_stamp("eval", digest, [out_path])
    return out_path


def stage_label(ws, bundle, config, gt_dir) -> list[Path]:
    """Ground-truth label maps (needs gt depth PFMs, one per view)."""
    out_dir = ws.dir("label")
    names = bundle.view_names()
    gt_dir = Path(gt_dir)
    gt_files = [gt_dir / f"{n}.pfm" for n in names]
    for p in gt_files:
        if not p.exists():
            raise MissingMaps(f"missing ground-truth depth {p}")
    map_files = sorted(ws.dir("depth").glob("*.pfm"))
    digest = _digest(
        map_files + gt_files, {"stage": "label", "max_dist": config.label_max_dist}
    )
    outputs = [out_dir / f"{n}.png" for n in names]
    if not config.force and ws.is_current("label", digest, outputs):
        logger.info("label: cached")
        return outputs

    cams = [v.camera for v in bundle.views]
    for i, name in enumerate(names):
        est = _load_map(ws.dir("depth"), name)
        gt_depth, gt_valid = formats.read_depth_pfm(gt_dir / f"{name}.pfm")
        gt_map = DepthNormalMap(
            depth=gt_depth, normal=np.zeros(gt_depth.shape + (3,)), valid=gt_valid
        )
        src_cams = [cams[j] for j in bundle.sources[i]]
        labels = build_label_map(est, gt_map, cams[i], src_cams, config.label_max_dist)
        formats.write_label_png(out_dir / f"{name}.png", labels.labels)
    ws.write_stamp("label", digest, outputs)
    return outputs


def stage_export_train(ws, bundle, config) -> Path:
    """Training-sample export: RGB + polar normals + counter + labels."""
    from .confidence import export_training_sample
    from .consistency import LabelMap

    out_dir = ws.dir("train")
    names = bundle.view_names()
    for i, name in enumerate(names):
        dn = _load_map(ws.dir("depth"), name)
        counter = _load_counter(ws, "counter", name, max(1, len(bundle.sources[i])))
        label_path = ws.root / "label" / f"{name}.png"
        if not label_path.exists():
            raise MissingMaps(f"missing label map {label_path}; run the label stage first")
        labels = LabelMap(labels=formats.read_label_png(label_path))
        export_training_sample(bundle.views[i], dn, counter, labels, out_dir)
    logger.info("export-train: wrote %d records to %s", len(names), out_dir)
    return out_dir / "manifest.json"


def run_pipeline(bundle: SceneBundle, config: PipelineConfig) -> dict:
    """End-to-end pipeline per the configured variant; idempotent per stage."""
    ws = Workspace(bundle.root)
    stage_depth(ws, bundle, config)
    stage_counter(ws, bundle, config)
    conf_paths = stage_confidence(ws, bundle, config)

    if config.variant == "fast":
        stage_filter(ws, bundle, config, conf_paths)
        final_dir = "filtered"
    else:
        stage_refine(ws, bundle, config, conf_paths)
        _counter_stage(ws, bundle, config, "refined", "refined_counter")
        refined_conf = _confidence_stage(
            ws, bundle, config, "refined_counter", "refined_conf", "refined_conf_auto"
        )
        _filter_stage(ws, bundle, config, "refined", refined_conf, "refined_filtered")
        final_dir = "refined_filtered"

    cloud_path = stage_fuse(ws, bundle, config, final_dir)
    result = {"cloud": cloud_path, "final_maps": ws.root / final_dir}

    gt_cloud = bundle.root / "gt" / "cloud.ply"
    if gt_cloud.exists():
        result["report"] = stage_eval(ws, config, gt_cloud)
    return result
