"""Workspace-oriented pipeline driver.

Each subcommand reads and writes a shared workspace directory:

    capture/   equirect frames, photographer masks, walk + scene specs
    crops/     perspective crops and the crop plan
    sparse/0/  COLMAP-format sparse model (written or externally estimated)
    scene/     exported gaussian scene binary and per-view ray dumps
    reports/   JSON metric reports

Subcommands are deterministic given a config and seed, so reruns produce
byte-identical outputs (external COLMAP excepted).
"""

import argparse
import dataclasses
import json
import shutil
import subprocess
import sys
from dataclasses import dataclass
from http.server import SimpleHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from .errors import DomainError, MetricError, PanosplatError, WorkspaceError
from .eval_metrics import (
    SceneEvalRecord,
    failure_rate,
    matching_rate,
    mean_matching_rate,
    pooled_matching_rate,
    psnr,
    reprojection_consistency,
)
from .pano_geometry import (
    EquirectFrame,
    load_crop_plan,
    make_crop_plan,
    render_crop,
    save_crop_plan,
)
from .png_io import read_png, write_png
from .splat_recon.colmap_io import (
    ingest_colmap_poses,
    mirror_point,
    parse_images_txt,
    parse_points3d_txt,
    splat_pose_from_crop,
    w2c_quat_t,
    write_cameras_txt,
    write_images_txt,
    write_points3d_txt,
)
from .splat_recon.rasterizer import rasterize
from .splat_recon.rays import save_pluecker
from .splat_recon.reconstruct import ReconstructConfig, reconstruct, subsample_views
from .splat_recon.scene_io import write_scene
from .synthetic_world import (
    BlobSpec,
    composite_photographer,
    default_scene,
    load_json,
    make_walk,
    render_equirect,
    save_json,
    scene_from_json,
    scene_to_json,
    trace_rays,
    walk_from_json,
    walk_to_json,
)

COLMAP_MODES = ("ground-truth-poses", "external")
MATCHERS = ("sequential", "exhaustive")


@dataclass
class PipelineConfig:
    workspace: str = "workspace"
    n_frames: int = 128
    fps: float = 12.0
    pano_height: int = 512
    crops_per_frame: int = 3
    crop_fov_deg: float = 120.0
    crop_size: int = 128
    subsample_k: int = 32
    n_gaussians: int = 20000
    iterations: int = 4000
    n_init_points: int = 8000
    heldout_count: int = 8
    consistency_points: int = 300
    seed: int = 0
    colmap_mode: str = "ground-truth-poses"
    colmap_matcher: str = "sequential"
    serve_port: int = 8000
    eval_workspaces: tuple = ()

    def __post_init__(self):
        for name in ("n_frames", "fps", "pano_height", "crops_per_frame",
                     "crop_size", "subsample_k", "n_gaussians", "iterations",
                     "n_init_points", "heldout_count", "consistency_points"):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be positive")
        if not 0 <= self.serve_port <= 65535:
            raise DomainError("serve_port must be in [0, 65535]")
        if not 0.0 < self.crop_fov_deg < 180.0:
            raise DomainError("crop_fov_deg must be in (0, 180)")
        if self.colmap_mode not in COLMAP_MODES:
            raise DomainError(f"colmap_mode must be one of {COLMAP_MODES}")
        if self.colmap_matcher not in MATCHERS:
            raise DomainError(f"colmap_matcher must be one of {MATCHERS}")
        self.eval_workspaces = tuple(self.eval_workspaces)


def config_from_file(path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise WorkspaceError(f"config file {path} not found")
    data = json.loads(path.read_text())
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = set(data) - known
    if unknown:
        raise DomainError(f"unknown config keys: {sorted(unknown)}")
    return PipelineConfig(**data)


class Workspace:
    def __init__(self, cfg: PipelineConfig):
        self.root = Path(cfg.workspace)
        self.capture = self.root / "capture"
        self.crops = self.root / "crops"
        self.sparse = self.root / "sparse" / "0"
        self.scene = self.root / "scene"
        self.reports = self.root / "reports"

    def require(self, path, hint):
        if not Path(path).exists():
            raise WorkspaceError(f"{path} missing; {hint}")
        return Path(path)


def _frame_name(i):
    return f"frame_{i:06d}.png"


def _crop_name(i):
    return f"crop_{i:06d}.png"


def cmd_synthesize(cfg: PipelineConfig):
    ws = Workspace(cfg)
    ws.capture.mkdir(parents=True, exist_ok=True)
    scene = default_scene()
    walk = make_walk(scene.room, cfg.n_frames, seed=cfg.seed, fps=cfg.fps)
    save_json(scene_to_json(scene), ws.capture / "scene.json")
    save_json(walk_to_json(walk), ws.capture / "walk.json")
    blob = BlobSpec()
    for i in range(cfg.n_frames):
        frame, depth = render_equirect(scene, walk.positions[i],
                                       walk.yaws_deg[i], cfg.pano_height,
                                       return_depth=True)
        frame, mask = composite_photographer(frame, walk.positions[i],
                                             walk.yaws_deg[i], blob,
                                             scene_depth=depth)
        write_png(ws.capture / _frame_name(i), frame.pixels)
        write_png(ws.capture / f"mask_{i:06d}.png", mask.astype(np.float64))
    manifest = {
        "n_frames": cfg.n_frames,
        "fps": cfg.fps,
        "duration_s": cfg.n_frames / cfg.fps,
        "pano_height": cfg.pano_height,
        "pano_width": 2 * cfg.pano_height,
        "seed": cfg.seed,
    }
    (ws.capture / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    print(f"synthesize: {cfg.n_frames} frames at {cfg.fps:g} fps "
          f"({manifest['duration_s']:.2f} s) -> {ws.capture}")
    return manifest


def cmd_crop(cfg: PipelineConfig):
    ws = Workspace(cfg)
    manifest_path = ws.require(ws.capture / "manifest.json",
                               "run the synthesize step first")
    manifest = json.loads(manifest_path.read_text())
    n_frames = int(manifest["n_frames"])
    if n_frames < 1:
        raise WorkspaceError("capture manifest reports zero frames")
    ws.crops.mkdir(parents=True, exist_ok=True)
    plan = make_crop_plan(n_frames, cfg.crops_per_frame, cfg.crop_fov_deg,
                          cfg.crop_size, seed=cfg.seed)
    save_crop_plan(plan, ws.crops / "plan.jsonl")
    frame = None
    frame_index = -1
    for k, (fi, cam) in enumerate(plan.entries):
        if fi != frame_index:
            frame = EquirectFrame.from_array(
                read_png(ws.require(ws.capture / _frame_name(fi),
                                    "capture is incomplete")))
            frame_index = fi
        write_png(ws.crops / _crop_name(k), render_crop(frame, cam))
    print(f"crop: {len(plan.entries)} perspective images -> {ws.crops}")
    return len(plan.entries)


def _surface_points(scene, walk, n_points, seed):
    """Scene surface samples (mirrored frame) with their shaded colors."""
    rng = np.random.default_rng(seed)
    frame_idx = rng.integers(0, len(walk), n_points)
    y = rng.uniform(-0.999, 0.999, n_points)
    theta = rng.uniform(0.0, 2.0 * np.pi, n_points)
    r = np.sqrt(1.0 - y * y)
    dirs = np.column_stack([r * np.sin(theta), y, r * np.cos(theta)])
    points = np.empty((n_points, 3))
    colors = np.empty((n_points, 3))
    for fi in np.unique(frame_idx):
        sel = frame_idx == fi
        rgb, t = trace_rays(scene, walk.positions[fi], dirs[sel])
        points[sel] = walk.positions[fi] + t[:, None] * dirs[sel]
        colors[sel] = np.clip(rgb, 0.0, 1.0)
    return mirror_point(points), (colors * 255.0).round().astype(np.uint8)


def _pose_ground_truth(cfg, ws):
    plan = load_crop_plan(ws.crops / "plan.jsonl")
    walk = walk_from_json(load_json(ws.capture / "walk.json"))
    scene = scene_from_json(load_json(ws.capture / "scene.json"))
    ws.sparse.mkdir(parents=True, exist_ok=True)
    cam0 = plan.entries[0][1]
    focal = cam0.focal_px
    write_cameras_txt(ws.sparse / "cameras.txt", cam0.width, cam0.height,
                      focal, focal, cam0.width / 2.0, cam0.height / 2.0)
    entries = []
    for k, (fi, cam) in enumerate(plan.entries):
        r_wc, origin = splat_pose_from_crop(cam.rotation, walk.yaws_deg[fi],
                                            walk.positions[fi])
        quat, t = w2c_quat_t(r_wc, origin)
        entries.append((k + 1, quat, t, 1, _crop_name(k)))
    write_images_txt(ws.sparse / "images.txt", entries)
    points, colors = _surface_points(scene, walk, cfg.n_init_points,
                                     cfg.seed + 1)
    write_points3d_txt(ws.sparse / "points3D.txt", points, colors)
    print(f"pose: wrote ground-truth poses for {len(entries)} images "
          f"and {len(points)} surface points -> {ws.sparse}")


def _run_colmap(args):
    proc = subprocess.run(args, capture_output=True, text=True)
    if proc.returncode != 0:
        raise WorkspaceError(f"{' '.join(args[:2])} failed "
                             f"(exit {proc.returncode}):\n{proc.stderr[-2000:]}")


def _pose_external(cfg, ws):
    binary = shutil.which("colmap")
    if binary is None:
        raise WorkspaceError(
            "COLMAP binary not found on PATH; install COLMAP or rerun with "
            "colmap_mode 'ground-truth-poses' to compute poses analytically")
    sparse_root = ws.sparse.parent
    sparse_root.mkdir(parents=True, exist_ok=True)
    db = sparse_root / "database.db"
    if db.exists():
        db.unlink()
    for stale in sparse_root.glob("[0-9]*"):
        shutil.rmtree(stale)
    _run_colmap([binary, "feature_extractor",
                 "--database_path", str(db),
                 "--image_path", str(ws.crops),
                 "--ImageReader.camera_model", "PINHOLE",
                 "--ImageReader.single_camera", "1",
                 "--SiftExtraction.use_gpu", "0"])
    if cfg.colmap_matcher == "sequential":
        _run_colmap([binary, "sequential_matcher",
                     "--database_path", str(db),
                     "--SequentialMatching.overlap", "10",
                     "--SiftMatching.use_gpu", "0"])
    else:
        _run_colmap([binary, "exhaustive_matcher",
                     "--database_path", str(db),
                     "--SiftMatching.use_gpu", "0"])
    _run_colmap([binary, "mapper",
                 "--database_path", str(db),
                 "--image_path", str(ws.crops),
                 "--output_path", str(sparse_root)])
    models = sorted(d for d in sparse_root.glob("[0-9]*") if d.is_dir())
    if not models:
        raise WorkspaceError("COLMAP mapper produced no sparse model")
    best, best_count = None, -1
    for model in models:
        _run_colmap([binary, "model_converter",
                     "--input_path", str(model),
                     "--output_path", str(model),
                     "--output_type", "TXT"])
        count = len(parse_images_txt(model / "images.txt"))
        if count > best_count:
            best, best_count = model, count
    if best != ws.sparse:
        for name in ("cameras.txt", "images.txt", "points3D.txt"):
            shutil.copyfile(best / name, ws.sparse / name)
    print(f"pose: COLMAP registered {best_count} images "
          f"(largest of {len(models)} models) -> {ws.sparse}")


def cmd_pose(cfg: PipelineConfig):
    ws = Workspace(cfg)
    ws.require(ws.crops / "plan.jsonl", "run the crop step first")
    if cfg.colmap_mode == "ground-truth-poses":
        _pose_ground_truth(cfg, ws)
    else:
        _pose_external(cfg, ws)


def cmd_reconstruct(cfg: PipelineConfig):
    ws = Workspace(cfg)
    ws.require(ws.sparse / "images.txt", "run the pose step first")
    ws.require(ws.crops / "plan.jsonl", "run the crop step first")
    result = ingest_colmap_poses(ws.sparse, images_dir=ws.crops)
    views = result.views
    if not views:
        raise WorkspaceError("sparse model registered no images")
    k = min(cfg.subsample_k, len(views))
    train = subsample_views(views, k, cfg.seed)
    train_names = {v.name for v in train}
    rest = [v for v in views if v.name not in train_names]
    heldout = (subsample_views(rest, min(cfg.heldout_count, len(rest)),
                               cfg.seed + 1) if rest else [])

    xyz, rgb = parse_points3d_txt(ws.sparse / "points3D.txt")
    points = (xyz - result.center) * result.scale if len(xyz) else None
    rcfg = ReconstructConfig(n_gaussians=cfg.n_gaussians,
                             iterations=cfg.iterations, seed=cfg.seed)
    log = []
    scene = reconstruct(train, rcfg, points=points, point_colors=rgb,
                        loss_log=log, scene_scale=result.scale)
    write_scene(ws.scene, scene)
    rays_dir = ws.scene / "rays"
    rays_dir.mkdir(exist_ok=True)
    for v in train:
        save_pluecker(rays_dir / (Path(v.name).stem + ".bin"), v)

    per_view = {v.name: psnr(rasterize(scene, v)[0], v.image) for v in heldout}
    mean_psnr = float(np.mean(list(per_view.values()))) if per_view else None
    ws.reports.mkdir(parents=True, exist_ok=True)
    report = {
        "n_views": len(views),
        "n_train": k,
        "n_heldout": len(heldout),
        "n_gaussians": len(scene),
        "iterations": len(log),
        "final_loss": log[-1] if log else None,
        "psnr_heldout": mean_psnr,
        "psnr_per_view": per_view,
        "unregistered_images": result.unregistered,
    }
    (ws.reports / "reconstruct.json").write_text(json.dumps(report, indent=1) + "\n")
    shown = "n/a" if mean_psnr is None else f"{mean_psnr:.2f} dB"
    print(f"reconstruct: {len(scene)} gaussians from {k} views; "
          f"held-out PSNR {shown} -> {ws.scene}")
    return report


def _eval_record(ws_path) -> SceneEvalRecord:
    ws_path = Path(ws_path)
    crops = sorted((ws_path / "crops").glob("crop_*.png"))
    if not crops:
        raise WorkspaceError(f"workspace {ws_path} has no crops to evaluate")
    sparse = ws_path / "sparse" / "0"
    registered = 0
    succeeded = False
    if (sparse / "images.txt").exists():
        registered = len(parse_images_txt(sparse / "images.txt"))
        succeeded = registered / len(crops) >= 0.10
    psnr_val = None
    report_path = ws_path / "reports" / "reconstruct.json"
    if report_path.exists():
        psnr_val = json.loads(report_path.read_text()).get("psnr_heldout")
    return SceneEvalRecord(scene_id=ws_path.name, total_images=len(crops),
                           registered_images=registered,
                           colmap_succeeded=succeeded, psnr_heldout=psnr_val)


def _consistency_for(ws_path, n_points, seed):
    capture = Path(ws_path) / "capture"
    if not (capture / "walk.json").exists():
        return None
    walk = walk_from_json(load_json(capture / "walk.json"))
    scene = scene_from_json(load_json(capture / "scene.json"))
    stride = max(1, len(walk) // 16)
    idx = list(range(0, len(walk), stride))
    frames = [read_png(capture / _frame_name(i)) for i in idx]
    poses = [(walk.positions[i], walk.yaws_deg[i]) for i in idx]
    return reprojection_consistency(frames, poses, scene,
                                    n_points=n_points, seed=seed)


def cmd_eval(cfg: PipelineConfig):
    ws_list = list(cfg.eval_workspaces) or [cfg.workspace]
    records = [_eval_record(p) for p in ws_list]
    if not records:
        raise DomainError("no workspaces to evaluate")
    try:
        mean_mr = mean_matching_rate(records)
        pooled_mr = pooled_matching_rate(records)
    except MetricError:
        mean_mr = pooled_mr = None
    consistency = _consistency_for(ws_list[0], cfg.consistency_points,
                                   cfg.seed)
    report = {
        "failure_rate": failure_rate(records),
        "mean_matching_rate": mean_mr,
        "pooled_matching_rate": pooled_mr,
        "reprojection_consistency": consistency,
        "scenes": [{
            **dataclasses.asdict(r),
            "matching_rate": matching_rate(r) if r.colmap_succeeded else None,
        } for r in records],
    }
    ws = Workspace(cfg)
    ws.reports.mkdir(parents=True, exist_ok=True)
    (ws.reports / "eval.json").write_text(json.dumps(report, indent=1) + "\n")

    header = f"{'scene':<20} {'reg/total':>12} {'MR':>8} {'PSNR':>8}"
    print(header)
    print("-" * len(header))
    for r, row in zip(records, report["scenes"]):
        mr = "-" if row["matching_rate"] is None else f"{row['matching_rate']:.4f}"
        ps = "-" if r.psnr_heldout is None else f"{r.psnr_heldout:.2f}"
        print(f"{r.scene_id:<20} {r.registered_images:>5}/{r.total_images:<6} "
              f"{mr:>8} {ps:>8}")
    print(f"failure rate {report['failure_rate']:.4f}; "
          f"mean MR {mean_mr if mean_mr is None else f'{mean_mr:.4f}'}; "
          f"pooled MR {pooled_mr if pooled_mr is None else f'{pooled_mr:.4f}'}")
    if consistency is not None:
        print(f"reprojection consistency {consistency:.5f}")
    return report


def scene_index(root: Path):
    out = []
    for bin_path in sorted((root / "scene").glob("*.bin")):
        sidecar_path = bin_path.with_suffix(".json")
        entry = {"name": bin_path.stem,
                 "url": f"/scene/{bin_path.name}",
                 "size_bytes": bin_path.stat().st_size}
        if sidecar_path.exists():
            entry.update(json.loads(sidecar_path.read_text()))
        out.append(entry)
    return out


class WorkspaceHandler(SimpleHTTPRequestHandler):
    def end_headers(self):
        self.send_header("Access-Control-Allow-Origin", "*")
        super().end_headers()

    def do_GET(self):
        if self.path.rstrip("/") == "/scenes":
            payload = json.dumps(scene_index(Path(self.directory))).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)
            return
        super().do_GET()

    def log_message(self, fmt, *args):
        pass  # quiet by default; tests hit the server concurrently


def make_server(cfg: PipelineConfig) -> ThreadingHTTPServer:
    ws = Workspace(cfg)
    if not ws.root.exists():
        raise WorkspaceError(f"workspace {ws.root} does not exist")
    root = str(ws.root)

    class Handler(WorkspaceHandler):
        def __init__(self, *args, **kwargs):
            super().__init__(*args, directory=root, **kwargs)

    return ThreadingHTTPServer(("127.0.0.1", cfg.serve_port), Handler)


def cmd_serve(cfg: PipelineConfig):
    server = make_server(cfg)
    host, port = server.server_address
    print(f"serve: http://{host}:{port}/ (scene index at /scenes); ctrl-c stops")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


COMMANDS = {
    "synthesize": cmd_synthesize,
    "crop": cmd_crop,
    "pose": cmd_pose,
    "reconstruct": cmd_reconstruct,
    "eval": cmd_eval,
    "serve": cmd_serve,
}


def load_config(args) -> PipelineConfig:
    cfg = config_from_file(args.config) if args.config else PipelineConfig()
    overrides = {}
    if args.workspace is not None:
        overrides["workspace"] = args.workspace
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "port", None) is not None:
        overrides["serve_port"] = args.port
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="panosplat",
        description="Panoramic capture to 3D gaussian scene pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "synthesize": "render the synthetic capture video and masks",
        "crop": "cut planned perspective crops from the capture",
        "pose": "produce the sparse pose model (ground-truth or COLMAP)",
        "reconstruct": "optimize and export the gaussian scene",
        "eval": "aggregate metrics over completed workspaces",
        "serve": "serve the workspace over HTTP with a /scenes index",
    }
    for name, help_text in helps.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--workspace", help="workspace directory override")
        p.add_argument("--seed", type=int, help="seed override")
        if name == "serve":
            p.add_argument("--port", type=int, help="port override")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
        COMMANDS[args.command](cfg)
    except PanosplatError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
