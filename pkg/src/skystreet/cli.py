"""Command-line pipeline: city -> plan -> capture -> fuse -> bundles ->
diffusion -> ground priors -> reconstruction -> evaluation, plus an
end-to-end seeded demo.

Every stage is a pure function of its input files and flags; outputs are
written atomically.  Exit codes: 0 success, 2 config error, 3 data error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import checkpoint as ckpt
from . import dataset as ds
from .city import CityConfig, CityScene, EnvironmentCondition, generate_city, scene_diameter, scene_from_dict, scene_to_dict
from .cloud import PointRenderSettings, fuse_depth, load_cloud, render_points, save_cloud
from .condition import BUNDLE_RES, build_bundle
from .diffusion import (
    DenoiserConfig,
    DenoiserNet,
    NoiseSchedule,
    SampleConfig,
    TrainConfig,
    Trainer,
    camera_feature,
    encode,
    point_tokens,
    sample_ground,
)
from .errors import ConfigError, DataError, SkystreetError
from .formats import read_json, read_png, write_json, write_png
from .geom import Camera, Intrinsics
from .metrics import evaluate_set
from .splat import LrConfig, init_from_cloud, make_skybox, optimize, render_gaussians
from .trajectory import AerialPlanConfig, GroundPlanConfig, plan_aerial, plan_ground

CONFIG_VERSION = 1


def load_config(path: str | Path, allowed: set[str]) -> dict:
    """Versioned JSON config; unknown fields are rejected."""
    cfg = read_json(path)
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    if cfg.get("version") != CONFIG_VERSION:
        raise ConfigError(f"{path}: expected \"version\": {CONFIG_VERSION}, got {cfg.get('version')!r}")
    unknown = set(cfg) - allowed - {"version"}
    if unknown:
        raise ConfigError(f"{path}: unknown config fields {sorted(unknown)}")
    return {k: v for k, v in cfg.items() if k != "version"}


def intrinsics_for(res: int, fov_deg: float) -> Intrinsics:
    f = (res / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
    return Intrinsics(fx=f, fy=f, cx=res / 2.0, cy=res / 2.0, width=res, height=res)


def _load_scene(path: str | Path) -> CityScene:
    return scene_from_dict(read_json(path))


def _load_env(path: str | Path) -> EnvironmentCondition:
    fields = load_config(path, {"sun_direction", "ambient", "fog_density"})
    return EnvironmentCondition(
        sun_direction=tuple(fields.get("sun_direction", (-0.4, -0.3, -0.87))),
        ambient=fields.get("ambient", 0.35),
        fog_density=fields.get("fog_density", 0.0),
    )


# ---------------------------------------------------------------- subcommands


def cmd_generate_city(args) -> None:
    fields = {}
    if args.config:
        fields = load_config(
            args.config,
            {"blocks_x", "blocks_y", "block_size", "road_width", "height_min", "height_max", "fill_density"},
        )
    scene = generate_city(args.seed, CityConfig(**fields))
    write_json(args.out, scene_to_dict(scene))
    print(f"wrote {args.out}: {len(scene.buildings)} buildings, {len(scene.roads)} roads")


def cmd_plan(args) -> None:
    scene = _load_scene(args.scene)
    a_fields = load_config(
        args.aerial_cfg, {"base_altitude", "altitude_margin", "spacing_base", "overlap_factor"}
    )
    acfg = AerialPlanConfig(**a_fields)
    g_all = load_config(
        args.ground_cfg, {"spacing", "camera_height", "turn_radius", "clearance", "routes"}
    )
    routes = g_all.pop("routes", [])
    gcfg = GroundPlanConfig(**g_all)

    rigs = plan_aerial(scene, acfg)
    out = Path(args.out)
    from .trajectory import aerial_to_dict, ground_to_dict

    write_json(out / "aerial.json", aerial_to_dict(rigs, acfg))
    for i, route in enumerate(routes):
        path = plan_ground(scene, (np.asarray(route["start"]), np.asarray(route["end"])), gcfg)
        write_json(out / f"ground_{i:02d}.json", ground_to_dict(path, gcfg))
    print(f"planned {len(rigs)} rigs, {len(routes)} ground paths -> {out}")


def cmd_capture(args) -> None:
    scene = _load_scene(args.scene)
    env = _load_env(args.env)
    traj = Path(args.trajectories)
    from .trajectory import aerial_from_dict, ground_from_dict

    rigs, acfg = aerial_from_dict(read_json(traj / "aerial.json"))
    grounds = [ground_from_dict(read_json(p)) for p in sorted(traj.glob("ground_*.json"))]
    if not grounds:
        raise DataError(f"{traj}: no ground_*.json trajectories")
    gcfg = grounds[0][1]
    dataset = ds.capture_dataset(
        args.out,
        scene,
        env,
        rigs,
        acfg,
        intrinsics_for(args.aerial_res, args.aerial_fov),
        [g for g, _ in grounds],
        gcfg,
        intrinsics_for(args.ground_res, args.ground_fov),
    )
    print(f"captured {len(dataset.views('aerial'))} aerial + {len(dataset.views('ground'))} ground views -> {args.out}")


def cmd_fuse(args) -> None:
    dataset = ds.Dataset(args.dataset)
    records = dataset.views("aerial")
    if not records:
        raise DataError("fuse: dataset has no aerial views")
    views = []
    ids = []
    for v in records:
        views.append((dataset.load_camera(v.view_id), dataset.load_depth(v.view_id), dataset.load_rgb(v.view_id)))
        ids.append(v.view_id)
    cloud = fuse_depth(
        views, stride=args.stride, max_points=args.max_points, dedup_cell=args.dedup_cell,
        seed=args.seed, view_ids=ids,
    )
    out = args.out or dataset.cloud_path()
    save_cloud(out, cloud)
    print(f"fused {len(cloud)} points -> {out}")


def cmd_prep_bundles(args) -> None:
    dataset = ds.Dataset(args.dataset)
    cloud = load_cloud(args.cloud or dataset.cloud_path())
    settings = PointRenderSettings(point_radius_px=args.point_radius, background=(0.0, 0.0, 0.0))
    out = Path(args.out or dataset.root / "bundles")
    count = 0
    for v in dataset.views("ground"):
        cam = dataset.load_camera(v.view_id)
        bundle, manifest = build_bundle(dataset, cam, cloud, settings, n=args.n)
        pr_path = ds.view_dir(dataset.root, "ground") / f"{v.view_id}_pointrender.png"
        write_png(pr_path, bundle.point_render)
        write_json(
            out / f"{v.view_id}.json",
            {
                "version": CONFIG_VERSION,
                "ground_view_id": v.view_id,
                "n": bundle.n,
                "point_render": str(pr_path.relative_to(dataset.root)),
                **manifest,
            },
        )
        count += 1
    print(f"built {count} bundles -> {out}")


def _load_bundle_inputs(dataset: ds.Dataset, bundles_dir: Path) -> list[dict]:
    """Shared loader for training and generation: tensors per bundle."""
    diam = scene_diameter(dataset.scene)
    items = []
    for mpath in sorted(Path(bundles_dir).glob("*.json")):
        m = read_json(mpath)
        gvid = m["ground_view_id"]
        ref_lat = []
        feats = []
        for ref in m["refs"]:
            img = dataset.load_rgb(ref["view_id"])
            if img.shape[:2] != (BUNDLE_RES, BUNDLE_RES):
                img = np.asarray(Image.fromarray(img).resize((BUNDLE_RES, BUNDLE_RES), Image.BILINEAR))
            ref_lat.append(encode(img.astype(np.float64) / 255.0))
            feats.append(camera_feature(dataset.load_camera(ref["view_id"]).resized(BUNDLE_RES, BUNDLE_RES), diam))
        g_cam = dataset.load_camera(gvid).resized(BUNDLE_RES, BUNDLE_RES)
        feats.append(camera_feature(g_cam, diam))
        g_img = dataset.load_rgb(gvid)
        if g_img.shape[:2] != (BUNDLE_RES, BUNDLE_RES):
            g_img = np.asarray(Image.fromarray(g_img).resize((BUNDLE_RES, BUNDLE_RES), Image.BILINEAR))
        pr = read_png(dataset.root / m["point_render"])
        items.append(
            {
                "ground_view_id": gvid,
                "ref_latents": np.stack(ref_lat),
                "ground_latent": encode(g_img.astype(np.float64) / 255.0),
                "cam_feats": np.stack(feats),
                "tokens": point_tokens(pr),
            }
        )
    if not items:
        raise DataError(f"{bundles_dir}: no bundle manifests")
    return items


def cmd_train_diffusion(args) -> None:
    dataset = ds.Dataset(args.dataset)
    fields = load_config(args.config, {"denoiser", "train", "steps"})
    dcfg = DenoiserConfig.from_dict(fields.get("denoiser", {}))
    tcfg = TrainConfig(**fields.get("train", {}))
    steps = int(args.steps or fields.get("steps", 1000))

    items = _load_bundle_inputs(dataset, Path(args.bundles))
    stacks = torch.stack(
        [
            torch.from_numpy(
                np.concatenate([it["ref_latents"], it["ground_latent"][None]], axis=0)
            ).permute(0, 3, 1, 2)
            for it in items
        ]
    ).float()
    feats = torch.stack([torch.from_numpy(it["cam_feats"]) for it in items]).float()
    toks = torch.stack([torch.from_numpy(it["tokens"]) for it in items]).float()

    net = DenoiserNet(dcfg, init_seed=tcfg.seed)
    schedule = NoiseSchedule()
    trainer = Trainer(net, schedule, tcfg)
    loss = float("nan")
    for step in range(steps):
        idx = trainer.sample_batch_indices(len(items))
        loss = trainer.train_step(stacks[idx], feats[idx], toks[idx])
        if step % max(1, steps // 10) == 0 or step == steps - 1:
            print(f"step {step:6d}  loss {loss:.5f}  lr {trainer.opt.param_groups[0]['lr']:.2e}")
    meta = {
        "kind": "diffusion",
        "denoiser": dcfg.to_dict(),
        "train": tcfg.to_dict(),
        "iteration": trainer.iteration,
        "final_loss": loss,
        "scene_diameter": scene_diameter(dataset.scene),
    }
    arrays = {k: v.detach().numpy() for k, v in net.state_dict().items()}
    ckpt.save_checkpoint(args.out, meta, arrays)
    print(f"trained {steps} steps (final loss {loss:.5f}) -> {args.out}")


def load_denoiser(path: str | Path) -> tuple[DenoiserNet, dict]:
    meta, arrays = ckpt.load_checkpoint(path)
    if meta.get("kind") != "diffusion":
        raise DataError(f"{path}: not a diffusion checkpoint")
    net = DenoiserNet(DenoiserConfig.from_dict(meta["denoiser"]))
    net.load_state_dict({k: torch.from_numpy(v) for k, v in arrays.items()})
    return net, meta


def cmd_generate_ground(args) -> None:
    dataset = ds.Dataset(args.dataset)
    net, _ = load_denoiser(args.ckpt)
    schedule = NoiseSchedule()
    cfg = SampleConfig(
        steps=args.steps, eta=args.eta, cfg_scale=args.cfg_scale,
        noise_gamma=args.noise_gamma, seed=args.seed,
    )
    items = _load_bundle_inputs(dataset, Path(args.bundles))
    out = Path(args.out)
    for i, it in enumerate(items):
        per_view = SampleConfig(
            steps=cfg.steps, eta=cfg.eta, cfg_scale=cfg.cfg_scale,
            noise_gamma=cfg.noise_gamma, seed=cfg.seed + i,
        )
        image, _ = sample_ground(
            net, it["ref_latents"], it["cam_feats"], it["tokens"], schedule, per_view
        )
        write_png(out / f"{it['ground_view_id']}.png", image)
    print(f"generated {len(items)} ground views -> {out}")


def _resized_view(img: np.ndarray, res: int) -> np.ndarray:
    if img.shape[:2] == (res, res):
        return img
    return np.asarray(Image.fromarray(img).resize((res, res), Image.BILINEAR))


def cmd_reconstruct(args) -> None:
    dataset = ds.Dataset(args.dataset)
    scene = dataset.scene
    cloud = load_cloud(args.cloud or dataset.cloud_path())
    res = args.res
    dtype = torch.float64 if args.precision == "float64" else torch.float32

    views = []
    for v in dataset.views("aerial"):
        cam = dataset.load_camera(v.view_id).resized(res, res)
        views.append((cam, _resized_view(dataset.load_rgb(v.view_id), res)))
    if args.priors:
        priors = sorted(Path(args.priors).glob("*.png"))
        if not priors:
            raise DataError(f"{args.priors}: no prior images")
        for p in priors:
            vid = p.stem
            cam = dataset.load_camera(vid).resized(res, res)
            views.append((cam, _resized_view(read_png(p), res)))

    model = init_from_cloud(cloud, dtype=dtype)
    if args.max_gaussians and len(model.scene) > args.max_gaussians:
        raise ConfigError(
            f"cloud has {len(model.scene)} points > --max-gaussians {args.max_gaussians}; refuse"
        )
    model.skybox = make_skybox(
        scene_diameter(scene), center=scene.center, count=args.skybox_count, seed=args.seed,
        dtype=dtype,
    )
    history = optimize(
        model, views, iters=args.iters, lr=LrConfig(), seed=args.seed,
        background=(0.0, 0.0, 0.0),
    )

    out = Path(args.out)
    arrays = model.state_arrays()
    meta = {
        "kind": "splat",
        "iters": args.iters,
        "seed": args.seed,
        "res": res,
        "skybox_count": args.skybox_count,
        "priors": bool(args.priors),
        "precision": args.precision,
        "final_loss": history[-1] if history else None,
    }
    ckpt.save_checkpoint(out / "model.ckpt", meta, arrays)
    renders = out / "renders"
    with torch.no_grad():
        for v in dataset.views():
            cam = dataset.load_camera(v.view_id).resized(res, res)
            img, _ = render_gaussians(model, cam)
            write_png(renders / f"{v.view_id}.png", np.round(np.clip(img.numpy(), 0, 1) * 255).astype(np.uint8))
    write_json(out / "summary.json", {"version": CONFIG_VERSION, **meta, "views": len(views)})
    print(f"optimized {args.iters} iters (final loss {history[-1] if history else float('nan'):.4f}) -> {out}")


def _split_of(view_id: str) -> str:
    return "aerial" if view_id.startswith("rig") else "ground"


def cmd_evaluate(args) -> None:
    render_files = sorted(Path(args.renders).glob("*.png"))
    if not render_files:
        raise DataError(f"{args.renders}: no renders to evaluate")
    renders, targets, splits, ids = [], [], [], []
    for rf in render_files:
        tf = Path(args.targets) / rf.name
        if not tf.exists():
            raise DataError(f"missing target for {rf.name}: {tf}")
        renders.append(read_png(rf))
        targets.append(read_png(tf))
        splits.append(_split_of(rf.stem))
        ids.append(rf.stem)
    report = evaluate_set(renders, targets, splits, ids)
    write_json(args.out, report)
    print(f"{'split':<8} {'count':>5} {'psnr':>8} {'ssim':>8} {'perc_proxy':>11}")
    for name in ("aerial", "ground"):
        blk = report["splits"][name]
        if blk["count"]:
            print(f"{name:<8} {blk['count']:>5} {blk['psnr']:>8.3f} {blk['ssim']:>8.4f} {blk['perc_proxy']:>11.5f}")
    o = report["overall"]
    print(f"{'overall':<8} {o['count']:>5} {o['psnr']:>8.3f} {o['ssim']:>8.4f} {o['perc_proxy']:>11.5f}")
    print(f"wrote {args.out}")


# ----------------------------------------------------------------------- demo

DEMO = {
    "seed": 7,
    "city": {"blocks_x": 2, "blocks_y": 2, "block_size": 50.0, "road_width": 10.0,
             "height_min": 10.0, "height_max": 26.0, "fill_density": 1.0},
    "env": {"sun_direction": (-0.45, -0.25, -0.86), "ambient": 0.35, "fog_density": 0.0015},
    "aerial": {"base_altitude": 60.0, "altitude_margin": 25.0, "spacing_base": 45.0, "overlap_factor": 0.2},
    "ground": {"spacing": 8.0, "camera_height": 1.7, "turn_radius": 4.0, "clearance": 1.0},
    # Road centerlines sit at i*(block+road) + road/2 = {5, 65, 125}.
    "routes": [
        {"start": (65.0, 8.0), "end": (65.0, 112.0)},
        {"start": (8.0, 65.0), "end": (112.0, 65.0)},
    ],
    "aerial_res": 256, "aerial_fov": 72.0, "ground_res": 256, "ground_fov": 68.0,
    "fuse": {"stride": 3, "max_points": 60000, "dedup_cell": 0.35, "seed": 3},
    "bundle_n": 3, "point_radius": 2,
    "train": {"denoiser": {"base_channels": 16, "channel_mult": [1, 2], "heads": 4,
                            "time_dim": 128, "cam_feature_dim": 20},
              "train": {"lr_init": 2e-3, "lr_final": 5e-4, "cycle_len": 900,
                         "cond_dropout": 0.10, "batch_size": 2, "seed": 5},
              "steps": 900},
    "sample": {"steps": 30, "eta": 0.0, "cfg_scale": 1.5, "noise_gamma": 1.1, "seed": 9},
    "recon": {"iters": 450, "res": 128, "skybox_count": 3000, "seed": 11},
}


def _run(argv: list[str]) -> None:
    rc = main(argv)
    if rc != 0:
        raise SkystreetError(f"demo stage failed: {' '.join(argv)}")


def cmd_demo(args) -> None:
    wd = Path(args.workdir)
    wd.mkdir(parents=True, exist_ok=True)
    d = DEMO

    write_json(wd / "city.json", {"version": 1, **d["city"]})
    write_json(wd / "env.json", {"version": 1, **{k: list(v) if isinstance(v, tuple) else v for k, v in d["env"].items()}})
    write_json(wd / "aerial_plan.json", {"version": 1, **d["aerial"]})
    write_json(wd / "ground_plan.json", {"version": 1, **d["ground"],
                                          "routes": [{"start": list(r["start"]), "end": list(r["end"])} for r in d["routes"]]})
    write_json(wd / "train.json", {"version": 1, **d["train"]})

    _run(["generate-city", "--seed", str(d["seed"]), "--config", str(wd / "city.json"), "--out", str(wd / "scene.json")])
    _run(["plan", "--scene", str(wd / "scene.json"), "--aerial-cfg", str(wd / "aerial_plan.json"),
          "--ground-cfg", str(wd / "ground_plan.json"), "--out", str(wd / "trajectories")])
    data = wd / "dataset"
    _run(["capture", "--scene", str(wd / "scene.json"), "--trajectories", str(wd / "trajectories"),
          "--env", str(wd / "env.json"), "--out", str(data),
          "--aerial-res", str(d["aerial_res"]), "--aerial-fov", str(d["aerial_fov"]),
          "--ground-res", str(d["ground_res"]), "--ground-fov", str(d["ground_fov"])])
    f = d["fuse"]
    _run(["fuse", "--dataset", str(data), "--stride", str(f["stride"]), "--max-points", str(f["max_points"]),
          "--dedup-cell", str(f["dedup_cell"]), "--seed", str(f["seed"])])
    _run(["prep-bundles", "--dataset", str(data), "--n", str(d["bundle_n"]),
          "--point-radius", str(d["point_radius"])])
    _run(["train-diffusion", "--dataset", str(data), "--bundles", str(data / "bundles"),
          "--config", str(wd / "train.json"), "--out", str(wd / "diffusion.ckpt")])
    s = d["sample"]
    _run(["generate-ground", "--dataset", str(data), "--ckpt", str(wd / "diffusion.ckpt"),
          "--bundles", str(data / "bundles"), "--out", str(data / "priors"),
          "--steps", str(s["steps"]), "--eta", str(s["eta"]), "--cfg-scale", str(s["cfg_scale"]),
          "--noise-gamma", str(s["noise_gamma"]), "--seed", str(s["seed"])])

    # Upper-bound priors: the captured ground-truth ground views themselves.
    dataset = ds.Dataset(data)
    gt_priors = wd / "priors_gt"
    for v in dataset.views("ground"):
        write_png(gt_priors / f"{v.view_id}.png", dataset.load_rgb(v.view_id))

    r = d["recon"]
    arms = {
        "aerial_only": [],
        "gt_priors": ["--priors", str(gt_priors)],
        "gen_priors": ["--priors", str(data / "priors")],
    }
    for arm, extra in arms.items():
        _run(["reconstruct", "--dataset", str(data), "--out", str(data / "recon" / arm),
              "--iters", str(r["iters"]), "--res", str(r["res"]),
              "--skybox-count", str(r["skybox_count"]), "--seed", str(r["seed"]), *extra])

    # Shared evaluation targets: ground-truth views at reconstruction resolution.
    targets = wd / "eval_targets"
    for v in dataset.views():
        write_png(targets / f"{v.view_id}.png", _resized_view(dataset.load_rgb(v.view_id), r["res"]))
    reports = {}
    for arm in arms:
        report_path = data / "reports" / f"{arm}.json"
        _run(["evaluate", "--renders", str(data / "recon" / arm / "renders"),
              "--targets", str(targets), "--out", str(report_path)])
        reports[arm] = read_json(report_path)

    base = reports["aerial_only"]["splits"]
    summary = {
        "version": CONFIG_VERSION,
        "config": {k: str(v) for k, v in d.items()},
        "psnr": {arm: {s: reports[arm]["splits"][s]["psnr"] for s in ("aerial", "ground")} for arm in arms},
        "ground_gain_db": {
            arm: reports[arm]["splits"]["ground"]["psnr"] - base["ground"]["psnr"]
            for arm in ("gt_priors", "gen_priors")
        },
        "aerial_drop_db": {
            arm: base["aerial"]["psnr"] - reports[arm]["splits"]["aerial"]["psnr"]
            for arm in ("gt_priors", "gen_priors")
        },
    }
    write_json(data / "reports" / "demo_summary.json", summary)
    print("demo summary:")
    for arm in arms:
        p = summary["psnr"][arm]
        print(f"  {arm:<12} aerial {p['aerial']:.2f} dB   ground {p['ground']:.2f} dB")
    for arm in ("gt_priors", "gen_priors"):
        print(
            f"  {arm}: ground gain {summary['ground_gain_db'][arm]:+.2f} dB, "
            f"aerial drop {summary['aerial_drop_db'][arm]:+.2f} dB"
        )


# ---------------------------------------------------------------- arg parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="skystreet", description=__doc__)
    p.add_argument("--threads", type=int, default=None,
                   help="torch thread count; 1 selects the deterministic reference path")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("generate-city", help="procedurally generate a scene JSON")
    q.add_argument("--seed", type=int, required=True)
    q.add_argument("--config", default=None)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_generate_city)

    q = sub.add_parser("plan", help="plan aerial sweep and ground paths")
    q.add_argument("--scene", required=True)
    q.add_argument("--aerial-cfg", required=True)
    q.add_argument("--ground-cfg", required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_plan)

    q = sub.add_parser("capture", help="render the dataset (rgb/depth/segmentation)")
    q.add_argument("--scene", required=True)
    q.add_argument("--trajectories", required=True)
    q.add_argument("--env", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--aerial-res", type=int, default=256)
    q.add_argument("--aerial-fov", type=float, default=72.0)
    q.add_argument("--ground-res", type=int, default=256)
    q.add_argument("--ground-fov", type=float, default=68.0)
    q.set_defaults(func=cmd_capture)

    q = sub.add_parser("fuse", help="fuse aerial depth maps into a point cloud")
    q.add_argument("--dataset", required=True)
    q.add_argument("--out", default=None)
    q.add_argument("--stride", type=int, default=4)
    q.add_argument("--max-points", type=int, default=400000)
    q.add_argument("--dedup-cell", type=float, default=0.25)
    q.add_argument("--seed", type=int, default=0)
    q.set_defaults(func=cmd_fuse)

    q = sub.add_parser("prep-bundles", help="select references and build conditioning bundles")
    q.add_argument("--dataset", required=True)
    q.add_argument("--cloud", default=None)
    q.add_argument("--out", default=None)
    q.add_argument("--n", type=int, default=3)
    q.add_argument("--point-radius", type=int, default=2)
    q.set_defaults(func=cmd_prep_bundles)

    q = sub.add_parser("train-diffusion", help="train the ground-view denoiser")
    q.add_argument("--dataset", required=True)
    q.add_argument("--bundles", required=True)
    q.add_argument("--config", required=True)
    q.add_argument("--steps", type=int, default=None)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_train_diffusion)

    q = sub.add_parser("generate-ground", help="sample ground views from bundles")
    q.add_argument("--dataset", required=True)
    q.add_argument("--ckpt", required=True)
    q.add_argument("--bundles", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--steps", type=int, default=50)
    q.add_argument("--eta", type=float, default=0.0)
    q.add_argument("--cfg-scale", type=float, default=5.0)
    q.add_argument("--noise-gamma", type=float, default=1.1)
    q.add_argument("--seed", type=int, default=0)
    q.set_defaults(func=cmd_generate_ground)

    q = sub.add_parser("reconstruct", help="optimize the splat model")
    q.add_argument("--dataset", required=True)
    q.add_argument("--cloud", default=None)
    q.add_argument("--priors", default=None)
    q.add_argument("--out", required=True)
    q.add_argument("--iters", type=int, default=500)
    q.add_argument("--res", type=int, default=128)
    q.add_argument("--skybox-count", type=int, default=100000)
    q.add_argument("--max-gaussians", type=int, default=None)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--precision", choices=("float32", "float64"), default="float32",
                   help="float64 is verification-grade, float32 about twice as fast")
    q.set_defaults(func=cmd_reconstruct)

    q = sub.add_parser("evaluate", help="compare renders against targets")
    q.add_argument("--renders", required=True)
    q.add_argument("--targets", required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_evaluate)

    q = sub.add_parser("demo", help="full pipeline on a pinned-seed micro-city")
    q.add_argument("--workdir", required=True)
    q.set_defaults(func=cmd_demo)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return 2
        torch.set_num_threads(args.threads)
    try:
        args.func(args)
    except SkystreetError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
