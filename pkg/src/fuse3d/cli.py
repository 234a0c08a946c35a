"""Command-line entry point: ``fuse3d <command> ...``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 check failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import dataset, formats
from .geometry import frustum_select, to_camera_frame
from .sampling import poisson_downsample, radius_context
from .visibility import VisibilityConfig, coverage_sweep, visible_mask

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _read_toml(path) -> dict:
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except tomllib.TOMLDecodeError as exc:
        raise formats.ParseError(str(exc), 0, "toml") from None


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


# -- commands ---------------------------------------------------------------

def cmd_gen(args) -> int:
    from .scenes import SceneSpec, gen_scenes

    doc = _read_toml(args.spec)
    try:
        spec = SceneSpec.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid scene spec: {exc}") from None
    samples = gen_scenes(spec)
    dataset.write_dataset(args.out, samples)
    print(f"wrote {len(samples)} views of {spec.num_scenes} scenes to {args.out}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    root = Path(args.data)
    rows = ["scene\tview\tfov_points\tvisible_points\tcoverage"]
    clouds = {}
    for scene_id, view_id in dataset.list_views(root):
        if scene_id not in clouds:
            cloud = formats.read_ply(dataset.scene_dir(root, scene_id) / "cloud.ply")
            keep = np.arange(len(cloud))
            if args.poisson_radius:
                keep = poisson_downsample(cloud, args.poisson_radius, args.seed)
            clouds[scene_id] = (cloud, keep)
        cloud, keep = clouds[scene_id]
        prefix = dataset.view_prefix(root, scene_id, view_id)
        rig = formats.read_camera(f"{prefix}.camera.json")
        cam = to_camera_frame(cloud.subset(keep), rig)
        fov = frustum_select(cam, rig)
        vis = visible_mask(cam.subset(fov), rig, VisibilityConfig(args.theta))
        visible = keep[fov[vis.visible]]
        out = Path(args.out) / f"scene_{scene_id:04d}" if args.out else prefix.parent
        out.mkdir(parents=True, exist_ok=True)
        stem = out / f"{view_id:03d}"
        formats.write_indices(f"{stem}.fov.u32", keep[fov])
        formats.write_indices(f"{stem}.visible.u32", visible)
        if args.context_radius:
            formats.write_indices(f"{stem}.context.u32",
                                  radius_context(cloud, visible, args.context_radius))
        rows.append(f"{scene_id}\t{view_id}\t{len(fov)}\t{len(visible)}\t{vis.coverage:.6f}")
    target = Path(args.out) if args.out else root
    target.mkdir(parents=True, exist_ok=True)
    (target / "coverage.tsv").write_text("\n".join(rows) + "\n")
    print(f"preprocessed {len(rows) - 1} views at theta={args.theta}")
    return EXIT_OK


def cmd_stats(args) -> int:
    thetas = sorted(_parse_floats(args.thetas))
    if not thetas:
        raise UsageError("--thetas needs at least one value")
    samples = dataset.read_dataset(args.data)
    counts = np.zeros(len(thetas))
    cover = np.zeros(len(thetas))
    for s in samples:
        cam = to_camera_frame(s.cloud, s.rig)
        fov = cam.subset(frustum_select(cam, s.rig))
        for k, (_, n, c) in enumerate(coverage_sweep(fov, s.rig, thetas, with_counts=True)):
            counts[k] += n
            cover[k] += c
    print("theta_deg\tvisible_points\tcoverage_fraction")
    for t, n, c in zip(thetas, counts / len(samples), cover / len(samples)):
        print(f"{t:g}\t{n:.2f}\t{c:.6f}")
    return EXIT_OK


_OVERRIDES = {
    "epochs": int, "seed": int, "lr0": float, "momentum": float, "weight_decay": float,
    "halve_every": int, "coordinate_system": str, "cloud_scope": str, "merge_stage": str,
    "merge_mode": str, "visibility_theta": float, "num_classes": int, "point_stats": str,
}


def cmd_train(args) -> int:
    from .trainer import TrainConfig, save_checkpoint, train

    doc = _read_toml(args.config) if args.config else {}
    for key in _OVERRIDES:
        value = getattr(args, key)
        if value is not None:
            doc[key] = value
    if args.no_3d:
        doc["use_3d"] = False
    if args.no_timing:
        doc["log_timing"] = False
    try:
        cfg = TrainConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid training config: {exc}") from None
    train_set = dataset.read_dataset(args.data)
    val_set = dataset.read_dataset(args.val) if args.val else []

    def progress(rec):
        if not args.quiet:
            print(f"epoch {rec.epoch} lr {rec.lr:g} loss {rec.train_loss:.4f} "
                  f"val_miou {rec.val_miou:.4f}", file=sys.stderr)

    model, log = train(cfg, train_set, val_set, progress)
    save_checkpoint(args.out, model, cfg)
    log.write(args.log or f"{args.out}.log.csv")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .scenes import CLASS_NAMES
    from .trainer import evaluate, load_checkpoint

    model, cfg = load_checkpoint(args.ckpt)
    metrics, _ = evaluate(model, cfg, dataset.read_dataset(args.data))
    print("class\tiou")
    for c, iou in enumerate(metrics.per_class_iou):
        name = CLASS_NAMES[c] if c < len(CLASS_NAMES) else str(c)
        print(f"{name}\t{'nan' if np.isnan(iou) else f'{iou:.6f}'}")
    print(f"miou\t{metrics.miou:.6f}")
    return EXIT_OK


def cmd_export_features(args) -> int:
    from . import model as M
    from .trainer import load_checkpoint
    from .visualize import export_feature_pca

    model, cfg = load_checkpoint(args.ckpt)
    sample = dataset.read_view(args.view)
    view = M.prepare_view(sample.rgb, sample.labels, sample.cloud, sample.rig,
                          cfg.visibility_theta, cfg.coordinate_system, cfg.cloud_scope)
    fmap, _ = M.feature_map(model, view, train=False, update_stats=False)
    try:
        image = export_feature_pca(fmap)
    except ValueError as exc:
        raise formats.ParseError(str(exc), 0, "feature map") from None
    formats.write_rgb(args.out, image)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import TOLERANCE, run_suite

    worst = 0.0
    ok = True
    for r in run_suite(seed=args.seed, max_entries=None if args.full else args.max_entries):
        tol = TOLERANCE[r.dtype]
        passed = r.max_rel_error < tol
        ok &= passed
        worst = max(worst, r.max_rel_error)
        print(f"{r.label}\t{r.dtype}\tmax_rel_error={r.max_rel_error:.3e}\t"
              f"tol={tol:g}\t{'ok' if passed else 'FAIL'}\t({r.checked} entries)")
    print(f"max relative error {worst:.3e}")
    return EXIT_OK if ok else EXIT_CHECK


# -- parser ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fuse3d", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--spec", required=True, help="scene spec TOML")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    pp = sub.add_parser("preprocess", help="write per-view frustum/visible index lists")
    pp.add_argument("--data", required=True)
    pp.add_argument("--theta", type=float, default=2.0)
    pp.add_argument("--poisson-radius", type=float, default=None)
    pp.add_argument("--context-radius", type=float, default=None)
    pp.add_argument("--seed", type=int, default=0)
    pp.add_argument("--out", default=None, help="output root (default: alongside the views)")
    pp.set_defaults(func=cmd_preprocess)

    st = sub.add_parser("stats", help="coverage sweep over visibility thresholds")
    st.add_argument("--data", required=True)
    st.add_argument("--thetas", default="0,1,2,3,4,5")
    st.set_defaults(func=cmd_stats)

    tr = sub.add_parser("train", help="train a model")
    tr.add_argument("--data", required=True)
    tr.add_argument("--val", default=None, help="validation dataset directory")
    tr.add_argument("--config", default=None, help="TrainConfig TOML")
    tr.add_argument("--out", required=True, help="checkpoint path")
    tr.add_argument("--log", default=None, help="TrainLog CSV (default <out>.log.csv)")
    for key, typ in _OVERRIDES.items():
        tr.add_argument("--" + key.replace("_", "-"), dest=key, type=typ, default=None)
    tr.add_argument("--no-3d", action="store_true", help="RGB-only baseline")
    tr.add_argument("--no-timing", action="store_true", help="log 0 seconds per epoch")
    tr.add_argument("--quiet", action="store_true")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="per-class IoU and mIoU of a checkpoint")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True)
    ev.set_defaults(func=cmd_eval)

    ex = sub.add_parser("export-features", help="PCA false-color image of a feature map")
    ex.add_argument("--ckpt", required=True)
    ex.add_argument("--view", required=True, help="view prefix, e.g. data/scene_0000/000")
    ex.add_argument("--out", required=True)
    ex.set_defaults(func=cmd_export_features)

    gc = sub.add_parser("gradcheck", help="end-to-end finite-difference check")
    gc.add_argument("--seed", type=int, default=3)
    gc.add_argument("--max-entries", type=int, default=256,
                    help="entries sampled per parameter tensor")
    gc.add_argument("--full", action="store_true", help="check every entry")
    gc.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (formats.ParseError, FileNotFoundError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
