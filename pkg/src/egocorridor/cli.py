"""Command-line entry point.

Exit codes: 0 success, 2 configuration or spec error, 3 I/O failure,
4 shape mismatch, 5 unreadable checkpoint.
"""
from __future__ import annotations

import argparse
import collections
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .blobio import write_container
from .camera import CameraModel, default_camera
from .corridor_eval import KpiConfig, benchmark, extract_corridor, frame_availability, iou, write_overlay
from .corridor_net import NetworkSpec, check_spec, load_checkpoint, normalize_gray, save_checkpoint
from .errors import (
    CorruptCheckpoint,
    EgoCorridorError,
    IoFailure,
    ShapeMismatch,
    VersionMismatch,
)
from .hough_baseline import HoughConfig, LanePrior
from .netpbm import read_pgm, write_pgm
from .scene_forge import (
    Motion,
    SceneSpec,
    bench_catalog,
    build_dataset,
    challenge_catalog,
    desk_catalog,
    generate_sequence,
    load_dataset,
    read_manifest,
    read_sequence,
    write_sequence,
)
from .trainer import TrainConfig, train

log = logging.getLogger("egocorridor")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_SHAPE, EXIT_CHECKPOINT = 0, 2, 3, 4, 5


class ConfigError(EgoCorridorError, ValueError):
    pass


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from None


def _config_arg(value: str, presets: dict) -> dict:
    """A JSON file path or the name of a built-in preset."""
    if value in presets:
        return dict(presets[value])
    return _load_json(value)


def _write_run(out_dir: Path, subcommand: str, args: argparse.Namespace, resolved: dict, results: dict | None = None) -> None:
    record = {
        "subcommand": subcommand,
        "version": __version__,
        "argv": {k: v for k, v in vars(args).items() if k != "func"},
        "resolved": resolved,
        "results": results or {},
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "run.json", "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True, default=str)


def _camera_from(d: dict | None) -> CameraModel:
    if not d:
        return default_camera()
    return CameraModel.from_dict(d)


# ---------------------------------------------------------------- gen-data


def _resolve_catalog(cat: dict, seed: int | None, sequences: bool) -> dict:
    """Expand presets into an explicit scene list."""
    out = dict(cat)
    preset = cat.get("preset")
    default_seed = 7 if preset in ("bench", "challenge") else 0
    s = cat.get("seed", default_seed) if seed is None else seed
    if preset == "desk":
        scenes = desk_catalog(int(cat.get("n_specs", 30)), s)
        out["scenes"] = [dict(sp.to_dict(), motion=m.to_dict(), name=f"s{i:03d}") for i, (sp, m) in enumerate(scenes)]
        out.setdefault("frames_per_spec", 10)
    elif preset in ("bench", "challenge"):
        style = cat.get("marking_style", "solid")
        if preset == "challenge":
            entries = challenge_catalog(s, style)
        else:
            cats = tuple(cat.get("categories", ("none", "faded_lines", "heavy_rain")))
            entries = bench_catalog(cats, cat.get("per_category", 2), s, style)
        out["scenes"] = [dict(sp.to_dict(), motion=m.to_dict(), name=n) for n, sp, m in entries]
        sequences = True
    elif preset is not None:
        raise ConfigError(f"unknown catalog preset {preset!r}")
    if "scenes" not in out:
        raise ConfigError("catalog needs a 'preset' or a 'scenes' list")
    if seed is not None and preset is None:
        out["scenes"] = [dict(sc, seed=sc.get("seed", 0) + seed) for sc in out["scenes"]]
    out["seed"] = s
    out["sequences"] = bool(out.get("sequences", False) or sequences)
    return out


def cmd_gen_data(args) -> int:
    out_dir = Path(args.out_dir)
    cat = _resolve_catalog(_load_json(args.catalog), args.seed, args.sequences)
    if args.frames_per_spec is not None:
        cat["frames_per_spec"] = args.frames_per_spec
    cam = _camera_from(cat.get("camera"))
    cat["camera"] = cam.to_dict()
    entries = []
    for i, sc in enumerate(cat["scenes"]):
        entries.append((sc.get("name", f"s{i:03d}"), SceneSpec.from_dict({k: v for k, v in sc.items() if k != "name"}), Motion.from_dict(sc.get("motion"))))
    if not entries:
        raise ConfigError("catalog has no scenes")
    hist = collections.Counter()
    if cat["sequences"]:
        for name, spec, motion in entries:
            seq = generate_sequence(spec, motion, cam, name=name, jobs=args.jobs)
            write_sequence(seq, out_dir / name)
            hist[spec.category] += len(seq.images)
            print(f"{name}: {len(seq.images)} frames, {len(seq.speed)} speed samples")
        total = sum(hist.values())
    else:
        rows = build_dataset([(s, m) for _, s, m in entries], int(cat.get("frames_per_spec", 10)), out_dir, cam, jobs=args.jobs)
        hist.update(r["category"] for r in rows)
        total = len(rows)
    print(f"wrote {total} frames to {out_dir}")
    for k in sorted(hist):
        print(f"  {k:16s} {hist[k]}")
    _write_run(out_dir, "gen-data", args, {"catalog": cat}, {"frames": total, "categories": dict(hist)})
    return EXIT_OK


# ---------------------------------------------------------------- train

NET_PRESETS = {"desk": {"preset": "desk"}, "full": {"preset": "full"}}
TRAIN_PRESETS = {"default": {}}


def cmd_train(args) -> int:
    out_dir = Path(args.out_dir)
    net_d = _config_arg(args.net, NET_PRESETS)
    try:
        spec = NetworkSpec.from_dict(net_d)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed network config: {exc}") from None
    check_spec(spec)
    tcfg = _config_arg(args.train_config, TRAIN_PRESETS)
    if args.epochs is not None:
        tcfg["epochs"] = args.epochs
    if args.seed is not None:
        tcfg["seed"] = args.seed
    try:
        config = TrainConfig(**tcfg)
    except TypeError as exc:
        raise ConfigError(f"malformed training config: {exc}") from None
    dataset = load_dataset(args.manifest)
    out_dir.mkdir(parents=True, exist_ok=True)

    def progress(epoch, tr, va):
        print(f"epoch {epoch:3d}  train_rmse {tr:.5f}  val_rmse {va:.5f}", flush=True)

    t0 = time.perf_counter()
    result = train(dataset, spec, config, progress=progress)
    elapsed = time.perf_counter() - t0
    save_checkpoint(result.best, out_dir / "best.ecnw", dataset_digest=dataset.digest())
    save_checkpoint(result.final, out_dir / "final.ecnw", dataset_digest=dataset.digest())
    result.history.write_csv(out_dir / "loss.csv")
    with open(out_dir / "split.json", "w") as fh:
        json.dump({"train": result.train_ids, "val": result.val_ids}, fh, indent=1)
    print(f"best epoch {result.history.best_epoch}, val_rmse {min(result.history.val_rmse):.5f}, {elapsed:.1f} s")
    _write_run(
        out_dir,
        "train",
        args,
        {"net": spec.to_dict(), "train": config.to_dict(), "manifest": str(args.manifest), "dataset_digest": dataset.digest()},
        {"best_epoch": result.history.best_epoch, "seconds": elapsed},
    )
    return EXIT_OK


# ---------------------------------------------------------------- infer


def _frames_from(path) -> tuple[list[str], np.ndarray, list[dict]]:
    """Frames from a single PGM, a manifest file, a dataset directory or a directory of PGMs."""
    p = Path(path)
    if p.suffix.lower() == ".pgm":
        try:
            return [p.stem], read_pgm(p)[None], [{}]
        except ValueError as exc:
            raise IoFailure(str(exc)) from None
    if p.is_dir() and not (p / "manifest.jsonl").exists():
        files = sorted(p.glob("*.pgm"))
        if not files:
            raise ConfigError(f"{p} has neither a manifest.jsonl nor PGM frames")
        try:
            images = [read_pgm(f) for f in files]
        except ValueError as exc:
            raise IoFailure(str(exc)) from None
        if len({a.shape for a in images}) > 1:
            raise ShapeMismatch("input frames differ in size")
        return [f.stem for f in files], np.stack(images), [{} for _ in files]
    manifest = p / "manifest.jsonl" if p.is_dir() else p
    rows = read_manifest(manifest)
    try:
        images = [read_pgm(manifest.parent / r["image"]) for r in rows]
    except (OSError, ValueError) as exc:
        raise IoFailure(f"cannot read frames listed in {manifest}: {exc}") from None
    if not images:
        raise ConfigError(f"{manifest} lists no frames")
    if len({a.shape for a in images}) > 1:
        raise ShapeMismatch("input frames differ in size")
    return [r["id"] for r in rows], np.stack(images), rows


def _predict(net, images: np.ndarray, batch_size: int) -> np.ndarray:
    h, w = net.spec.input_shape
    if images.shape[1:] != (h, w):
        raise ShapeMismatch(f"frames are {images.shape[1:]}, network expects {(h, w)}")
    out = []
    for s in range(0, len(images), batch_size):
        x = normalize_gray(images[s : s + batch_size])[:, None].astype(np.float32)
        out.append(net.predict(x)[:, 0])
    return np.concatenate(out)


def cmd_infer(args) -> int:
    out_dir = Path(args.out_dir)
    net = load_checkpoint(args.checkpoint)
    ids, images, _ = _frames_from(args.input)
    t0 = time.perf_counter()
    probs = _predict(net, images, args.batch_size)
    elapsed = time.perf_counter() - t0
    fps = len(images) / elapsed if elapsed > 0 else float("inf")
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    for fid, img, p in zip(ids, images, probs):
        write_pgm(out_dir / "masks" / f"{fid}.pgm", np.clip(np.rint(p * 255.0), 0, 255).astype(np.uint8))
        if args.raw:
            (out_dir / "raw").mkdir(exist_ok=True)
            write_container(out_dir / "raw" / f"{fid}.ecnw", {"kind": "mask", "id": fid}, [p.astype(np.float32)])
        if args.overlay:
            (out_dir / "overlays").mkdir(exist_ok=True)
            write_overlay(out_dir / "overlays" / f"{fid}.ppm", img, p >= 0.5)
    print(f"inferred {len(images)} frames in {elapsed:.3f} s: {fps:.1f} frames/s")
    _write_run(out_dir, "infer", args, {"checkpoint": str(args.checkpoint), "input": str(args.input)},
               {"frames": len(images), "seconds": elapsed, "frames_per_second": fps})
    return EXIT_OK


# ---------------------------------------------------------------- eval


def _kpi_config(path) -> KpiConfig:
    if path is None:
        return KpiConfig()
    try:
        return KpiConfig(**_load_json(path))
    except TypeError as exc:
        raise ConfigError(f"malformed KPI config: {exc}") from None


def cmd_eval(args) -> int:
    out_dir = Path(args.out_dir)
    net = load_checkpoint(args.checkpoint)
    kpi = _kpi_config(args.kpi)
    ids, images, rows = _frames_from(args.manifest)
    manifest = Path(args.manifest)
    root = manifest if manifest.is_dir() else manifest.parent
    try:
        truth = np.stack([(read_pgm(root / r["mask"]) > 127) for r in rows])
    except (OSError, KeyError, ValueError) as exc:
        raise IoFailure(f"cannot read ground-truth masks: {exc}") from None
    probs = _predict(net, images, args.batch_size)
    h, w = images.shape[1:]
    cam = default_camera(w, h)
    per_frame = []
    by_cat = collections.defaultdict(list)
    for fid, p, t, r in zip(ids, probs, truth, rows):
        score = iou(p >= kpi.binarize_threshold, t)
        est = extract_corridor(p, cam, kpi, "dnn", fid)
        avail = frame_availability(est, float(r.get("speed_mps", 0.0)), kpi)
        per_frame.append({"id": fid, "iou": score, "available": avail, "width": est.width, "length": est.length})
        by_cat[r.get("category", "unknown")].append(score)
    summary = {
        "frames": len(ids),
        "mean_iou": float(np.mean([f["iou"] for f in per_frame])),
        "per_category_iou": {k: float(np.mean(v)) for k, v in sorted(by_cat.items())},
        "available": int(sum(f["available"] for f in per_frame)),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "eval.json", "w") as fh:
        json.dump({"summary": summary, "frames": per_frame}, fh, indent=2, sort_keys=True)
    print(f"mean IoU {summary['mean_iou']:.4f} over {len(ids)} frames")
    for k, v in summary["per_category_iou"].items():
        print(f"  {k:16s} {v:.4f}")
    _write_run(out_dir, "eval", args, {"checkpoint": str(args.checkpoint), "kpi": kpi.to_dict(), "camera": cam.to_dict()}, summary)
    return EXIT_OK


# ---------------------------------------------------------------- bench

HOUGH_PRESETS = {"default": {}}


def _hough_from(d: dict) -> tuple[HoughConfig, LanePrior]:
    d = dict(d)
    prior = d.pop("prior", {}) or {}
    try:
        return HoughConfig(**d), LanePrior(**prior)
    except TypeError as exc:
        raise ConfigError(f"malformed Hough config: {exc}") from None


def cmd_bench(args) -> int:
    out_dir = Path(args.out_dir)
    root = Path(args.sequences_dir)
    if not root.is_dir():
        raise ConfigError(f"{root} is not a directory")
    dirs = sorted(p for p in root.iterdir() if (p / "sequence.json").is_file())
    if not dirs:
        raise ConfigError(f"no sequences under {root}")
    hough, prior = _hough_from(_config_arg(args.hough, HOUGH_PRESETS))
    kpi = _kpi_config(args.kpi)
    net = load_checkpoint(args.checkpoint) if args.checkpoint not in (None, "none") else None
    seqs = [read_sequence(d) for d in dirs]
    if net is not None:
        for s in seqs:
            if s.images.shape[1:] != net.spec.input_shape:
                raise ShapeMismatch(f"sequence {s.name} frames {s.images.shape[1:]} vs network {net.spec.input_shape}")

    def progress(name, flags):
        print(f"{name}: " + ", ".join(f"{k} {sum(v)}/{len(v)}" for k, v in flags.items()), flush=True)

    report = benchmark(seqs, net, hough, None, kpi, progress, prior=prior)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.to_json())
    (out_dir / "report.txt").write_text(report.table())
    print(report.table(), end="")
    _write_run(out_dir, "bench", args,
               {"hough": hough.to_dict(), "prior": prior.to_dict(), "kpi": kpi.to_dict(),
                "sequences": [d.name for d in dirs], "checkpoint": str(args.checkpoint)},
               {"timing_s": report.meta.get("timing_s")})
    return EXIT_OK


# ---------------------------------------------------------------- overlay


def cmd_overlay(args) -> int:
    try:
        image = read_pgm(args.image)
        mask = read_pgm(args.mask)
    except ValueError as exc:
        raise IoFailure(str(exc)) from None
    if image.shape != mask.shape:
        raise ShapeMismatch(f"image {image.shape} vs mask {mask.shape}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_overlay(out, image, mask >= 128)
    _write_run(out.parent, "overlay", args, {"image": str(args.image), "mask": str(args.mask), "threshold": 128})
    print(f"wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------- wiring


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="egocorridor", description="Ego-lane corridor workbench")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="render a synthetic dataset or benchmark sequences")
    g.add_argument("catalog", help="catalog JSON (a preset such as {\"preset\": \"desk\"} or a scene list)")
    g.add_argument("out_dir")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--frames-per-spec", type=int, default=None)
    g.add_argument("--sequences", action="store_true", help="write full 450-frame sequences, one directory each")
    g.add_argument("--jobs", type=int, default=1)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train the network")
    t.add_argument("manifest")
    t.add_argument("net", help="network JSON, or 'desk' / 'full'")
    t.add_argument("train_config", help="training JSON, or 'default'")
    t.add_argument("out_dir")
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="predict corridor masks")
    i.add_argument("checkpoint")
    i.add_argument("input", help="a PGM frame, a manifest.jsonl, a dataset directory, or a directory of PGM frames")
    i.add_argument("out_dir")
    i.add_argument("--overlay", action="store_true")
    i.add_argument("--raw", action="store_true", help="also write float masks in the checkpoint container")
    i.add_argument("--batch-size", type=int, default=16)
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="IoU and availability on a labelled dataset")
    e.add_argument("checkpoint")
    e.add_argument("manifest")
    e.add_argument("out_dir")
    e.add_argument("--kpi", default=None, help="KPI config JSON")
    e.add_argument("--batch-size", type=int, default=16)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="availability KPIs: network versus Hough baseline")
    b.add_argument("sequences_dir")
    b.add_argument("checkpoint", help="checkpoint file, or 'none' for the classical path only")
    b.add_argument("hough", help="Hough config JSON, or 'default'")
    b.add_argument("out_dir")
    b.add_argument("--kpi", default=None)
    b.set_defaults(func=cmd_bench)

    o = sub.add_parser("overlay", help="tint a mask over a frame")
    o.add_argument("image")
    o.add_argument("mask")
    o.add_argument("out", help="output PPM path")
    o.set_defaults(func=cmd_overlay)
    return p


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (CorruptCheckpoint, VersionMismatch)):
        return EXIT_CHECKPOINT
    if isinstance(exc, ShapeMismatch):
        return EXIT_SHAPE
    if isinstance(exc, (IoFailure, OSError)):
        return EXIT_IO
    if isinstance(exc, (ValueError, KeyError)):
        return EXIT_CONFIG
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (EgoCorridorError, OSError, ValueError, KeyError) as exc:
        code = exit_code_for(exc)
        if code == 1:
            raise
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
