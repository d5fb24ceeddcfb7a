"""Command-line entry point.

Subcommands cover the whole loop: synthesize or build a dataset, train,
evaluate, score slices, fit and apply the selection cut, serve the review
queue, and export the corrected retraining dataset.

Every value resolves as: built-in default < --config JSON file < explicit
flag.  Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .losses import TverskyParams
from .pipeline import (
    AnnotationRecord,
    CubeEntry,
    DatasetManifest,
    SynthConfig,
    aggregate_consensus,
    load_image_png,
    load_mask_png,
    resize_cube,
    save_image_png,
    save_mask_png,
    stack_slices,
    synthesize_dataset,
    ten_crop,
)
from .training import TrainConfig, evaluate, train
from .triage import (
    SelectionCut,
    apply_cut,
    export_review_queue,
    fit_selection_cut,
    load_stats,
    save_stats,
    score_dataset,
)

USAGE_ERROR = 1
RUNTIME_ERROR = 2


class CliError(ValueError):
    """Validation problem in arguments or inputs."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(message)


DEFAULTS: dict[str, dict] = {
    "synth": {"n_cubes": 20, "depth": 10, "size": 256, "droplets_min": 3,
              "droplets_max": 8, "radius_min": 10.0, "radius_max": 32.0,
              "intensity_min": 0.12, "intensity_max": 0.32, "noise_sigma": 0.015,
              "seed": 7},
    "build": {"resize_to": 512, "seed": 7},
    "train": {"epochs": 50, "batch_size": 2, "lr_g": 2e-4, "lr_d": 2e-4,
              "lambda_adv": 0.2, "alpha": 0.7, "beta": 0.3, "gamma": 0.7,
              "gen_widths": "16,32,64,128", "disc_widths": "32,64,128,256",
              "val_fraction": 0.1, "checkpoint_every": 0, "disc_fakes": "binarized",
              "seed": 7},
    "eval": {"threshold": 0.5, "seed": 7},
    "score": {"with_ground_truth": False, "seed": 7},
    "fit-cut": {"tl0": 0.3, "seed": 7},
    "select": {"seed": 7},
    "serve": {"host": "127.0.0.1", "port": 8715, "seed": 7},
    "export-retrain": {"seed": 7},
}


def _resolve(command: str, args: argparse.Namespace) -> dict:
    merged = dict(DEFAULTS[command])
    config_path = getattr(args, "config", None)
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise CliError(f"config file not found: {path}")
        try:
            merged.update(json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise CliError(f"config file {path} is not valid JSON: {exc}")
    for key, value in vars(args).items():
        if key in ("func", "config") or value is None:
            continue
        merged[key] = value
    return merged


def _widths(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    try:
        return tuple(int(part) for part in str(text).split(",") if part.strip())
    except ValueError:
        raise CliError(f"widths must be comma-separated integers, got {text!r}")


def _load_models(checkpoint_path, need_discriminator=False):
    ckpt = load_checkpoint(checkpoint_path)
    gen = ckpt.build_generator()
    disc = ckpt.build_discriminator() if need_discriminator else None
    return gen, disc


# --- subcommand implementations ------------------------------------------------


def cmd_synth(cfg: dict) -> int:
    out = Path(cfg["out"])
    config = SynthConfig(
        n_cubes=int(cfg["n_cubes"]), depth=int(cfg["depth"]), size=int(cfg["size"]),
        droplets_per_cube=(int(cfg["droplets_min"]), int(cfg["droplets_max"])),
        radius_range=(float(cfg["radius_min"]), float(cfg["radius_max"])),
        intensity_range=(float(cfg["intensity_min"]), float(cfg["intensity_max"])),
        noise_sigma=float(cfg["noise_sigma"]),
        seed=int(cfg["seed"]),
    )
    manifest = synthesize_dataset(config, out)
    print(f"wrote {len(manifest.cubes)} cubes to {out}")
    return 0


def cmd_build(cfg: dict) -> int:
    raw = json.loads(Path(cfg["raw"]).read_text())
    raw_root = Path(cfg["raw"]).parent
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    depth = None
    for cube_spec in raw["cubes"]:
        slices, masks = [], []
        for idx, slice_rel in enumerate(cube_spec["slices"]):
            image = load_image_png(raw_root / slice_rel)
            ann_paths = cube_spec["annotations"][str(idx)]
            annotations = [
                AnnotationRecord(cube_id=cube_spec["cube_id"], slice_index=idx,
                                 volunteer_id=f"v{k}", mask=load_mask_png(raw_root / p))
                for k, p in enumerate(ann_paths)
            ]
            slices.append(image)
            masks.append(aggregate_consensus(annotations))
        img_cube, mask_cube = stack_slices(slices, masks, cube_id=cube_spec["cube_id"])
        img_cube = resize_cube(img_cube, int(cfg["resize_to"]))
        mask_cube = resize_cube(mask_cube, int(cfg["resize_to"]))
        for crop_img, crop_mask in ten_crop(img_cube, mask_cube):
            cid = crop_img.cube_id.replace("/", "_")
            cube_dir = out / cid
            cube_dir.mkdir(parents=True, exist_ok=True)
            s_rels, m_rels = [], []
            for d in range(crop_img.depth):
                s_rel = f"{cid}/slice_{d:03d}.png"
                m_rel = f"{cid}/mask_{d:03d}.png"
                save_image_png(out / s_rel, crop_img.voxels[d, :, :, 0])
                save_mask_png(out / m_rel, crop_mask.voxels[d, :, :, 0])
                s_rels.append(s_rel)
                m_rels.append(m_rel)
            entries.append(CubeEntry(cid, s_rels, m_rels))
            depth = crop_img.depth
    manifest = DatasetManifest(cubes=entries, slice_depth=depth,
                               notes=[f"built from {cfg['raw']}"])
    manifest.save(out)
    print(f"built {len(entries)} cubes into {out}")
    return 0


def cmd_train(cfg: dict) -> int:
    out = Path(cfg["out"])
    if (out / "final.ckpt").exists() and not cfg.get("force"):
        raise CliError(f"{out} already holds a trained model; pass --force to overwrite")
    manifest = DatasetManifest.load(cfg["data"])
    config = TrainConfig(
        seed=int(cfg["seed"]),
        epochs=int(cfg["epochs"]),
        batch_size=int(cfg["batch_size"]),
        lr_generator=float(cfg["lr_g"]),
        lr_discriminator=float(cfg["lr_d"]),
        lambda_adv=float(cfg["lambda_adv"]),
        tversky=TverskyParams(float(cfg["alpha"]), float(cfg["beta"]), float(cfg["gamma"])),
        gen_widths=_widths(cfg["gen_widths"]),
        disc_widths=_widths(cfg["disc_widths"]),
        val_fraction=float(cfg["val_fraction"]),
        checkpoint_every=int(cfg["checkpoint_every"]),
        disc_on_binarized_fakes=cfg["disc_fakes"] == "binarized",
        manifest_path=str(cfg["data"]),
    )
    _, _, history = train(config, manifest, out_dir=out, resume_from=cfg.get("resume"))
    last = history.records[-1]
    print(f"trained {len(history.records)} epochs; final FTL {last.gen_ftl:.4f}, "
          f"BCE {last.disc_bce:.4f} -> {out / 'final.ckpt'}")
    return 0


def cmd_eval(cfg: dict) -> int:
    manifest = DatasetManifest.load(cfg["data"])
    gen, _ = _load_models(cfg["checkpoint"])
    metrics, table = evaluate(gen, manifest, threshold=float(cfg["threshold"]))
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(metrics._asdict(), indent=2))
    with open(out / "per_slice.jsonl", "w") as fh:
        for row in table:
            fh.write(json.dumps(row) + "\n")
    print(f"accuracy={metrics.accuracy:.4f} precision={metrics.precision} "
          f"recall={metrics.recall} over {len(table)} slices -> {out}")
    return 0


def cmd_score(cfg: dict) -> int:
    manifest = DatasetManifest.load(cfg["data"])
    gen, disc = _load_models(cfg["checkpoint"], need_discriminator=True)
    stats = score_dataset(gen, disc, manifest, with_ground_truth=bool(cfg["with_ground_truth"]))
    out = Path(cfg["out"])
    save_stats(stats, out)
    print(f"scored {len(stats)} slices -> {out}")
    return 0


def cmd_fit_cut(cfg: dict) -> int:
    stats = load_stats(cfg["stats"])
    cut = fit_selection_cut(stats, tl0=float(cfg["tl0"]))
    out = Path(cfg["out"])
    cut.save(out)
    print(f"fitted cut w_mean={cut.w_mean:.4f} w_var={cut.w_var:.4f} "
          f"bias={cut.bias:.4f} -> {out}")
    return 0


def cmd_select(cfg: dict) -> int:
    stats = load_stats(cfg["stats"])
    cut = SelectionCut.load(cfg["cut"])
    selection = apply_cut(stats, cut)
    manifest = DatasetManifest.load(cfg["data"])
    gen, disc = _load_models(cfg["checkpoint"], need_discriminator=True)
    out = Path(cfg["out"])
    queue_path = export_review_queue(selection, manifest, gen, disc, out)
    print(f"selected {selection.summary['n_selected']} of {selection.summary['n_total']} "
          f"(reduction {selection.summary['reduction_fraction']:.3f}) -> {queue_path}")
    return 0


def cmd_serve(cfg: dict) -> int:
    from .service import serve

    server, _ = serve(cfg["queue"], cfg["data"], cfg["state"],
                      host=str(cfg["host"]), port=int(cfg["port"]))
    host, port = server.server_address[:2]
    print(f"serving review queue on http://{host}:{port}/api/ (Ctrl-C to stop)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


def cmd_export_retrain(cfg: dict) -> int:
    from .service import CorrectionRecord, export_retrain_manifest

    state_dir = Path(cfg["state"])
    log_path = state_dir / "corrections.jsonl"
    if not log_path.exists():
        raise CliError(f"no correction log at {log_path}")
    log = [CorrectionRecord(**json.loads(line))
           for line in log_path.read_text().splitlines() if line.strip()]
    manifest = DatasetManifest.load(cfg["data"])
    payload = export_retrain_manifest(manifest, log, state_dir, cfg["out"])
    replaced = payload["notes"][-1]
    print(f"exported retrain dataset to {cfg['out']} ({replaced})")
    return 0


# --- parser -------------------------------------------------------------------


def _add_common(sub: argparse.ArgumentParser, out_required: bool = True) -> None:
    sub.add_argument("--seed", type=int, help="random seed (default: 7)")
    sub.add_argument("--config", help="JSON config file; flags win over file values")
    sub.add_argument("--out", required=out_required, help="output path")
    sub.add_argument("--force", action="store_true", default=None,
                     help="allow overwriting prior results (default: off)")


def build_parser() -> _Parser:
    parser = _Parser(prog="tcupgan", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a seeded droplet dataset")
    p.add_argument("--n-cubes", dest="n_cubes", type=int, help="cubes to generate (default: 20)")
    p.add_argument("--depth", type=int, help="slices per cube (default: 10)")
    p.add_argument("--size", type=int, help="slice edge length (default: 256)")
    p.add_argument("--droplets-min", dest="droplets_min", type=int, help="min droplets per cube (default: 3)")
    p.add_argument("--droplets-max", dest="droplets_max", type=int, help="max droplets per cube (default: 8)")
    p.add_argument("--radius-min", dest="radius_min", type=float, help="min droplet radius px (default: 10)")
    p.add_argument("--radius-max", dest="radius_max", type=float, help="max droplet radius px (default: 32)")
    p.add_argument("--intensity-min", dest="intensity_min", type=float,
                   help="darkest droplet value (default: 0.12)")
    p.add_argument("--intensity-max", dest="intensity_max", type=float,
                   help="faintest droplet value; background is ~0.62 (default: 0.32)")
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float,
                   help="pixel noise level (default: 0.015)")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build", help="consensus + stack + resize + crop from raw slices/annotations")
    p.add_argument("--raw", required=True, help="raw manifest JSON listing slices and annotation PNGs")
    p.add_argument("--resize-to", dest="resize_to", type=int, help="pre-crop resize (default: 512)")
    _add_common(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("train", help="adversarial training")
    p.add_argument("--data", required=True, help="dataset manifest directory")
    p.add_argument("--epochs", type=int, help="training epochs (default: 50)")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="cubes per batch (default: 2)")
    p.add_argument("--lr-g", dest="lr_g", type=float, help="generator learning rate (default: 2e-4)")
    p.add_argument("--lr-d", dest="lr_d", type=float, help="discriminator learning rate (default: 2e-4)")
    p.add_argument("--lambda-adv", dest="lambda_adv", type=float, help="adversarial weight (default: 0.2)")
    p.add_argument("--alpha", type=float, help="Tversky false-negative weight (default: 0.7)")
    p.add_argument("--beta", type=float, help="Tversky false-positive weight (default: 0.3)")
    p.add_argument("--gamma", type=float, help="focal exponent (default: 0.7)")
    p.add_argument("--gen-widths", dest="gen_widths", help="encoder widths (default: 16,32,64,128)")
    p.add_argument("--disc-widths", dest="disc_widths", help="discriminator widths (default: 32,64,128,256)")
    p.add_argument("--val-fraction", dest="val_fraction", type=float, help="held-out cube fraction (default: 0.1)")
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int,
                   help="checkpoint cadence in epochs, 0 = final only (default: 0)")
    p.add_argument("--disc-fakes", dest="disc_fakes", choices=("binarized", "soft"),
                   help="mask form the discriminator trains against (default: binarized)")
    p.add_argument("--resume", help="checkpoint to resume from")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics + per-slice loss table")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--threshold", type=float, help="binarization threshold (default: 0.5)")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score", help="per-slice discriminator statistics")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--with-ground-truth", dest="with_ground_truth", action="store_true",
                   default=None, help="attach per-slice Tversky loss (default: off)")
    _add_common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("fit-cut", help="fit the review selection cut")
    p.add_argument("--stats", required=True, help="stats JSONL from `score --with-ground-truth`")
    p.add_argument("--tl0", type=float, help="calibration loss threshold (default: 0.3)")
    _add_common(p)
    p.set_defaults(func=cmd_fit_cut)

    p = sub.add_parser("select", help="apply the cut and export the review queue")
    p.add_argument("--stats", required=True)
    p.add_argument("--cut", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("serve", help="serve the review queue over HTTP")
    p.add_argument("--queue", required=True, help="queue.jsonl from `select`")
    p.add_argument("--data", required=True)
    p.add_argument("--state", required=True, help="directory for the correction log")
    p.add_argument("--host", help="bind address (default: 127.0.0.1)")
    p.add_argument("--port", type=int, help="bind port (default: 8715)")
    _add_common(p, out_required=False)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("export-retrain", help="dataset with corrected masks substituted")
    p.add_argument("--data", required=True)
    p.add_argument("--state", required=True, help="service state directory holding corrections.jsonl")
    _add_common(p)
    p.set_defaults(func=cmd_export_retrain)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _resolve(args.command, args)
        print(f"resolved config [{args.command}]: {json.dumps(cfg, default=str, sort_keys=True)}",
              file=sys.stderr)
        return args.func(cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except KeyboardInterrupt:
        return RUNTIME_ERROR
    except Exception as exc:  # noqa: BLE001 - runtime failures map to exit 2
        print(f"runtime failure: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
