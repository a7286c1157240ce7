"""``csipoint`` command line: synth, train, reconstruct, eval, benchmark.

Exit codes: 0 success, 2 bad input or usage, 3 training diverged.
"""

from __future__ import annotations

import argparse
import glob
import hashlib
import json
import os
import shutil
import sys
import tempfile
from dataclasses import replace

from . import config as cfgmod
from .csi import parse_csi_log
from .errors import ContractError, ParseError, TrainingDiverged
from .metrics import evaluate_set
from .models import (ModelSpec, check_compatible, load_model, reconstruct_from_csi,
                     frame_features, predict_clouds, save_model)
from .numerics.checkpoint import atomic_write_text
from .pointcloud import Normalizer, load_points, save_points
from .synthdata import RadioSpec, SceneParams, load_dataset, make_dataset, write_dataset
from . import training as tr

STAGES = {"pc-ae": "autoencoder", "csi": "csi_encoder", "baseline-direct": "direct", "ablation": "ablation"}


class CliError(Exception):
    """A user-facing failure; the message is printed and the exit code is 2."""


def _refuse_existing(path, force: bool) -> None:
    if os.path.isdir(path) and os.listdir(path) and not force:
        raise CliError(f"output directory {path} exists and is not empty (pass --force to overwrite)")


def write_dir_atomic(directory, files: dict, force: bool = False) -> None:
    """Write ``{relative path: text}`` into a staged directory, then move it into place."""
    directory = os.path.abspath(directory)
    _refuse_existing(directory, force)
    parent = os.path.dirname(directory)
    os.makedirs(parent, exist_ok=True)
    stage = tempfile.mkdtemp(dir=parent, prefix=".stage-")
    try:
        for rel, text in files.items():
            path = os.path.join(stage, rel)
            os.makedirs(os.path.dirname(path), exist_ok=True)
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        if os.path.exists(directory):
            shutil.rmtree(directory)
        os.replace(stage, directory)
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise


# -- config resolution ---------------------------------------------------

def _scene_params(c: dict) -> SceneParams:
    p = SceneParams()
    return replace(p, n_points=c.get("points", p.n_points), n_scatterers=c.get("scatterers", p.n_scatterers),
                   links=c.get("links", p.links), frame_jitter=c.get("frame_jitter", p.frame_jitter))


def _radio(c: dict) -> RadioSpec:
    r = RadioSpec()
    return RadioSpec(center_hz=c.get("center_hz", r.center_hz), spacing_hz=c.get("spacing_hz", r.spacing_hz),
                     subcarriers=c.get("subcarriers", r.subcarriers), noise_std=c.get("noise_std", r.noise_std))


def _train_config(conf: dict, args) -> tr.TrainConfig:
    c = cfgmod.merged(conf, "train", {
        "epochs": args.epochs, "batch_size": args.batch_size, "lr": args.lr, "seed": args.seed,
        "patience": args.patience, "log_interval": args.log_interval,
        "freeze_decoder": True if getattr(args, "freeze_decoder", False) else None,
    })
    try:
        return tr.TrainConfig(**c)
    except ContractError as exc:
        raise CliError(str(exc)) from exc


def _model_spec(conf: dict, n_points: int, subcarriers: int, links: int) -> ModelSpec:
    c = dict(conf.get("model", {}))
    return ModelSpec(n_points=n_points, subcarriers=subcarriers, links=links, **c)


# -- commands ------------------------------------------------------------

def cmd_synth(args, conf) -> int:
    c = cfgmod.merged(conf, "synth", {"scenes": args.scenes, "seed": args.seed, "points": args.points,
                                      "frames": args.frames})
    out = os.path.abspath(args.out)
    _refuse_existing(out, args.force)
    split = c.get("split", (0.7, 0.1, 0.2))
    ds = make_dataset(c.get("scenes", 275), _scene_params(c), _radio(c), seed=c.get("seed", 0),
                      n_frames=c.get("frames", 10), split=split)
    digest = write_dataset(ds, out, force=args.force)
    print(f"wrote {len(ds.samples)} scenes to {out}")
    print(f"manifest sha256 {digest}")
    return 0


def cmd_train(args, conf) -> int:
    kind = STAGES[args.stage]
    out = os.path.abspath(args.out)
    ae_dir = os.path.abspath(args.autoencoder or out)
    ae = ae_manifest = None
    if kind in ("csi_encoder", "ablation"):
        try:
            ae, ae_manifest = load_model(ae_dir, "autoencoder")
        except FileNotFoundError:
            raise CliError(f"stage {args.stage!r} needs a trained point autoencoder: none found in {ae_dir} "
                           f"(run 'train pc-ae' first or pass --autoencoder)") from None
    ds = load_dataset(args.data)
    data_hash = ds.manifest_hash()
    if ae_manifest is not None and ae_manifest.get("dataset_manifest_sha256") != data_hash:
        raise CliError("the autoencoder was trained on a different dataset (manifest hash mismatch)")
    config = _train_config(conf, args)
    if ae is not None:
        spec, normalizer = ae.spec, Normalizer.from_dict(ae_manifest["normalization"])
    else:
        normalizer = Normalizer.fit([s.cloud for s in ds.split("train")])
        spec = _model_spec(conf, ds.params.n_points, ds.radio.subcarriers, ds.params.links)
    f_tr, x_tr, _ = tr.dataset_arrays(ds, "train", normalizer, spec.sanitize_phase)
    f_va, x_va, _ = tr.dataset_arrays(ds, "val", normalizer, spec.sanitize_phase)
    if kind == "autoencoder":
        model, log = tr.train_stage1(x_tr, config, spec, val_clouds=x_va)
    elif kind == "csi_encoder":
        model, log = tr.train_stage2(f_tr, x_tr, ae, config, f_va, x_va)
    elif kind == "direct":
        model, log = tr.train_direct_baseline(f_tr, x_tr, config, spec, f_va, x_va)
    else:
        model, log = tr.train_ablation_no_alignment(f_tr, x_tr, ae, config, f_va, x_va)
    log.checkpoint = os.path.join(out, f"{kind}.ckpt")
    extra = {"dataset_manifest_sha256": data_hash, "train_config": config.to_dict(), "stage": args.stage}
    if ae_manifest is not None:
        extra["autoencoder_sha256"] = ae_manifest["checkpoint_sha256"]
    os.makedirs(out, exist_ok=True)
    log_text = log.to_jsonl()
    atomic_write_text(os.path.join(out, f"{kind}.log.jsonl"), log_text)
    save_model(model, kind, out, spec, normalizer, extra)
    print(f"{args.stage}: {len(log.records)} epochs, best epoch {log.best_epoch}, "
          f"final train loss {log.final_loss:.6g}; checkpoint {log.checkpoint}")
    return 0


def cmd_reconstruct(args, conf) -> int:
    ckpt = os.path.abspath(args.checkpoints)
    try:
        if args.model == "proposed":
            enc, enc_manifest = load_model(ckpt, "csi_encoder")
            ae, ae_manifest = load_model(ckpt, "autoencoder")
            check_compatible(enc_manifest, ae_manifest)
            manifest = enc_manifest
        else:
            model, manifest = load_model(ckpt, args.model)
    except FileNotFoundError as exc:
        raise CliError(str(exc)) from None
    except ContractError as exc:
        raise CliError(str(exc)) from None
    spec = ModelSpec.from_dict(manifest["spec"])
    frames = parse_csi_log(args.csi)
    if not frames:
        raise CliError(f"{args.csi}: no CSI frames")
    if frames[0].k != spec.links:
        raise CliError(f"K mismatch: CSI log has K={frames[0].k}, checkpoint expects K={spec.links}")
    if frames[0].m != spec.subcarriers:
        raise CliError(f"M mismatch: CSI log has M={frames[0].m}, checkpoint expects M={spec.subcarriers}")
    normalizer = Normalizer.from_dict(manifest["normalization"]) if manifest.get("normalization") else None
    if args.model == "proposed":
        cloud = reconstruct_from_csi(enc, ae, frames, normalizer)
    else:
        cloud = predict_clouds(model, frame_features(frames, spec.sanitize_phase))
        cloud = normalizer.invert(cloud) if normalizer is not None else cloud
    save_points(cloud, args.out)
    print(f"wrote {len(cloud)} points to {args.out}")
    return 0


def _cloud_files(directory) -> dict:
    """Sample id -> cloud path, for a flat dir of .xyz/.ply files or a dataset dir."""
    found = {}
    if os.path.exists(os.path.join(directory, "manifest.json")) and os.path.isdir(os.path.join(directory, "scenes")):
        for path in sorted(glob.glob(os.path.join(directory, "scenes", "*", "cloud.xyz"))):
            found[os.path.basename(os.path.dirname(path))] = path
        return found
    for path in sorted(glob.glob(os.path.join(directory, "*"))):
        stem, ext = os.path.splitext(os.path.basename(path))
        if ext.lower() in (".xyz", ".ply"):
            found[stem] = path
    return found


def cmd_eval(args, conf) -> int:
    recon, gt = _cloud_files(args.recon), _cloud_files(args.gt)
    if not recon:
        raise CliError(f"no reconstructions (*.xyz, *.ply) in {args.recon}")
    missing = sorted(set(recon) - set(gt))
    if missing:
        raise CliError("ground truth missing for ids: " + ", ".join(missing))
    ids = sorted(recon)
    report = evaluate_set([load_points(recon[i]) for i in ids], [load_points(gt[i]) for i in ids], ids,
                          with_emd=not args.no_emd)
    summary = report.summary()
    manifest = os.path.join(args.gt, "manifest.json")
    if os.path.exists(manifest):
        with open(manifest, "rb") as fh:
            summary["dataset_manifest_sha256"] = hashlib.sha256(fh.read()).hexdigest()
    write_dir_atomic(args.out, {"metrics.csv": report.to_csv(),
                                "summary.json": json.dumps(summary, indent=2, sort_keys=True) + "\n"}, args.force)
    print(f"{len(ids)} samples  mean CD {summary['mean_cd']:.6g}  mean EMD {summary['mean_emd']:.6g}")
    return 0


def cmd_benchmark(args, conf) -> int:
    b = cfgmod.merged(conf, "benchmark", {"seed": args.seed, "profile": "tiny" if args.tiny else None})
    profile = b.get("profile", "default")
    bench = tr.BenchmarkConfig.profile(profile, seed=b.get("seed", 0))
    model_overrides = conf.get("model", {})
    bench = replace(bench, spec=replace(bench.spec, **model_overrides),
                    train=replace(bench.train, **cfgmod.merged(conf, "train", {"epochs": args.epochs})),
                    stage1_extra_scenes=b.get("stage1_extra_scenes", bench.stage1_extra_scenes),
                    with_emd=b.get("with_emd", bench.with_emd))
    out = os.path.abspath(args.out)
    _refuse_existing(out, args.force)
    if args.data:
        ds = load_dataset(args.data)
    else:
        ds = make_dataset(bench.n_scenes, SceneParams(n_points=bench.spec.n_points), RadioSpec(),
                          seed=bench.seed, n_frames=bench.n_frames, split=bench.split)
    bench = replace(bench, spec=replace(bench.spec, n_points=ds.params.n_points, subcarriers=ds.radio.subcarriers,
                                        links=ds.params.links))
    result = tr.run_benchmark(ds, bench, verbose=args.verbose)
    files = {"report.csv": result.to_csv(), "report.txt": result.to_text(), "report.json": result.to_json(),
             "dataset_manifest.json": ds.manifest_text()}
    for name, log in result.logs.items():
        files[f"logs/{name}.jsonl"] = _log_without_time(log)
    write_dir_atomic(out, files, force=args.force)
    print(result.to_text(), end="")
    return 0


def _log_without_time(log) -> str:
    """TrainLog JSON lines with the wall time removed, so benchmark outputs are reproducible."""
    saved = log.wall_time
    log.wall_time = None
    try:
        return log.to_jsonl()
    finally:
        log.wall_time = saved


# -- argument parsing ----------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="csipoint", description="WiFi CSI to point cloud experiments")
    parser.add_argument("--config", help=f"INI config file (default: ${cfgmod.ENV_VAR})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic paired dataset")
    p.add_argument("--scenes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--points", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one stage or comparison model")
    p.add_argument("stage", choices=sorted(STAGES))
    p.add_argument("--data", required=True, help="dataset directory written by 'synth'")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--autoencoder", help="directory holding the stage-1 checkpoint (default: --out)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--log-interval", type=int)
    p.add_argument("--freeze-decoder", action="store_true", help="ablation: keep the pretrained decoder fixed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", help="point cloud from a CSI log")
    p.add_argument("--checkpoints", required=True)
    p.add_argument("--csi", required=True, help="CSI log (all frames are aggregated into one sample)")
    p.add_argument("--out", required=True, help="output .xyz or .ply")
    p.add_argument("--model", choices=("proposed", "direct", "ablation"), default="proposed")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("eval", help="CD/EMD of reconstructions against ground truth")
    p.add_argument("--recon", required=True)
    p.add_argument("--gt", required=True, help="dir of <id>.xyz files or a dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--no-emd", action="store_true")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("benchmark", help="train all variants and write the comparison table")
    p.add_argument("--out", required=True)
    p.add_argument("--tiny", action="store_true", help="40 scenes, N=128")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--data", help="use an existing dataset instead of generating one")
    p.add_argument("--force", action="store_true")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        conf = cfgmod.load_config(args.config)
        return args.func(args, conf)
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 3
    except (CliError, ContractError, ParseError, FileExistsError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
