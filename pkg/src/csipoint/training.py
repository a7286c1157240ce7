"""Two-stage training, the comparison variants, and the benchmark harness.

Stage 1 fits the PointNet autoencoder with Chamfer loss.  Stage 2 freezes it
and fits the CSI encoder so its output matches the autoencoder's latent for
the paired cloud.  The direct baseline maps CSI to points end to end; the
no-alignment ablation feeds the CSI encoder straight into the pretrained
decoder and trains on Chamfer loss alone.
"""

from __future__ import annotations

import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ContractError, NonFiniteError, TrainingDiverged
from .losses import chamfer_loss, latent_mse
from .metrics import MetricReport, batch_chamfer, evaluate_set
from .models import (CsiEncoder, CsiToCloud, ModelSpec, PointNetAutoencoder, ablation_model, csi_encode,
                     direct_regression_model, frame_features, pointnet_decode, pointnet_encode, predict_clouds)
from .numerics import checkpoint
from .numerics.layers import Module
from .numerics.optim import AdamW, clip_grad_norm
from .pointcloud import Normalizer
from .synthdata import Dataset, SceneParams, derive_seed, generate_scene


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 0.01
    seed: int = 0
    patience: int = 50
    clip_norm: float = 5.0
    log_interval: int = 0
    freeze_decoder: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractError("epochs and batch_size must be positive")
        if self.lr <= 0:
            raise ContractError("lr must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    stage: str = ""
    wall_time: float = 0.0
    best_epoch: int = -1
    stopped_early: bool = False
    initial_loss: float = float("nan")
    final_loss: float = float("nan")
    checkpoint: str | None = None

    @property
    def train_losses(self) -> list:
        return [r["train_loss"] for r in self.records]

    def to_jsonl(self) -> str:
        head = {"stage": self.stage, "config": self.config}
        lines = [json.dumps(head, sort_keys=True)]
        lines += [json.dumps(r, sort_keys=True) for r in self.records]
        lines.append(json.dumps({
            "summary": True, "best_epoch": self.best_epoch, "stopped_early": self.stopped_early,
            "initial_loss": self.initial_loss, "final_loss": self.final_loss,
            "wall_time": self.wall_time, "checkpoint": self.checkpoint,
        }, sort_keys=True))
        return "\n".join(lines) + "\n"


def _fit(model: Module, params, loss_fn, n_train: int, config: TrainConfig, val_fn, stage: str,
         on_epoch=None) -> TrainLog:
    """Mini-batch AdamW with gradient clipping and early stopping.

    ``loss_fn(indices)`` returns a scalar graph tensor; ``val_fn()`` returns
    the validation metric (lower is better).  The model ends in eval mode
    holding the best-validation weights.
    """
    if n_train < 1:
        raise ContractError(f"{stage}: no training samples")
    log = TrainLog(config=config.to_dict(), stage=stage)
    rng = np.random.default_rng(derive_seed(config.seed, 0x5EED))
    opt = AdamW(params, lr=config.lr, weight_decay=config.weight_decay)
    best, best_state, since_best = math.inf, model.state_dict(), 0
    start = time.perf_counter()
    for epoch in range(config.epochs):
        model.train()
        order = rng.permutation(n_train)
        batch_losses = []
        try:
            for lo in range(0, n_train, config.batch_size):
                idx = order[lo:lo + config.batch_size]
                opt.zero_grad()
                loss = loss_fn(idx)
                loss.backward()
                if config.clip_norm:
                    clip_grad_norm(opt.params, config.clip_norm)
                opt.step()
                batch_losses.append(loss.item() * len(idx))
            train_loss = math.fsum(batch_losses) / n_train
            model.eval()
            val = float(val_fn())
        except NonFiniteError as exc:
            last = log.records[-1]["epoch"] if log.records else None
            raise TrainingDiverged(f"{stage}: non-finite values at epoch {epoch} ({exc}); "
                                   f"last finite epoch: {last}", last) from exc
        if not (math.isfinite(train_loss) and math.isfinite(val)):
            last = log.records[-1]["epoch"] if log.records else None
            raise TrainingDiverged(f"{stage}: non-finite loss at epoch {epoch}; last finite epoch: {last}", last)
        log.records.append({"epoch": epoch, "train_loss": train_loss, "val_metric": val})
        if on_epoch is not None:
            on_epoch(epoch, train_loss, val)
        if config.log_interval and epoch % config.log_interval == 0:
            print(f"[{stage}] epoch {epoch:4d}  train {train_loss:.6f}  val {val:.6f}", flush=True)
        if val < best:
            best, best_state, since_best = val, model.state_dict(), 0
            log.best_epoch = epoch
        else:
            since_best += 1
            if config.patience and since_best >= config.patience:
                log.stopped_early = True
                break
    model.load_state_dict(best_state)
    model.eval()
    log.wall_time = time.perf_counter() - start
    return log


def _as_batch(clouds) -> np.ndarray:
    return np.stack([np.asarray(c, dtype=np.float64) for c in clouds])


def mean_chamfer(pred: np.ndarray, target: np.ndarray, chunk: int = 32) -> float:
    values = [batch_chamfer(pred[i:i + chunk], target[i:i + chunk])[0] for i in range(0, len(pred), chunk)]
    return float(np.concatenate(values).mean())


def reconstruct_autoencoder(model: PointNetAutoencoder, clouds) -> np.ndarray:
    x = _as_batch(clouds)
    return pointnet_decode(model, pointnet_encode(model, x))


def train_stage1(clouds, config: TrainConfig, spec: ModelSpec | None = None, val_clouds=None,
                 model: PointNetAutoencoder | None = None) -> tuple[PointNetAutoencoder, TrainLog]:
    """Fit the point autoencoder on normalized ``(N, 3)`` clouds with Chamfer loss."""
    x = _as_batch(clouds)
    spec = spec or ModelSpec(n_points=x.shape[1])
    if x.shape[1:] != (spec.n_points, 3):
        raise ContractError(f"clouds must be ({spec.n_points}, 3), got {x.shape[1:]}")
    model = model or PointNetAutoencoder(spec, seed=config.seed)
    xv = _as_batch(val_clouds) if val_clouds is not None and len(val_clouds) else None

    def loss_fn(idx):
        return chamfer_loss(model(x[idx]), x[idx])

    def val_fn():
        ref = xv if xv is not None else x
        return mean_chamfer(reconstruct_autoencoder(model, ref), ref)

    log = _fit(model, model.parameters(), loss_fn, len(x), config, val_fn, "stage1")
    log.initial_loss = log.records[0]["train_loss"]
    log.final_loss = mean_chamfer(reconstruct_autoencoder(model, x), x)
    return model, log


def _features(feats) -> np.ndarray:
    f = np.asarray(feats, dtype=np.float64)
    if f.ndim != 3:
        raise ContractError(f"features must be (B, M, 2K), got {f.shape}")
    return f


def train_stage2(features, clouds, autoencoder: PointNetAutoencoder, config: TrainConfig,
                 val_features=None, val_clouds=None, cache_targets: bool = True,
                 seed: int | None = None) -> tuple[CsiEncoder, TrainLog]:
    """Fit a CSI encoder to the frozen autoencoder's latents (latent MSE only)."""
    f = _features(features)
    x = _as_batch(clouds)
    spec = autoencoder.spec
    if f.shape[1:] != (spec.subcarriers, 2 * spec.links):
        raise ContractError(f"features {f.shape[1:]} do not match spec M={spec.subcarriers}, K={spec.links}")
    autoencoder.eval()
    autoencoder.requires_grad_(False)
    try:
        encoder = CsiEncoder(spec, seed=config.seed if seed is None else seed)
        encoder.fit_input_scaling(f)
        targets = pointnet_encode(autoencoder, x)
        if targets.shape[1] != spec.latent_dim:
            raise ContractError("latent dimension mismatch between autoencoder and CSI encoder")
        fv = _features(val_features) if val_features is not None and len(val_features) else None
        gv = pointnet_encode(autoencoder, _as_batch(val_clouds)) if fv is not None else None

        def loss_fn(idx):
            g = targets[idx] if cache_targets else pointnet_encode(autoencoder, x[idx])
            return latent_mse(g, encoder(f[idx]))

        def eval_loss(feats, g):
            return float(np.mean((csi_encode(encoder, feats) - g) ** 2))

        initial = eval_loss(f, targets)

        def val_fn():
            return eval_loss(fv, gv) if fv is not None else eval_loss(f, targets)

        log = _fit(encoder, encoder.parameters(), loss_fn, len(f), config, val_fn, "stage2")
        log.initial_loss = initial
        log.final_loss = eval_loss(f, targets)
    finally:
        autoencoder.requires_grad_(True)
    return encoder, log


def _train_csi_to_cloud(model: CsiToCloud, params, features, clouds, config, val_features, val_clouds, stage):
    f = _features(features)
    x = _as_batch(clouds)
    model.encoder.fit_input_scaling(f)
    fv = _features(val_features) if val_features is not None and len(val_features) else None
    xv = _as_batch(val_clouds) if fv is not None else None

    def loss_fn(idx):
        return chamfer_loss(model(f[idx]), x[idx])

    def val_fn():
        if fv is None:
            return mean_chamfer(predict_clouds(model, f), x)
        return mean_chamfer(predict_clouds(model, fv), xv)

    initial = mean_chamfer(predict_clouds(model, f), x)
    log = _fit(model, params, loss_fn, len(f), config, val_fn, stage)
    log.initial_loss = initial
    log.final_loss = mean_chamfer(predict_clouds(model, f), x)
    return model, log


def train_direct_baseline(features, clouds, config: TrainConfig, spec: ModelSpec,
                          val_features=None, val_clouds=None) -> tuple[CsiToCloud, TrainLog]:
    """CSI features straight to ``N x 3`` points, Chamfer loss, no autoencoder."""
    model = direct_regression_model(spec, seed=config.seed)
    return _train_csi_to_cloud(model, model.parameters(), features, clouds, config,
                               val_features, val_clouds, "direct")


def train_ablation_no_alignment(features, clouds, autoencoder: PointNetAutoencoder, config: TrainConfig,
                                val_features=None, val_clouds=None) -> tuple[CsiToCloud, TrainLog]:
    """CSI encoder wired into a copy of the pretrained decoder, Chamfer loss only.

    The decoder is fine-tuned unless ``config.freeze_decoder`` is set.  The
    autoencoder passed in is never modified.
    """
    model = ablation_model(autoencoder.spec, autoencoder, seed=config.seed)
    params = model.encoder.parameters()
    if config.freeze_decoder:
        model.decoder.requires_grad_(False)
    else:
        params = params + model.decoder.parameters()
    return _train_csi_to_cloud(model, params, features, clouds, config, val_features, val_clouds, "ablation")


# -- benchmark -------------------------------------------------------------

VARIANTS = ("direct", "ablation", "proposed")
VARIANT_LABELS = {
    "direct": "Direct CSI-to-PointCloud Regression",
    "ablation": "Autoencoder w/o Latent Alignment",
    "proposed": "Latent alignment (two-stage)",
}


@dataclass
class BenchmarkConfig:
    n_scenes: int = 275
    split: tuple = (200, 25, 50)
    seed: int = 0
    n_frames: int = 10
    spec: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    stage1_extra_scenes: int = 0
    with_emd: bool = True
    variants: tuple = VARIANTS

    @classmethod
    def profile(cls, name: str, seed: int = 0) -> "BenchmarkConfig":
        if name == "default":
            return cls(seed=seed)
        if name == "tiny":
            return cls(n_scenes=40, split=(0.7, 0.1, 0.2), seed=seed, spec=ModelSpec(n_points=128))
        raise ValueError(f"unknown profile {name!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["spec"] = self.spec.to_dict()
        d["split"] = list(self.split)
        d["variants"] = list(self.variants)
        return d


@dataclass
class BenchmarkResult:
    reports: dict
    logs: dict
    models: dict
    normalizer: Normalizer
    dataset_hash: str
    config: BenchmarkConfig
    checkpoint_hashes: dict = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return all(v in self.reports for v in VARIANTS)

    def rows(self) -> list:
        out = []
        for v in VARIANTS:
            if v in self.reports:
                r = self.reports[v]
                out.append({"variant": v, "method": VARIANT_LABELS[v], "mean_cd": r.mean_cd, "std_cd": r.std_cd,
                            "mean_emd": r.mean_emd, "std_emd": r.std_emd, "count": len(r.cd)})
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# dataset_manifest_sha256={self.dataset_hash}\n")
        if not self.complete:
            buf.write("# INCOMPLETE: missing " + ",".join(v for v in VARIANTS if v not in self.reports) + "\n")
        buf.write("variant,method,mean_cd,std_cd,mean_emd,std_emd,count\n")
        for r in self.rows():
            buf.write(",".join([r["variant"], r["method"], repr(r["mean_cd"]), repr(r["std_cd"]),
                                repr(r["mean_emd"]), repr(r["std_emd"]), str(r["count"])]) + "\n")
        return buf.getvalue()

    def to_text(self) -> str:
        head = f"{'Method':<40} {'Mean CD':>9} {'Std Dev':>9} {'Mean EMD':>9} {'Std Dev':>9}"
        lines = [head, "-" * len(head)]
        for r in self.rows():
            lines.append(f"{r['method']:<40} {r['mean_cd']:>9.4f} {r['std_cd']:>9.4f} "
                         f"{r['mean_emd']:>9.4f} {r['std_emd']:>9.4f}")
        lines.append(f"dataset manifest sha256: {self.dataset_hash}")
        if not self.complete:
            lines.append("INCOMPLETE: not every variant was trained")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        stage_info = {name: {"initial_loss": log.initial_loss, "final_loss": log.final_loss,
                             "best_epoch": log.best_epoch, "epochs_run": len(log.records)}
                      for name, log in sorted(self.logs.items())}
        return json.dumps({
            "dataset_manifest_sha256": self.dataset_hash,
            "complete": self.complete,
            "rows": self.rows(),
            "per_sample": {v: json.loads(self.reports[v].to_json()) for v in VARIANTS if v in self.reports},
            "training": stage_info,
            "checkpoint_sha256": self.checkpoint_hashes,
            "config": self.config.to_dict(),
        }, indent=2, sort_keys=True) + "\n"


def dataset_arrays(dataset: Dataset, split: str, normalizer: Normalizer, sanitize: bool = True):
    samples = dataset.split(split)
    feats = np.stack([frame_features(s.frames, sanitize) for s in samples])
    clouds = np.stack([normalizer.apply(s.cloud) for s in samples])
    return feats, clouds, [s.scene_id for s in samples]


def extra_stage1_clouds(dataset: Dataset, count: int, n_points: int) -> list:
    """Geometry-only scenes for autoencoder pretraining, disjoint from the paired set."""
    params = replace(dataset.params, n_points=n_points)
    return [generate_scene(params, derive_seed(dataset.seed, 0xC10D, i))[1] for i in range(count)]


def run_benchmark(dataset: Dataset, config: BenchmarkConfig, verbose: bool = False) -> BenchmarkResult:
    """Train every variant on the same splits and seeds and evaluate on the test split."""
    spec = config.spec
    train_cfg = replace(config.train, log_interval=config.train.log_interval if verbose else 0)
    train_clouds_raw = [s.cloud for s in dataset.split("train")]
    normalizer = Normalizer.fit(train_clouds_raw)
    f_tr, x_tr, _ = dataset_arrays(dataset, "train", normalizer, spec.sanitize_phase)
    f_va, x_va, _ = dataset_arrays(dataset, "val", normalizer, spec.sanitize_phase)
    f_te, x_te, test_ids = dataset_arrays(dataset, "test", normalizer, spec.sanitize_phase)
    if x_tr.shape[1] != spec.n_points:
        raise ContractError(f"dataset clouds have {x_tr.shape[1]} points, spec expects {spec.n_points}")

    reports, logs, models, hashes = {}, {}, {}, {}
    needs_ae = "proposed" in config.variants or "ablation" in config.variants
    if needs_ae:
        ae_clouds = x_tr
        if config.stage1_extra_scenes:
            extra = [normalizer.apply(c) for c in extra_stage1_clouds(dataset, config.stage1_extra_scenes, spec.n_points)]
            ae_clouds = np.concatenate([x_tr, np.stack(extra)])
        ae, logs["stage1"] = train_stage1(ae_clouds, train_cfg, spec, val_clouds=x_va)
        models["autoencoder"] = ae
        hashes["autoencoder"] = checkpoint.state_hash(ae.state_dict())

    if "proposed" in config.variants:
        enc, logs["stage2"] = train_stage2(f_tr, x_tr, ae, train_cfg, f_va, x_va)
        models["csi_encoder"] = enc
        hashes["csi_encoder"] = checkpoint.state_hash(enc.state_dict())
        hashes["autoencoder_after_stage2"] = checkpoint.state_hash(ae.state_dict())
        pred = pointnet_decode(ae, csi_encode(enc, f_te))
        reports["proposed"] = evaluate_set(list(pred), list(x_te), test_ids, config.with_emd)

    if "ablation" in config.variants:
        abl, logs["ablation"] = train_ablation_no_alignment(f_tr, x_tr, ae, train_cfg, f_va, x_va)
        models["ablation"] = abl
        hashes["ablation"] = checkpoint.state_hash(abl.state_dict())
        reports["ablation"] = evaluate_set(list(predict_clouds(abl, f_te)), list(x_te), test_ids, config.with_emd)

    if "direct" in config.variants:
        direct, logs["direct"] = train_direct_baseline(f_tr, x_tr, train_cfg, spec, f_va, x_va)
        models["direct"] = direct
        hashes["direct"] = checkpoint.state_hash(direct.state_dict())
        reports["direct"] = evaluate_set(list(predict_clouds(direct, f_te)), list(x_te), test_ids, config.with_emd)

    return BenchmarkResult(reports, logs, models, normalizer, dataset.manifest_hash(), config, hashes)
