"""PointNet autoencoder, CSI encoder, and the two comparison variants.

Layouts: clouds enter as ``(B, N, 3)`` and are transposed to channel-first
``(B, 3, N)``; CSI features enter as ``(B, M, 2K)`` and become ``(B, 2K, M)``
so the convolutions run along the subcarrier axis.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import csi as csi_mod
from .errors import ContractError
from .numerics import checkpoint
from .numerics.functional import max_pool_global, relu
from .numerics.layers import ConvBlock, Linear, Module
from .numerics.tensor import Tensor, as_tensor, reshape, swap_last_axes
from .pointcloud import Normalizer


@dataclass
class ModelSpec:
    """Shapes shared by every network of one experiment."""

    n_points: int = 256
    subcarriers: int = 64
    links: int = 2
    latent_dim: int = 128
    encoder_widths: tuple = (64, 128)
    decoder_hidden: tuple = (256, 512)
    csi_head: str = "pool"
    sanitize_phase: bool = True

    def __post_init__(self):
        self.encoder_widths = tuple(int(w) for w in self.encoder_widths)
        self.decoder_hidden = tuple(int(w) for w in self.decoder_hidden)
        if min(self.n_points, self.subcarriers, self.links, self.latent_dim) < 1:
            raise ContractError("model sizes must be positive")
        if self.csi_head not in ("pool", "flatten"):
            raise ContractError(f"unknown csi_head {self.csi_head!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_widths"] = list(self.encoder_widths)
        d["decoder_hidden"] = list(self.decoder_hidden)
        return d

    @classmethod
    def from_dict(cls, d) -> "ModelSpec":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


def _channels_first(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim == 2:
        x = reshape(x, (1, *x.shape))
    return swap_last_axes(x)


class PointNetEncoder(Module):
    """Three pointwise conv blocks then a global max over points."""

    def __init__(self, in_channels: int, widths, latent_dim: int, rng):
        super().__init__()
        plan = [in_channels, *widths, latent_dim]
        self.blocks = [ConvBlock(a, b, rng) for a, b in zip(plan[:-1], plan[1:])]

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return max_pool_global(x)


class PointDecoder(Module):
    """Fully connected ``D -> hidden... -> 3N``, ReLU between, linear output."""

    def __init__(self, latent_dim: int, hidden, n_points: int, rng):
        super().__init__()
        plan = [latent_dim, *hidden, 3 * n_points]
        self.layers = [Linear(a, b, rng) for a, b in zip(plan[:-1], plan[1:])]
        self.n_points = n_points
        self.latent_dim = latent_dim

    def forward(self, g) -> Tensor:
        g = as_tensor(g)
        if g.shape[-1] != self.latent_dim:
            raise ContractError(f"decoder expects latent dim {self.latent_dim}, got {g.shape[-1]}")
        if g.ndim == 1:
            g = reshape(g, (1, g.shape[0]))
        h = g
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = relu(h)
        return reshape(h, (h.shape[0], self.n_points, 3))


class PointNetAutoencoder(Module):
    def __init__(self, spec: ModelSpec, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.spec = spec
        self.encoder = PointNetEncoder(3, spec.encoder_widths, spec.latent_dim, rng)
        self.decoder = PointDecoder(spec.latent_dim, spec.decoder_hidden, spec.n_points, rng)

    def encode(self, clouds) -> Tensor:
        """``(B, N, 3)`` or ``(N, 3)`` clouds to ``(B, D)`` latents."""
        x = as_tensor(clouds)
        if x.shape[-2:] != (self.spec.n_points, 3):
            raise ContractError(f"expected clouds of {self.spec.n_points} points, got shape {x.shape}")
        return self.encoder(_channels_first(x))

    def decode(self, g) -> Tensor:
        return self.decoder(g)

    def forward(self, clouds) -> Tensor:
        return self.decode(self.encode(clouds))


class CsiEncoder(Module):
    """Three pointwise conv blocks over subcarriers, reduced to a D-vector.

    ``head="pool"`` takes the global max over subcarriers; ``head="flatten"``
    flattens the ``D x M`` map and projects it with one linear layer.
    Inputs are standardized per feature column with statistics fitted on
    training data (stored as buffers, not trained).
    """

    def __init__(self, spec: ModelSpec, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.spec = spec
        channels = 2 * spec.links
        plan = [channels, *spec.encoder_widths, spec.latent_dim]
        self.blocks = [ConvBlock(a, b, rng) for a, b in zip(plan[:-1], plan[1:])]
        self.head = Linear(spec.latent_dim * spec.subcarriers, spec.latent_dim, rng) if spec.csi_head == "flatten" else None
        self.input_mean = np.zeros(channels)
        self.input_std = np.ones(channels)

    def fit_input_scaling(self, features) -> None:
        f = np.asarray(features, dtype=np.float64).reshape(-1, 2 * self.spec.links)
        self.input_mean = f.mean(axis=0)
        std = f.std(axis=0)
        self.input_std = np.where(std > 0, std, 1.0)

    def _buffer_names(self):
        return ("input_mean", "input_std")

    def _get_buffer(self, name):
        return getattr(self, name)

    def _set_buffer(self, name, value):
        setattr(self, name, value)

    def forward(self, features) -> Tensor:
        f = np.asarray(features.data if isinstance(features, Tensor) else features, dtype=np.float64)
        if f.ndim == 2:
            f = f[None]
        expected = (self.spec.subcarriers, 2 * self.spec.links)
        if f.shape[1:] != expected:
            raise ContractError(f"CSI features must be (B, M={expected[0]}, 2K={expected[1]}), got {f.shape}")
        x = Tensor(np.ascontiguousarray(((f - self.input_mean) / self.input_std).transpose(0, 2, 1)))
        for block in self.blocks:
            x = block(x)
        if self.head is None:
            return max_pool_global(x)
        return self.head(reshape(x, (x.shape[0], -1)))


class CsiToCloud(Module):
    """CSI encoder feeding a point decoder.

    Used both for the direct regression baseline (fresh decoder) and for the
    no-alignment ablation (decoder copied from a trained autoencoder).
    """

    def __init__(self, encoder: CsiEncoder, decoder: PointDecoder):
        super().__init__()
        self.encoder = encoder
        self.decoder = decoder

    def forward(self, features) -> Tensor:
        return self.decoder(self.encoder(features))


def direct_regression_model(spec: ModelSpec, seed: int = 0) -> CsiToCloud:
    rng = np.random.default_rng(seed + 1)
    return CsiToCloud(CsiEncoder(spec, seed), PointDecoder(spec.latent_dim, spec.decoder_hidden, spec.n_points, rng))


def ablation_model(spec: ModelSpec, autoencoder: PointNetAutoencoder, seed: int = 0) -> CsiToCloud:
    return CsiToCloud(CsiEncoder(spec, seed), copy.deepcopy(autoencoder.decoder))


# -- inference helpers (eval mode, no graph) ----------------------------

def _eval(model: Module, fn):
    was = model.training
    model.eval()
    try:
        return fn()
    finally:
        model.train(was)


def pointnet_encode(model: PointNetAutoencoder, clouds) -> np.ndarray:
    """Latent ``g`` for one cloud ``(N, 3)`` -> ``(D,)`` or a batch -> ``(B, D)``."""
    single = np.ndim(clouds) == 2
    out = _eval(model, lambda: model.encode(clouds).data)
    return out[0] if single else out


def pointnet_decode(model: PointNetAutoencoder, g) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if g.shape[-1] != model.spec.latent_dim:
        raise ContractError(f"latent dim {g.shape[-1]} != {model.spec.latent_dim}")
    out = _eval(model, lambda: model.decode(g).data)
    return out[0] if g.ndim == 1 else out


def csi_encode(model: CsiEncoder, features) -> np.ndarray:
    single = np.ndim(features) == 2
    out = _eval(model, lambda: model(features).data)
    return out[0] if single else out


def predict_clouds(model: CsiToCloud, features) -> np.ndarray:
    single = np.ndim(features) == 2
    out = _eval(model, lambda: model(features).data)
    return out[0] if single else out


direct_regression_forward = predict_clouds
ae_no_alignment_forward = predict_clouds


def frame_features(frames, sanitize: bool = True) -> np.ndarray:
    """Aggregate one sample's captures and return its ``(M, 2K)`` features."""
    if isinstance(frames, csi_mod.CsiFrame):
        frames = [frames]
    return csi_mod.to_features(csi_mod.aggregate_frames(frames), sanitize=sanitize)


def reconstruct_from_csi(csi_model: CsiEncoder, ae_model: PointNetAutoencoder, frames,
                         normalizer: Normalizer | None = None) -> np.ndarray:
    """CSI capture(s) of one scene to a point cloud in scene coordinates."""
    if csi_model.spec.latent_dim != ae_model.spec.latent_dim:
        raise ContractError("CSI encoder and autoencoder latent dimensions differ")
    feats = frame_features(frames, csi_model.spec.sanitize_phase)
    cloud = pointnet_decode(ae_model, csi_encode(csi_model, feats))
    return normalizer.invert(cloud) if normalizer is not None else cloud


# -- persistence ---------------------------------------------------------

KINDS = ("autoencoder", "csi_encoder", "direct", "ablation")


def save_model(model: Module, kind: str, directory, spec: ModelSpec, normalizer: Normalizer | None = None,
               extra: dict | None = None) -> dict:
    """Write ``<kind>.ckpt`` and ``<kind>.json`` (the manifest) into ``directory``."""
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    os.makedirs(directory, exist_ok=True)
    state = model.state_dict()
    checkpoint.save(state, os.path.join(directory, f"{kind}.ckpt"))
    manifest = {
        "kind": kind,
        "format_version": checkpoint.VERSION,
        "spec": spec.to_dict(),
        "normalization": normalizer.to_dict() if normalizer is not None else None,
        "checkpoint_sha256": checkpoint.state_hash(state),
        **(extra or {}),
    }
    checkpoint.atomic_write_text(os.path.join(directory, f"{kind}.json"),
                                 json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_manifest(directory, kind: str) -> dict:
    path = os.path.join(directory, f"{kind}.json")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no {kind} checkpoint in {directory}")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def load_model(directory, kind: str):
    """Rebuild a saved model; returns ``(model, manifest)``."""
    manifest = read_manifest(directory, kind)
    spec = ModelSpec.from_dict(manifest["spec"])
    if kind == "autoencoder":
        model = PointNetAutoencoder(spec)
    elif kind == "csi_encoder":
        model = CsiEncoder(spec)
    else:
        model = direct_regression_model(spec)
    model.load_state_dict(checkpoint.load(os.path.join(directory, f"{kind}.ckpt")))
    model.eval()
    return model, manifest


def check_compatible(a: dict, b: dict, fields=("latent_dim", "subcarriers", "links", "n_points")) -> None:
    """Raise naming the first spec field on which two manifests disagree."""
    for name in fields:
        if a["spec"][name] != b["spec"][name]:
            raise ContractError(f"incompatible checkpoints: {name} {a['spec'][name]} != {b['spec'][name]}")
