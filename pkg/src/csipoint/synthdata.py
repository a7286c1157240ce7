"""Synthetic paired scenes: room point clouds and the CSI they would produce.

A scene is an axis-aligned room (one corner at the origin) whose walls,
floor and a few box-shaped pieces of furniture are sampled as point
scatterers.  The transmitter and the receive antennas sit in opposite
corners.  The channel on each link is the line-of-sight path plus one
bounce off every scatterer::

    H[k, link] = sum_p (rho_p / d_p) * exp(-2j * pi * f_k * d_p / c)

with rho = 1 for the direct path, followed by circular complex Gaussian
noise.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import shutil
import tempfile
from dataclasses import asdict, dataclass, field

import numpy as np

from .csi import CsiFrame, format_csi_log, parse_csi_log
from .errors import ContractError
from .pointcloud import as_cloud, format_points, load_points, resample_to_n

SPEED_OF_LIGHT = 299_792_458.0
_MASK64 = (1 << 64) - 1

DATASET_FORMAT = "csipoint-dataset"
DATASET_VERSION = 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(master: int, *keys: int) -> int:
    """Child seed for ``keys`` under ``master``: chained splitmix64 mixing.

    ``derive_seed(s, i)`` is the seed of scene ``i``; further keys name
    sub-streams (cloud resampling, per-frame noise).
    """
    state = splitmix64(int(master) & _MASK64)
    for key in keys:
        state = splitmix64(state ^ (int(key) & _MASK64))
    return state


@dataclass
class SceneParams:
    room_min: tuple = (3.0, 3.0, 2.4)
    room_max: tuple = (8.0, 8.0, 3.2)
    n_scatterers: int = 512
    n_points: int = 256
    furniture: tuple = (1, 3)
    furniture_min: tuple = (0.4, 0.4, 0.4)
    furniture_max: tuple = (1.6, 1.6, 1.2)
    furniture_share: float = 0.3
    reflect_range: tuple = (0.3, 1.0)
    links: int = 2
    antenna_spacing: float = 0.062
    device_height: float = 1.0
    corner_offset: float = 0.2
    frame_jitter: float = 0.05

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d) -> "SceneParams":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass
class RadioSpec:
    center_hz: float = 2.412e9
    spacing_hz: float = 312.5e3
    subcarriers: int = 64
    noise_std: float = 0.23

    def __post_init__(self):
        if self.center_hz <= 0 or self.spacing_hz <= 0 or self.subcarriers < 1 or self.noise_std < 0:
            raise ContractError(f"invalid radio spec {self}")

    def frequencies(self) -> np.ndarray:
        k = np.arange(self.subcarriers, dtype=np.float64)
        return self.center_hz + (k - (self.subcarriers - 1) / 2.0) * self.spacing_hz

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SceneSpec:
    room: np.ndarray
    scatterers: np.ndarray
    reflect: np.ndarray
    tx: np.ndarray
    rx: np.ndarray
    seed: int = 0

    def __post_init__(self):
        self.room = np.asarray(self.room, dtype=np.float64)
        self.scatterers = as_cloud(self.scatterers)
        self.reflect = np.asarray(self.reflect, dtype=np.float64).reshape(-1)
        self.tx = np.asarray(self.tx, dtype=np.float64).reshape(3)
        self.rx = np.asarray(self.rx, dtype=np.float64).reshape(-1, 3)
        if len(self.reflect) != len(self.scatterers):
            raise ContractError("one reflection coefficient per scatterer")
        if not ((self.reflect > 0) & (self.reflect <= 1)).all():
            raise ContractError("reflection coefficients must lie in (0, 1]")
        for name, pts in (("scatterers", self.scatterers), ("tx", self.tx[None]), ("rx", self.rx)):
            if not self.contains(pts).all():
                raise ContractError(f"{name} outside the room")

    def contains(self, pts) -> np.ndarray:
        pts = np.asarray(pts)
        return ((pts >= 0) & (pts <= self.room)).all(axis=-1)


def _sample_box_surface(rng, lo, hi, count, faces):
    """``count`` points uniformly over the listed faces of box ``[lo, hi]``.

    Faces are named ``x0 x1 y0 y1 z0 z1`` (e.g. ``z0`` is the face at lo[2]).
    """
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    size = hi - lo
    areas = []
    for face in faces:
        axis = "xyz".index(face[0])
        others = [a for a in range(3) if a != axis]
        areas.append(size[others[0]] * size[others[1]])
    areas = np.array(areas)
    which = rng.choice(len(faces), size=count, p=areas / areas.sum())
    pts = lo + rng.random((count, 3)) * size
    for i, face in enumerate(faces):
        axis = "xyz".index(face[0])
        pts[which == i, axis] = lo[axis] if face[1] == "0" else hi[axis]
    return pts


def generate_scene(params: SceneParams, seed: int) -> tuple[SceneSpec, np.ndarray]:
    """Random room with furniture; returns the scene and its N-point cloud."""
    rng = np.random.default_rng(seed)
    room = rng.uniform(params.room_min, params.room_max)
    n_total = params.n_scatterers
    n_furn = int(round(params.furniture_share * n_total))
    n_struct = n_total - n_furn

    structure = _sample_box_surface(rng, np.zeros(3), room, n_struct, ["x0", "x1", "y0", "y1", "z0"])

    n_boxes = int(rng.integers(params.furniture[0], params.furniture[1] + 1))
    per_box = np.full(n_boxes, n_furn // n_boxes)
    per_box[: n_furn % n_boxes] += 1
    pieces = []
    for count in per_box:
        dims = rng.uniform(params.furniture_min, params.furniture_max)
        dims = np.minimum(dims, room * 0.5)
        origin = np.array([rng.uniform(0, room[0] - dims[0]), rng.uniform(0, room[1] - dims[1]), 0.0])
        pieces.append(_sample_box_surface(rng, origin, origin + dims, int(count), ["x0", "x1", "y0", "y1", "z1"]))
    scatterers = np.concatenate([structure, *pieces], axis=0)
    reflect = rng.uniform(params.reflect_range[0], params.reflect_range[1], size=len(scatterers))

    off, h = params.corner_offset, params.device_height
    tx = np.array([off, off, h])
    rx = np.array([[room[0] - off, room[1] - off - i * params.antenna_spacing, h] for i in range(params.links)])
    scene = SceneSpec(room, scatterers, reflect, tx, rx, seed)
    cloud = resample_to_n(scatterers, params.n_points, derive_seed(seed, 1))
    return scene, cloud


def _canonical_order(scene: SceneSpec) -> np.ndarray:
    s = scene.scatterers
    return np.lexsort((scene.reflect, s[:, 2], s[:, 1], s[:, 0]))


def channel_response(scene: SceneSpec, radio: RadioSpec, include_scatter: bool = True) -> np.ndarray:
    """Noise-free ``(M, K)`` channel.

    Scatterers are visited in a canonical (sorted) order and each entry is
    summed with ``math.fsum``, so the result is independent of how the
    scatterer list is ordered.
    """
    freqs = radio.frequencies()
    order = _canonical_order(scene)
    pts = scene.scatterers[order]
    rho = scene.reflect[order]
    h = np.empty((radio.subcarriers, len(scene.rx)), dtype=np.complex128)
    for link, rx in enumerate(scene.rx):
        d_los = float(np.linalg.norm(rx - scene.tx))
        lengths = [d_los]
        gains = [1.0 / d_los]
        if include_scatter:
            d = np.linalg.norm(pts - scene.tx, axis=1) + np.linalg.norm(pts - rx, axis=1)
            lengths.extend(d.tolist())
            gains.extend((rho / d).tolist())
        lengths = np.array(lengths)
        gains = np.array(gains)
        phase = -2.0 * np.pi * np.outer(freqs, lengths) / SPEED_OF_LIGHT
        re = gains * np.cos(phase)
        im = gains * np.sin(phase)
        for k in range(radio.subcarriers):
            h[k, link] = complex(math.fsum(re[k].tolist()), math.fsum(im[k].tolist()))
    return h


def simulate_csi(scene: SceneSpec, radio: RadioSpec, seed: int, timestamp: float = 0.0,
                 include_scatter: bool = True) -> CsiFrame:
    """One noisy capture of the scene's channel."""
    return noisy_frame(channel_response(scene, radio, include_scatter), radio, seed, timestamp)


def noisy_frame(h: np.ndarray, radio: RadioSpec, seed: int, timestamp: float = 0.0) -> CsiFrame:
    """Add circular complex Gaussian noise of total std ``radio.noise_std``."""
    if radio.noise_std > 0:
        rng = np.random.default_rng(seed)
        noise = rng.normal(size=h.shape) + 1j * rng.normal(size=h.shape)
        h = h + noise * (radio.noise_std / math.sqrt(2.0))
    return CsiFrame(h, radio.center_hz, radio.spacing_hz, timestamp)


# -- datasets ------------------------------------------------------------

@dataclass
class PairedSample:
    scene_id: str
    cloud: np.ndarray
    frames: list
    seed: int
    split: str = "train"
    scene: SceneSpec | None = None


@dataclass
class Dataset:
    samples: list
    params: SceneParams
    radio: RadioSpec
    seed: int
    n_frames: int
    splits: dict = field(default_factory=dict)

    def split(self, name: str) -> list:
        by_id = {s.scene_id: s for s in self.samples}
        return [by_id[i] for i in self.splits[name]]

    def scene_files(self, sample: PairedSample) -> dict:
        return {
            f"scenes/{sample.scene_id}/cloud.xyz": format_points(sample.cloud),
            f"scenes/{sample.scene_id}/csi.log": format_csi_log(sample.frames),
        }

    def content_hash(self) -> str:
        digest = hashlib.sha256()
        for sample in sorted(self.samples, key=lambda s: s.scene_id):
            for rel, text in sorted(self.scene_files(sample).items()):
                digest.update(rel.encode("utf-8") + b"\0")
                digest.update(text.encode("utf-8") + b"\0")
        return digest.hexdigest()

    def manifest(self) -> dict:
        return {
            "format": DATASET_FORMAT,
            "version": DATASET_VERSION,
            "seed": self.seed,
            "n_frames": self.n_frames,
            "params": self.params.to_dict(),
            "radio": self.radio.to_dict(),
            "splits": self.splits,
            "scenes": {s.scene_id: str(s.seed) for s in self.samples},
            "content_hash": self.content_hash(),
        }

    def manifest_text(self) -> str:
        return json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n"

    def manifest_hash(self) -> str:
        return hashlib.sha256(self.manifest_text().encode("utf-8")).hexdigest()


def split_counts(n_scenes: int, split) -> tuple[int, int, int]:
    """Scene counts for (train, val, test).

    ``split`` is either three fractions (val and test rounded, at least one
    each; train takes the rest) or three explicit counts summing to
    ``n_scenes``.
    """
    if n_scenes < 3:
        raise ContractError(f"need at least 3 scenes for a train/val/test split, got {n_scenes}")
    if all(float(x).is_integer() and x >= 1 for x in split) and sum(split) == n_scenes:
        return tuple(int(x) for x in split)
    _, f_val, f_test = split
    n_val = max(1, int(round(f_val * n_scenes)))
    n_test = max(1, int(round(f_test * n_scenes)))
    n_train = n_scenes - n_val - n_test
    if n_train < 1:
        raise ContractError(f"{n_scenes} scenes leave no training scenes under split {split}")
    return n_train, n_val, n_test


def jittered_scene(scene: SceneSpec, jitter: float, seed: int) -> SceneSpec:
    """The scene as seen by one capture: scatterers moved by N(0, jitter²) per axis.

    Separate captures of a real room see small environmental motion, which
    decorrelates the multipath fading between frames while the geometry
    stays put.  Positions are clipped to the room; ``jitter == 0`` returns
    the scene unchanged.
    """
    if jitter <= 0:
        return scene
    rng = np.random.default_rng(seed)
    moved = np.clip(scene.scatterers + rng.normal(scale=jitter, size=scene.scatterers.shape), 0.0, scene.room)
    return SceneSpec(scene.room, moved, scene.reflect, scene.tx, scene.rx, scene.seed)


def make_sample(index: int, master_seed: int, params: SceneParams, radio: RadioSpec, n_frames: int,
                packet_rate: float = 100.0) -> PairedSample:
    seed = derive_seed(master_seed, index)
    scene, cloud = generate_scene(params, seed)
    frames = []
    for f in range(n_frames):
        captured = jittered_scene(scene, params.frame_jitter, derive_seed(seed, 3, f))
        frames.append(noisy_frame(channel_response(captured, radio), radio, derive_seed(seed, 2, f),
                                  timestamp=f / packet_rate))
    return PairedSample(f"s{index:04d}", cloud, frames, seed, scene=scene)


def make_dataset(n_scenes: int, params: SceneParams | None = None, radio: RadioSpec | None = None,
                 seed: int = 0, n_frames: int = 10, split=(0.7, 0.1, 0.2)) -> Dataset:
    """Generate ``n_scenes`` paired samples and split them by scene."""
    params = params or SceneParams()
    radio = radio or RadioSpec()
    if params.links < 1:
        raise ContractError("need at least one link")
    if params.frame_jitter < 0:
        raise ContractError("frame_jitter must be >= 0")
    n_train, n_val, n_test = split_counts(n_scenes, split)
    samples = [make_sample(i, seed, params, radio, n_frames) for i in range(n_scenes)]
    names = ["train"] * n_train + ["val"] * n_val + ["test"] * n_test
    for sample, name in zip(samples, names):
        sample.split = name
    splits = {name: [s.scene_id for s in samples if s.split == name] for name in ("train", "val", "test")}
    return Dataset(samples, params, radio, seed, n_frames, splits)


def write_dataset(dataset: Dataset, directory, force: bool = False) -> str:
    """Write the scene files and ``manifest.json``; returns the manifest hash.

    Everything is staged in a temporary sibling directory and moved into
    place at the end, so a failure leaves no partial dataset.
    """
    directory = os.path.abspath(os.fspath(directory))
    if os.path.exists(directory) and os.listdir(directory):
        if not force:
            raise FileExistsError(f"{directory} exists and is not empty (use force)")
    parent = os.path.dirname(directory)
    os.makedirs(parent, exist_ok=True)
    stage = tempfile.mkdtemp(dir=parent, prefix=".stage-")
    try:
        for sample in dataset.samples:
            for rel, text in dataset.scene_files(sample).items():
                path = os.path.join(stage, rel)
                os.makedirs(os.path.dirname(path), exist_ok=True)
                with open(path, "w", encoding="utf-8", newline="\n") as fh:
                    fh.write(text)
        with open(os.path.join(stage, "manifest.json"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(dataset.manifest_text())
        if os.path.exists(directory):
            shutil.rmtree(directory)
        os.replace(stage, directory)
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    return dataset.manifest_hash()


def load_dataset(directory) -> Dataset:
    directory = os.fspath(directory)
    with open(os.path.join(directory, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != DATASET_FORMAT:
        raise ContractError(f"{directory} is not a {DATASET_FORMAT} directory")
    radio = RadioSpec(**manifest["radio"])
    params = SceneParams.from_dict(manifest["params"])
    split_of = {sid: name for name, ids in manifest["splits"].items() for sid in ids}
    samples = []
    for sid in sorted(manifest["scenes"]):
        base = os.path.join(directory, "scenes", sid)
        frames = parse_csi_log(os.path.join(base, "csi.log"), center_hz=radio.center_hz, spacing_hz=radio.spacing_hz)
        cloud = load_points(os.path.join(base, "cloud.xyz"))
        samples.append(PairedSample(sid, cloud, frames, int(manifest["scenes"][sid]), split_of.get(sid, "train")))
    ds = Dataset(samples, params, radio, manifest["seed"], manifest["n_frames"], manifest["splits"])
    if ds.content_hash() != manifest["content_hash"]:
        raise ContractError(f"{directory}: scene files do not match the manifest content hash")
    return ds
