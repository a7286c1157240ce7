"""How much room geometry survives in the synthetic CSI?

Two numbers frame the benchmark results:

* an oracle that knows the room dimensions (and copies the training cloud of
  the most similar room) reaches a low Chamfer distance, so knowing the box
  is most of the job;
* the received power, the main geometric cue at 20 MHz, correlates with
  room size only after averaging several captures whose fading differs.

Run: python3 demos/04_how_much_geometry_is_in_csi.py   (about a minute)
"""

import numpy as np

from csipoint.metrics import chamfer_distance
from csipoint.pointcloud import Normalizer
from csipoint.synthdata import RadioSpec, SceneParams, make_dataset


def main():
    ds = make_dataset(150, SceneParams(n_points=128), seed=0, n_frames=10, split=(100, 10, 40))
    train, test = ds.split("train"), ds.split("test")
    norm = Normalizer.fit([s.cloud for s in train])
    rooms = np.array([s.scene.room for s in train])
    oracle = []
    for s in test:
        j = int(np.argmin(((rooms - s.scene.room) ** 2).sum(axis=1)))
        oracle.append(chamfer_distance(norm.apply(train[j].cloud), norm.apply(s.cloud)))
    print(f"nearest-room oracle: mean CD {np.mean(oracle):.4f} on {len(test)} held-out scenes")

    diag = np.array([np.hypot(*s.scene.room[:2]) for s in ds.samples])
    one = np.log([(np.abs(s.frames[0].h) ** 2).mean() for s in ds.samples])
    ten = np.log([np.mean([(np.abs(f.h) ** 2).mean() for f in s.frames]) for s in ds.samples])
    print(f"corr(room diagonal, log power): one capture {np.corrcoef(diag, one)[0, 1]:+.2f}, "
          f"mean of 10 captures {np.corrcoef(diag, ten)[0, 1]:+.2f}")
    still = make_dataset(150, SceneParams(n_points=128, frame_jitter=0.0), RadioSpec(), seed=0, n_frames=10,
                         split=(100, 10, 40))
    frozen = np.log([np.mean([(np.abs(f.h) ** 2).mean() for f in s.frames]) for s in still.samples])
    print(f"without motion between captures the frames share one fading draw: {np.corrcoef(diag, frozen)[0, 1]:+.2f}")


if __name__ == "__main__":
    main()
