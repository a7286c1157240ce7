"""From room geometry to CSI features.

A synthetic room is a box with furniture; every surface point scatters the
signal once.  The channel at each subcarrier is the sum of the direct path
and all one-bounce paths, each attenuated by 1/length.

Run: python3 demos/02_csi_simulator.py
"""

import numpy as np

from csipoint.csi import amplitude, phase, sanitize_phase
from csipoint.models import frame_features
from csipoint.synthdata import (SPEED_OF_LIGHT, RadioSpec, SceneParams, SceneSpec, channel_response, generate_scene,
                                make_sample)


def main():
    radio = RadioSpec(noise_std=0.0)
    print("single direct path, distance d:")
    for d in (1.0, 2.0, 4.0):
        scene = SceneSpec([10, 10, 3], [[5, 5, 1]], [0.5], [1, 1, 1], [[1 + d, 1, 1]])
        h = channel_response(scene, radio, include_scatter=False)[:, 0]
        step = np.angle(h[1] * np.conj(h[0]))
        print(f"  d={d}: |H| = {abs(h[0]):.6f} (1/d = {1 / d:.6f}); phase step {step:.6f} rad "
              f"(-2*pi*df*d/c = {-2 * np.pi * radio.spacing_hz * d / SPEED_OF_LIGHT:.6f})")

    params = SceneParams()
    scene, cloud = generate_scene(params, 42)
    print(f"\nrandom room {np.round(scene.room, 2)} m, {len(scene.scatterers)} scatterers, cloud {cloud.shape}")
    h = channel_response(scene, RadioSpec(noise_std=0.0))
    amp = amplitude(h)
    print(f"amplitude over 64 subcarriers: mean {amp.mean():.3f}, std/mean {amp.std() / amp.mean():.3f} "
          "(a 20 MHz band spans little of the multipath fading)")
    raw = phase(h)
    print(f"raw phase spans {np.ptp(np.unwrap(raw, axis=0)):.2f} rad; sanitized phase mean "
          f"{abs(sanitize_phase(raw).mean()):.1e}")

    sample = make_sample(0, 42, params, RadioSpec(), n_frames=10)
    powers = [float((np.abs(f.h) ** 2).mean()) for f in sample.frames]
    print(f"\n10 captures of one scene; per-frame power {min(powers):.2f} .. {max(powers):.2f}")
    print("small scatterer motion between captures re-draws the fading, so averaging frames")
    print("estimates the mean received power, which tracks the room size")
    print("model input (amplitude | sanitized phase):", frame_features(sample.frames).shape)


if __name__ == "__main__":
    main()
