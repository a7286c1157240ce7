"""The two-stage pipeline end to end on a small synthetic dataset.

Stage 1 learns a point-cloud autoencoder.  Stage 2 trains a CSI encoder to
hit the autoencoder's latent code, and the frozen decoder turns that code
into a cloud.  The direct baseline maps CSI to coordinates in one network.

Run: python3 demos/03_two_stage_pipeline.py      (about a minute)
"""

from dataclasses import replace

from csipoint.synthdata import SceneParams, make_dataset
from csipoint.training import BenchmarkConfig, run_benchmark


def main():
    config = BenchmarkConfig.profile("tiny", seed=0)
    config = replace(config, train=replace(config.train, epochs=100))
    dataset = make_dataset(config.n_scenes, SceneParams(n_points=config.spec.n_points), seed=config.seed,
                           n_frames=config.n_frames, split=config.split)
    print(f"{len(dataset.samples)} scenes, split {[len(dataset.splits[k]) for k in ('train', 'val', 'test')]}")
    result = run_benchmark(dataset, config)
    for name, log in result.logs.items():
        print(f"  {name:9s} epochs {len(log.records):3d}  loss {log.initial_loss:.4f} -> {log.final_loss:.4f}")
    print(f"  autoencoder untouched by stage 2: "
          f"{result.checkpoint_hashes['autoencoder'] == result.checkpoint_hashes['autoencoder_after_stage2']}")
    print()
    print(result.to_text(), end="")


if __name__ == "__main__":
    main()
