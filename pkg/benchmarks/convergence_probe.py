"""Dev probe: does a desk-scale training run reach useful FMR?"""

import sys
import time

import numpy as np

from msreg.metrics import fmr, hit_ratio
from msreg.model import ModelConfig, build_model
from msreg.pairgen import UdgeParams, generate_pair
from msreg.registration import register_pair
from msreg.synth import synth_scene
from msreg.train import TrainConfig, train


def make_pairs(n_scenes, per_scene, params, seed, extent=4.0, density=450):
    pairs = []
    for s in range(n_scenes):
        profile = "uniform" if s % 2 == 0 else "lidar"
        scene = synth_scene(np.random.default_rng([seed, s]), extent=extent,
                            profile=profile, density=density)
        for k in range(per_scene):
            pairs.append(generate_pair(scene, params, np.random.default_rng([seed, s, k]),
                                       f"scene{s}"))
    return pairs


def eval_fmr(model, pairs, tau1=0.1, tau2=0.05, n_keypoints=2000, max_iters=500):
    from msreg.registration import RansacConfig
    hits = []
    for p in pairs:
        out = register_pair(model, p.X, p.Y, n_keypoints=n_keypoints,
                            ransac_config=RansacConfig(max_iters=max_iters), seed=1)
        hits.append(hit_ratio(out.matches, p.X.points, p.Y.points, p.T_gt, tau1))
    return fmr(hits, tau2), hits


def main():
    epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 10
    n_scenes = int(sys.argv[2]) if len(sys.argv) > 2 else 10
    per_scene = int(sys.argv[3]) if len(sys.argv) > 3 else 8
    params = UdgeParams(crop_size=2.0, alpha_range=(0.5, 0.8), period_range=(0.1, 0.3),
                        jitter_sigma=0.005, scale_range=(0.95, 1.1), rotate=True,
                        min_overlap=0.3, overlap_radius=0.1)
    t0 = time.time()
    train_pairs = make_pairs(n_scenes, per_scene, params, seed=10)
    held_out = make_pairs(4, 5, params, seed=77)
    print(f"pairs: {len(train_pairs)} train, {len(held_out)} eval "
          f"({time.time()-t0:.1f}s)", flush=True)
    cfg = ModelConfig(num_heads=2, base_voxel_size=0.08, descriptor_dim=16,
                      widths=(8, 12, 16), num_down_levels=2)
    model = build_model(cfg, seed=0)
    f0, h0 = eval_fmr(model, held_out)
    print(f"random-init FMR {f0:.2f} hits {[round(h,3) for h in h0]}", flush=True)
    tc = TrainConfig(lr=0.1, momentum=0.8, batch_size=4, epochs=epochs, pos_radius=0.1,
                     num_pos_per_pair=192, num_neg_candidates=128, seed=0)
    t0 = time.time()
    _, trace = train(model, train_pairs, tc, log=lambda m: print(m, flush=True))
    print(f"train time {time.time()-t0:.1f}s", flush=True)
    f1, h1 = eval_fmr(model, held_out)
    print(f"trained FMR {f1:.2f} hits {[round(h,3) for h in h1]}", flush=True)


if __name__ == "__main__":
    main()
