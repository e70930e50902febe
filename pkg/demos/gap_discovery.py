"""Recover a missing skill with a randomly initialised gap primitive.

For each skill, drop its pretrained primitive, add one trainable gap slot,
and run the three stages: joint training, gap consolidation on the
timesteps the gap claims, and a gate refit with everything frozen. The gap
primitive is then scored on the held-out segments of the dropped skill.

    python3 demos/gap_discovery.py             # 5 seeds x 3 skills, several minutes
    python3 demos/gap_discovery.py --quick
"""

import argparse

from picolab.experiments import config_from_dict, run_gap_ablation

ap = argparse.ArgumentParser()
ap.add_argument("--quick", action="store_true")
args = ap.parse_args()

over = {"kind": "gap_ablation", "domain": "blockworld"}
if args.quick:
    over.update(seeds=[0], data={"n": 20}, pretrain={"epochs": 30}, train={"epochs": 10},
                gap={"drop": [1], "consolidate": {"epochs": 20}, "refit": {"epochs": 3}})
cfg = config_from_dict(over)

print(f"{'seed':>4} {'condition':<16}{'accuracy':>10}{'gap MSE':>12}{'pretrained':>12}{'ratio':>8}")
for seed in cfg.seeds:
    for r in run_gap_ablation(cfg, seed):
        if r["condition"] == "all_pretrained":
            print(f"{seed:>4} {r['condition']:<16}{r['label_accuracy']:>10.3f}")
        else:
            print(f"{seed:>4} {r['condition']:<16}{r['label_accuracy']:>10.3f}"
                  f"{r['gap_mse']:>12.2e}{r['pretrained_mse']:>12.2e}{r['gap_ratio']:>8.2f}")
