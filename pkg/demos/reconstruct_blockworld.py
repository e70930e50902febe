"""Label-free segmentation of reach/grasp/lift demonstrations.

Pretrain one primitive per skill, freeze the library, then train only the
recurrent gate to reconstruct demonstrated actions. Labels are read off the
gate afterwards and compared with the scripted expert's phases.

    python3 demos/reconstruct_blockworld.py            # 5 seeds, about a minute
    python3 demos/reconstruct_blockworld.py --quick    # one seed, small data
"""

import argparse

import numpy as np

from picolab.experiments import config_from_dict, load_splits, run_reconstruct
from picolab.metrics import confusion_matrix

ap = argparse.ArgumentParser()
ap.add_argument("--quick", action="store_true")
args = ap.parse_args()

over = {"kind": "reconstruct", "domain": "blockworld"}
if args.quick:
    over.update(seeds=[0], data={"n": 20}, pretrain={"epochs": 30}, train={"epochs": 10})
cfg = config_from_dict(over)

for seed in cfg.seeds:
    splits = load_splits(cfg, seed)
    rows, net, preds = run_reconstruct(cfg, seed, splits=splits)
    r = rows[0]
    print(f"seed {seed}: label accuracy {r['label_accuracy']:.3f}, "
          f"action MSE {r['action_mse']:.2e} (workspace) / {r['action_mse_z']:.3f} (standardised)")

test = splits.test
C = confusion_matrix([p.labels for p in preds], [d.labels for d in test], 3)
print("\nconfusion on the last seed (rows = expert phase, columns = gate argmax):")
print("          " + "".join(f"{n:>8}" for n in test.label_names))
for name, row in zip(test.label_names, C):
    print(f"{name:>10}" + "".join(f"{c:>8}" for c in row))

d, p = test.trajectories[0], preds[0]
print("\nfirst test demonstration, phase boundaries:")
print("  expert:", np.flatnonzero(np.diff(d.labels)) + 1)
print("  gate:  ", np.flatnonzero(np.diff(p.labels)) + 1)
