"""Dialpad: PICO against a segment-then-act CTC baseline and random labels.

Every demonstration presses four of ten keys whose layout is reshuffled, so
the label at a timestep is only identifiable from the key positions in the
state. All three methods are scored on the same test timesteps.

    python3 demos/dialpad_vs_ctc.py           # 3 seeds, several minutes
    python3 demos/dialpad_vs_ctc.py --quick    # smoke test only; too small for PICO to win
"""

import argparse

from picolab.experiments import aggregate, config_from_dict, run_compare_baselines, summary_table

ap = argparse.ArgumentParser()
ap.add_argument("--quick", action="store_true")
args = ap.parse_args()

over = {"kind": "compare_baselines", "domain": "dialpad"}
if args.quick:
    over.update(seeds=[0], data={"n_train": 60, "n_test": 20, "use_train": 40, "use_test": 20},
                pretrain={"epochs": 5}, train={"epochs": 3}, baseline={"epochs": 3},
                baseline_clone={"epochs": 3})
cfg = config_from_dict(over)

rows = []
for seed in cfg.seeds:
    rows += run_compare_baselines(cfg, seed)
print(summary_table(aggregate(rows)), end="")
