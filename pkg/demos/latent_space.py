"""Project metacontroller hidden states to 2-D and see whether skills separate.

Trains a blockworld model, runs it over the test demonstrations, projects
the hidden states with PCA and writes ``latent.csv`` (x, y, true label).
With matplotlib installed it also saves a scatter plot.

    python3 demos/latent_space.py [--quick] [--out DIR]
"""

import argparse
import os

from picolab.experiments import config_from_dict, latent_projection, load_splits, run_reconstruct, write_projection

ap = argparse.ArgumentParser()
ap.add_argument("--quick", action="store_true")
ap.add_argument("--out", default="latent-demo")
args = ap.parse_args()

over = {"kind": "latent", "domain": "blockworld", "seeds": [0]}
if args.quick:
    over.update(data={"n": 20}, pretrain={"epochs": 30}, train={"epochs": 10})
cfg = config_from_dict(over)

splits = load_splits(cfg, 0)
_, net, _ = run_reconstruct(cfg, 0, splits=splits)
proj, score = latent_projection(net, splits.z("test"))
os.makedirs(args.out, exist_ok=True)
write_projection(proj, os.path.join(args.out, "latent.csv"))
print(f"{len(proj.coords)} hidden states, explained variance {proj.explained_variance_ratio.round(3)}, "
      f"silhouette by true skill {score:.3f}")

try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    print("matplotlib not installed; skipping the plot")
else:
    fig, ax = plt.subplots(figsize=(5, 4))
    for k, name in enumerate(splits.test.label_names):
        pts = proj.coords[proj.labels == k]
        ax.scatter(pts[:, 0], pts[:, 1], s=3, label=name)
    ax.set_xlabel("PC 1")
    ax.set_ylabel("PC 2")
    ax.legend(markerscale=4)
    fig.tight_layout()
    fig.savefig(os.path.join(args.out, "latent.png"), dpi=120)
    print("wrote", os.path.join(args.out, "latent.png"))
