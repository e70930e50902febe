"""Command line entry point: ``picolab {generate,run,latent,inspect}``.

Exit codes: 0 success, 1 invalid config or data, 2 I/O failure, 3 numerical
failure (non-finite loss), with diagnostics on stderr.
"""

import argparse
import json
import os
import sys

import numpy as np

from .errors import DimensionError, NumericalError, PicoError, ValidationError
from .experiments import (config_from_dict, dataset_files, generate_data, latent_projection,
                          load_splits, run_experiment, write_projection)
from .formats import ensure_dir, read_checkpoint, read_dataset, write_dataset

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3


def _plain():
    return bool(os.environ.get("NO_COLOR")) or not sys.stdout.isatty()


def _bold(text):
    return text if _plain() else f"\033[1m{text}\033[0m"


def _seed_list(text):
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    return seeds


def _config(args):
    base = {}
    if args.config:
        with open(args.config, encoding="utf-8") as f:
            try:
                base = json.load(f)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{args.config}: malformed config ({exc})") from exc
    for key in ("kind", "domain"):
        value = getattr(args, key, None)
        if value is not None:
            base[key] = value
    if getattr(args, "seed_list", None):
        try:
            base["seeds"] = _seed_list(args.seed_list)
        except ValueError as exc:
            raise ValidationError(f"bad --seed-list {args.seed_list!r}") from exc
    if args.out:
        base["out"] = args.out
    return config_from_dict(base)


def dataset_summary(dataset):
    lengths = dataset.lengths()
    sketches = [tuple(d.sketch) for d in dataset if d.sketch is not None]
    labelled = [d.labels for d in dataset if d.labels is not None]
    counts = np.bincount(np.concatenate(labelled), minlength=dataset.n_labels) if labelled else []
    return {
        "domain": dataset.domain, "n": len(dataset), "state_dim": dataset.state_dim,
        "action_dim": dataset.action_dim, "K": dataset.n_labels,
        "T_min": min(lengths) if lengths else 0, "T_max": max(lengths) if lengths else 0,
        "T_mean": float(np.mean(lengths)) if lengths else 0.0,
        "n_timesteps": dataset.n_timesteps,
        "sketch_lengths": sorted({len(s) for s in sketches}),
        "distinct_sketches": len(set(sketches)),
        "label_counts": [int(c) for c in counts],
    }


def _print_summary(summary, fmt, title=None):
    if fmt == "json":
        print(json.dumps(summary, sort_keys=True))
        return
    if title:
        print(_bold(title))
    for k, v in summary.items():
        print(f"  {k:<18} {v}")


def cmd_generate(args):
    cfg = _config(args)
    out = ensure_dir(cfg.out)
    data = generate_data(cfg)
    for key, name in dataset_files(cfg).items():
        path = os.path.join(out, name)
        write_dataset(data[key], path)
        _print_summary(dataset_summary(data[key]), args.format, path)
    return EXIT_OK


def cmd_run(args):
    cfg = _config(args)
    result = run_experiment(cfg, threads=args.threads, fmt=args.format)
    if args.format == "json":
        print(json.dumps(result.aggregate, sort_keys=True))
    else:
        with open(os.path.join(result.out, "summary.txt")) as f:
            print(_bold(f"{cfg.kind} on {cfg.domain}, seeds {cfg.seeds}"))
            print(f.read(), end="")
        print(f"reports in {result.out}")
    return EXIT_OK


def cmd_latent(args):
    cfg = _config(args)
    net, norm, extra = read_checkpoint(args.checkpoint)
    seed = int(extra.get("seed", cfg.seeds[0]))
    splits = load_splits(cfg, seed)
    test = splits.test
    if test.state_dim != net.library.state_dim or test.action_dim != net.library.action_dim:
        raise DimensionError(f"checkpoint expects state/action dims "
                             f"{(net.library.state_dim, net.library.action_dim)}, dataset has "
                             f"{(test.state_dim, test.action_dim)}")
    if norm is not None:
        splits.normalizer = norm
    test_z = splits.z("test")
    proj, score = latent_projection(net, test_z)
    out = ensure_dir(cfg.out)
    path = os.path.join(out, "latent.csv")
    write_projection(proj, path)
    info = {"rows": len(proj.coords), "method": "pca",
            "explained_variance_ratio": [float(x) for x in proj.explained_variance_ratio],
            "silhouette": score, "file": path}
    _print_summary(info, args.format, "latent projection")
    return EXIT_OK


def cmd_inspect(args):
    _print_summary(dataset_summary(read_dataset(args.dataset)), args.format, args.dataset)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="picolab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON experiment config; missing keys take defaults")
        sp.add_argument("--out", help="output directory (overrides config)")
        sp.add_argument("--format", choices=("csv", "json"), default="csv",
                        help="report format for metric files and printed output")
        sp.add_argument("--kind", help="experiment kind (overrides config)")
        sp.add_argument("--domain", help="blockworld or dialpad (overrides config)")
        sp.add_argument("--seed-list", help="e.g. 0,1,2 or 0-4 (overrides config)")

    g = sub.add_parser("generate", help="write dataset files")
    common(g)
    g.set_defaults(func=cmd_generate)
    r = sub.add_parser("run", help="run an experiment over its seed list")
    common(r)
    r.add_argument("--threads", type=int, default=1, help="worker processes for seeds")
    r.set_defaults(func=cmd_run)
    lt = sub.add_parser("latent", help="project a checkpoint's hidden states on the test set")
    common(lt)
    lt.add_argument("checkpoint")
    lt.set_defaults(func=cmd_latent)
    i = sub.add_parser("inspect", help="summarise a dataset file")
    i.add_argument("dataset")
    i.add_argument("--format", choices=("csv", "json"), default="csv")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, DimensionError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except PicoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
