"""End-to-end acceptance criteria, each at its stated tolerance and time budget.

Every test prints one ``[PASS]``/``[FAIL]`` line; the lines are repeated in
the terminal summary.
"""

import itertools
import time

import numpy as np
import pytest
import test_properties as props

from picolab import alignment as al
from picolab import diffcore as dc
from picolab.envsim import Normalizer, generate_blockworld, generate_dialpad
from picolab.experiments import default_config, run_experiment
from picolab.metrics import label_accuracy, random_labels
from picolab.models import PicoNetwork, PrimitiveLibrary, PrimitivePolicy
from picolab.rng import make_rng
from picolab.training import make_batch, pico_loss

pytestmark = pytest.mark.slow


# ---------------------------------------------------------------- 1. gradient check

def test_gradient_check_full_network(report):
    start = time.time()
    ds = generate_blockworld(4, seed=21)
    z = Normalizer.fit(ds).apply(ds)
    rng = make_rng(0, "acceptance", "gradcheck")
    trajs = []
    for i in rng.choice(len(z), size=2, replace=False):
        d = z.trajectories[i]
        t0 = int(rng.integers(0, len(d) - 3))
        trajs.append(type(d)(d.states[t0:t0 + 3], d.actions[t0:t0 + 3], d.labels[t0:t0 + 3],
                             d.sketch, d.domain, d.seed, None, d.index))
    batch = make_batch(trajs)
    lib = PrimitiveLibrary([PrimitivePolicy.random(f"p{k}", 12, 3, rng) for k in range(3)])
    net = PicoNetwork.build(lib, seed=0)
    params = net.parameters()

    def loss(_, b):
        return pico_loss(net.forward(b.states).blended, b.actions, b.mask)

    err = dc.grad_check(loss, params, batch, eps=1e-5)
    elapsed = time.time() - start
    ok = err < 1e-4 and elapsed < 30
    report("1 gradient check", ok, f"{params.count()} params, batch {batch.states.shape[:2]}, "
           f"max rel err {err:.2e} (< 1e-4), {elapsed:.1f}s (< 30s)")
    assert err < 1e-4
    assert elapsed < 30


# ---------------------------------------------------------------- 2. DP oracles

def oracle_positions(T, L):
    """Every non-decreasing position sequence from 0 to L-1 moving by 0 or 1."""
    for cuts in itertools.combinations(range(1, T), L - 1):
        yield [sum(t >= c for c in cuts) for t in range(T)]


def test_dynamic_programs_match_enumeration(report):
    start = time.time()
    rng = np.random.default_rng(2024)
    n_cases, worst_ll, worst_taco, decode_miss = 0, 0.0, 0.0, 0
    for T in range(1, 7):
        for L in range(1, min(T, 3) + 1):
            for K in range(1, 5):
                if L > 1 and K < 2:
                    continue
                for _ in range(100):
                    z = rng.normal(size=(T, K)) * 3
                    logp = z - np.log(np.exp(z).sum(1, keepdims=True))
                    sketch = [int(rng.integers(K))]
                    while len(sketch) < L:
                        k = int(rng.integers(K))
                        if k != sketch[-1]:
                            sketch.append(k)
                    scored = []
                    for pos in oracle_positions(T, L):
                        s = sum(logp[t, sketch[p]] for t, p in enumerate(pos))
                        scored.append((s, tuple(sketch[p] for p in pos)))
                    ll = np.logaddexp.reduce([s for s, _ in scored])
                    best = max(s for s, _ in scored)
                    worst_ll = max(worst_ll, abs(al.ctc_log_likelihood(logp, sketch) - ll))
                    path = al.ctc_decode(logp, sketch)
                    path_score = sum(logp[t, k] for t, k in enumerate(path))
                    if path not in [p for _, p in scored] or path_score < best - 1e-12:
                        decode_miss += 1

                    A = rng.normal(size=(T, L)) * 2
                    stop = rng.uniform(0.05, 0.95, size=(T, L))
                    S = np.stack([np.log(1 - stop), np.log(stop)], axis=-1)
                    terms = []
                    for pos in oracle_positions(T, L):
                        s = A[0, 0] + S[0, 0, 0]
                        for t in range(1, T):
                            s += A[t, pos[t]] + S[t, pos[t - 1], pos[t] - pos[t - 1]]
                        terms.append(s)
                    taco = np.logaddexp.reduce(terms)
                    worst_taco = max(worst_taco, abs(al.taco_log_likelihood(A, S, sketch) - taco))
                    n_cases += 1
    elapsed = time.time() - start
    ok = worst_ll < 1e-9 and worst_taco < 1e-9 and decode_miss == 0 and elapsed < 60
    report("2 DP oracles", ok, f"{n_cases} emission matrices, CTC err {worst_ll:.1e}, "
           f"TACO err {worst_taco:.1e} (< 1e-9), decode misses {decode_miss}, {elapsed:.1f}s (< 60s)")
    assert worst_ll < 1e-9 and worst_taco < 1e-9
    assert decode_miss == 0
    assert elapsed < 60


# ---------------------------------------------------------------- 3. reconstruction

@pytest.fixture(scope="module")
def reconstruction_run(tmp_path_factory):
    start = time.time()
    res = run_experiment(default_config("reconstruct", "blockworld"),
                         out=str(tmp_path_factory.mktemp("reconstruct")))
    return res, time.time() - start


def test_reconstruction(reconstruction_run, report):
    res, elapsed = reconstruction_run
    accs = [r["label_accuracy"] for r in res.rows]
    mses = [r["action_mse"] for r in res.rows]
    mses_z = [r["action_mse_z"] for r in res.rows]
    ok = min(accs) >= 0.90 and max(mses) <= 0.01 and max(mses_z) <= 0.01 and elapsed < 300
    report("3 reconstruction", ok, f"{len(accs)} seeds, min acc {min(accs):.3f} (>= 0.90), "
           f"max MSE {max(mses):.2e} workspace / {max(mses_z):.2e} standardised (<= 0.01), "
           f"{elapsed:.0f}s (< 300s)")
    assert len(accs) == 5
    assert min(accs) >= 0.90
    assert max(mses) <= 0.01 and max(mses_z) <= 0.01
    assert elapsed < 300


# ---------------------------------------------------------------- 4. gap discovery

def test_gap_discovery(tmp_path, report):
    start = time.time()
    res = run_experiment(default_config("gap_ablation", "blockworld"), out=str(tmp_path))
    elapsed = time.time() - start
    drops = [r for r in res.rows if r["condition"].startswith("drop_")]
    conds = sorted({r["condition"] for r in drops})
    min_acc = min(r["label_accuracy"] for r in drops)
    max_ratio = max(r["gap_ratio"] for r in drops)
    # the gap slot must take over the grasp phase when grasp is the dropped skill
    grasp_recall = min(r["gap_recall"] for r in drops if r["condition"] == "drop_grasp")
    ok = (len(drops) == 15 and min_acc >= 0.85 and max_ratio <= 3.0 and grasp_recall >= 0.80
          and elapsed < 900)
    report("4 gap discovery", ok, f"{len(conds)} ablations x {len(drops) // max(len(conds), 1)} seeds, "
           f"min acc {min_acc:.3f} (>= 0.85), max gap/pretrained MSE {max_ratio:.2f} (<= 3), "
           f"min grasp recall by gap slot {grasp_recall:.3f} (>= 0.80), {elapsed:.0f}s (< 900s)")
    assert len(drops) == 15
    assert min_acc >= 0.85
    assert max_ratio <= 3.0
    assert grasp_recall >= 0.80
    assert elapsed < 900


# ---------------------------------------------------------------- 5. dialpad comparison

def test_dialpad_comparison(tmp_path, report):
    start = time.time()
    cfg = default_config("compare_baselines", "dialpad")
    res = run_experiment(cfg, out=str(tmp_path))
    elapsed = time.time() - start
    agg = {r["method"]: r for r in res.aggregate}
    pico, ctc = agg["pico"], agg["ctc"]
    gain = pico["label_accuracy_mean"] - ctc["label_accuracy_mean"]
    lower = (pico["action_mse_mean"] < ctc["action_mse_mean"]
             and pico["action_mse_z_mean"] < ctc["action_mse_z_mean"])
    n_test = {r["n_test_timesteps"] for r in res.rows}
    floor = 1.0 / cfg.data.sketch_len
    ok = gain >= 0.10 and lower and ctc["label_accuracy_mean"] > floor and elapsed < 1200
    report("5 dialpad comparison", ok,
           f"K={cfg.data.K}, sketch {cfg.data.sketch_len}, {cfg.data.use_train}/{cfg.data.use_test} split, "
           f"{len(cfg.seeds)} seeds: PICO acc {pico['label_accuracy_mean']:.3f} vs CTC "
           f"{ctc['label_accuracy_mean']:.3f} (gain {gain:+.3f} >= 0.10; CTC above the 1/L floor "
           f"{floor:.2f}), MSE "
           f"{pico['action_mse_mean']:.2e} vs {ctc['action_mse_mean']:.2e}, {elapsed:.0f}s (< 1200s)")
    assert (cfg.data.K, cfg.data.sketch_len, cfg.data.use_train, cfg.data.use_test) == (10, 4, 240, 56)
    assert len(cfg.seeds) == 3 and len(n_test) == 1
    assert gain >= 0.10
    assert lower
    assert ctc["label_accuracy_mean"] > floor
    assert elapsed < 1200


# ---------------------------------------------------------------- 6. random floor

def test_random_floor(report):
    truth = np.concatenate([d.labels for d in generate_dialpad(200, K=10, sketch_len=4, seed=5)])[:10_000]
    pred = random_labels(len(truth), 10, make_rng(0, "acceptance", "random"))
    acc = label_accuracy(pred, truth)
    ok = len(truth) == 10_000 and abs(acc - 0.10) <= 0.02
    report("6 random floor", ok, f"{len(truth)} timesteps, K=10, accuracy {acc:.4f} (0.10 +- 0.02)")
    assert len(truth) == 10_000
    assert abs(acc - 0.10) <= 0.02


# ---------------------------------------------------------------- 7. determinism

def test_metric_csvs_byte_identical(reconstruction_run, tmp_path, report):
    first, _ = reconstruction_run
    again = run_experiment(default_config("reconstruct", "blockworld"), out=str(tmp_path))
    same = {}
    for name in ("metrics.csv", "aggregate.csv"):
        with open(f"{first.out}/{name}", "rb") as a, open(f"{again.out}/{name}", "rb") as b:
            same[name] = a.read() == b.read()
    ok = all(same.values())
    report("7 determinism", ok, ", ".join(f"{k} {'identical' if v else 'DIFFERS'}" for k, v in same.items()))
    assert ok


# ---------------------------------------------------------------- 8. invariant suites

SUITES = sorted(name for name in dir(props) if name.startswith("test_"))


@pytest.mark.parametrize("name", SUITES)
def test_invariant_suite(name, report):
    props.EXAMPLES[name] = 0
    failure = None
    try:
        getattr(props, name)()
    except Exception as exc:  # noqa: BLE001 - reported, then re-raised
        failure = exc
    n = props.EXAMPLES[name]
    ok = failure is None and n >= 1000
    report(f"8 invariants / {name[len('test_'):]}", ok, f"{n} hypothesis cases (>= 1000)"
           + ("" if failure is None else f", failed: {failure!r}"[:200]))
    if failure is not None:
        raise failure
    assert n >= 1000
