import itertools

import numpy as np
import pytest

from picolab import alignment as al
from picolab import diffcore as dc
from picolab.envsim import generate_dialpad
from picolab.errors import NumericalError, ValidationError
from picolab.training import TrainConfig


def oracle_paths(T, K, sketch):
    """Every length-T label sequence over K symbols whose run-length collapse is ``sketch``."""
    out = []
    for p in itertools.product(range(K), repeat=T):
        runs = [p[0]] + [b for a, b in zip(p[:-1], p[1:]) if a != b]
        if tuple(runs) == tuple(sketch):
            out.append(p)
    return out


def oracle_loglik(logp, sketch):
    T, K = logp.shape
    scores = [sum(logp[t, k] for t, k in enumerate(p)) for p in oracle_paths(T, K, sketch)]
    return np.logaddexp.reduce(scores) if scores else -np.inf


def random_emissions(rng, T, K, scale=2.0):
    z = rng.normal(size=(T, K)) * scale
    return z - np.log(np.exp(z).sum(1, keepdims=True))


def random_sketch(rng, K, L):
    s = [int(rng.integers(K))]
    while len(s) < L:
        k = int(rng.integers(K))
        if k != s[-1]:
            s.append(k)
    return tuple(s)


# ---------------------------------------------------------------- collapse / paths

def test_collapse_examples():
    assert al.collapse([2, 2, 3, 3, 1]) == (2, 3, 1)
    assert al.collapse([5]) == (5,)
    assert al.collapse([1, 2, 1]) == (1, 2, 1)


def test_collapse_empty():
    with pytest.raises(ValidationError):
        al.collapse([])


def test_sketch_with_repeats_rejected():
    with pytest.raises(ValidationError):
        al.check_sketch((1, 1, 2))
    with pytest.raises(ValidationError):
        al.check_sketch(())


@pytest.mark.parametrize("T,L", [(1, 1), (4, 2), (6, 3), (7, 4)])
def test_path_count_is_binomial(T, L):
    paths = al.enumerate_matching_paths(T, tuple(range(L)))
    assert len(paths) == al.n_matching_paths(T, L)
    assert len(set(paths)) == len(paths)
    assert all(al.matches(p, tuple(range(L))) for p in paths)


def test_enumeration_agrees_with_oracle():
    for sketch in [(0,), (0, 1), (2, 0, 2), (1, 0, 2)]:
        assert sorted(al.enumerate_matching_paths(5, sketch)) == sorted(oracle_paths(5, 3, sketch))


def test_path_shorter_than_sketch():
    with pytest.raises(ValidationError):
        al.enumerate_matching_paths(2, (0, 1, 2))


# ---------------------------------------------------------------- CTC

def test_ctc_uniform_emissions_count_paths():
    # log p = path count * K^-T
    T, K, L = 6, 4, 3
    logp = np.full((T, K), -np.log(K))
    expect = np.log(al.n_matching_paths(T, L)) - T * np.log(K)
    assert abs(al.ctc_log_likelihood(logp, (0, 1, 2)) - expect) < 1e-12


def test_ctc_single_path_when_T_equals_L():
    rng = np.random.default_rng(0)
    logp = random_emissions(rng, 3, 4)
    assert abs(al.ctc_log_likelihood(logp, (3, 1, 0)) - (logp[0, 3] + logp[1, 1] + logp[2, 0])) < 1e-12


def test_ctc_matches_oracle_with_revisits(rng):
    for _ in range(20):
        T, K = int(rng.integers(1, 7)), int(rng.integers(2, 5))
        L = int(rng.integers(1, min(T, 3) + 1))
        logp = random_emissions(rng, T, K)
        sketch = random_sketch(rng, K, L)
        assert abs(al.ctc_log_likelihood(logp, sketch) - oracle_loglik(logp, sketch)) < 1e-9


def test_ctc_rejects_bad_inputs():
    logp = np.log(np.full((3, 2), 0.5))
    with pytest.raises(ValidationError):
        al.ctc_log_likelihood(logp, (0, 1, 0, 1))
    with pytest.raises(ValidationError):
        al.ctc_log_likelihood(logp, (0, 5))


def test_validate_emissions():
    with pytest.raises(ValidationError):
        al.validate_emissions(np.zeros((2, 3)))
    ok = al.normalize_emissions(np.arange(6.0).reshape(2, 3))
    assert al.validate_emissions(ok) is not None


def test_ctc_posteriors_gradient_vs_finite_differences(rng):
    logp = random_emissions(rng, 6, 3)
    sketch = (2, 0, 1)
    _, grad = al.ctc_posteriors(logp, sketch)
    eps = 1e-6
    num = np.zeros_like(logp)
    for t in range(6):
        for k in range(3):
            up, down = logp.copy(), logp.copy()
            up[t, k] += eps
            down[t, k] -= eps
            num[t, k] = (al.ctc_log_likelihood(up, sketch) - al.ctc_log_likelihood(down, sketch)) / (2 * eps)
    np.testing.assert_allclose(grad, num, atol=1e-7)
    # occupancies: one unit of mass per timestep
    np.testing.assert_allclose(grad.sum(1), 1.0, atol=1e-12)


def test_ctc_zero_probability_sketch():
    logp = np.array([[0.0, -np.inf], [0.0, -np.inf]])
    with pytest.raises(NumericalError):
        al.ctc_posteriors(logp, (0, 1))


def test_ctc_op_backward(rng):
    ps = dc.ParameterSet({"z": rng.normal(size=(5, 3))})
    with dc.Tape() as tape:
        ll = al.ctc_log_likelihood_op(dc.log_softmax(ps["z"]), (0, 2))
    g = dc.backward(ll, tape, ps)["z"]

    def f(z):
        return al.ctc_log_likelihood(al.normalize_emissions(z), (0, 2))

    z = ps["z"].value.copy()
    num = np.zeros_like(z)
    for idx in np.ndindex(z.shape):
        up, dn = z.copy(), z.copy()
        up[idx] += 1e-6
        dn[idx] -= 1e-6
        num[idx] = (f(up) - f(dn)) / 2e-6
    np.testing.assert_allclose(g, num, atol=1e-7)


# ---------------------------------------------------------------- decoding

def test_decode_matches_oracle_argmax(rng):
    for _ in range(30):
        T, K = int(rng.integers(1, 7)), int(rng.integers(2, 5))
        L = int(rng.integers(1, min(T, 3) + 1))
        logp = random_emissions(rng, T, K)
        sketch = random_sketch(rng, K, L)
        paths = oracle_paths(T, K, sketch)
        best = max(paths, key=lambda p: sum(logp[t, k] for t, k in enumerate(p)))
        assert al.ctc_decode(logp, sketch) == best


def test_decode_tie_prefers_earliest_advance():
    logp = np.log(np.full((4, 2), 0.5))
    assert al.ctc_decode(logp, (0, 1)) == (0, 1, 1, 1)
    assert al.ctc_decode(np.log(np.full((4, 3), 1 / 3)), (2, 0, 1)) == (2, 0, 1, 1)


def test_decode_obvious_boundary():
    p = np.array([[0.9, 0.1], [0.9, 0.1], [0.1, 0.9], [0.1, 0.9]])
    assert al.ctc_decode(np.log(p), (0, 1)) == (0, 0, 1, 1)


def test_brute_force_helper_agrees_with_oracle(rng):
    logp = random_emissions(rng, 5, 3)
    ll, path = al.brute_force_ctc(logp, (1, 2))
    assert abs(ll - oracle_loglik(logp, (1, 2))) < 1e-12


# ---------------------------------------------------------------- TACO

def oracle_taco(A, S, sketch):
    """Enumerate position sequences; S is (T, L, 2) with S[t, prev] = (stay, advance)."""
    T, L = A.shape
    scores = []
    for cuts in itertools.combinations(range(1, T), L - 1):
        pos = np.searchsorted(np.array(cuts), np.arange(T), side="right")
        s = A[0, 0] + S[0, 0, 0]
        for t in range(1, T):
            moved = pos[t] != pos[t - 1]
            s += A[t, pos[t]] + S[t, pos[t - 1], int(moved)]
        scores.append(s)
    return np.logaddexp.reduce(scores)


def random_stops(rng, T, L):
    p = rng.uniform(0.05, 0.95, size=(T, L))
    return np.stack([np.log(1 - p), np.log(p)], axis=-1)


def test_taco_matches_oracle(rng):
    for _ in range(30):
        T = int(rng.integers(1, 7))
        L = int(rng.integers(1, min(T, 3) + 1))
        A = rng.normal(size=(T, L))
        S = random_stops(rng, T, L)
        sketch = tuple(range(L))
        assert abs(al.taco_log_likelihood(A, S, sketch) - oracle_taco(A, S, sketch)) < 1e-9


def test_taco_shared_stop_shape(rng):
    A = rng.normal(size=(5, 2))
    S2 = random_stops(rng, 5, 1)[:, 0]
    full = np.broadcast_to(S2[:, None], (5, 2, 2))
    assert al.taco_log_likelihood(A, S2, (3, 1)) == al.taco_log_likelihood(A, full, (3, 1))


def test_taco_bad_shapes(rng):
    with pytest.raises(ValidationError):
        al.taco_log_likelihood(rng.normal(size=(4, 2)), np.zeros((4, 3, 2)), (0, 1))
    with pytest.raises(ValidationError):
        al.taco_log_likelihood(rng.normal(size=(4, 3)), np.zeros((4, 2)), (0, 1))


def test_gaussian_log_likelihood():
    ll = al.gaussian_log_likelihood(np.zeros((1, 2)), np.zeros((1, 2)))
    assert abs(ll[0] + np.log(2 * np.pi)) < 1e-14


# ---------------------------------------------------------------- baseline

def test_ctc_baseline_trains_and_predicts():
    ds = generate_dialpad(12, K=4, sketch_len=2, seed=0)
    cfg = TrainConfig(epochs=3, learning_rate=3e-3, seed=0, batch=4)
    base = al.train_ctc_baseline(ds, cfg, pretrain_cfg=TrainConfig(epochs=2, seed=0), hidden_dim=8,
                                 widths=(8,))
    assert len(base.history) == 3 and np.all(np.isfinite(base.history))
    assert 0.0 <= base.train_accuracy <= 1.0
    labels, acts = base.predict(ds.trajectories[0])
    assert labels.shape == (len(ds.trajectories[0]),) and acts.shape == (len(labels), 2)
    assert al.collapse(labels) == ds.trajectories[0].sketch


def test_ctc_baseline_requires_sketches():
    ds = generate_dialpad(2, K=3, sketch_len=2, seed=0)
    ds.trajectories[0].sketch = None
    with pytest.raises(ValidationError):
        al.train_ctc_baseline(ds, TrainConfig(epochs=1))


# ---------------------------------------------------------------- worked cases

def test_collapse_long_runs():
    assert al.collapse((2, 2, 2, 3, 3, 1, 1, 1, 1)) == (2, 3, 1)


def test_three_steps_two_sketch_elements():
    assert set(al.enumerate_matching_paths(3, (0, 1))) == {(0, 0, 1), (0, 1, 1)}


def test_one_path_when_lengths_equal():
    assert al.enumerate_matching_paths(4, (3, 0, 2, 1)) == [(3, 0, 2, 1)]


def test_uniform_two_labels_three_steps():
    # two matching paths, each with probability 1/8
    logp = np.log(np.full((3, 2), 0.5))
    assert abs(al.ctc_log_likelihood(logp, (0, 1)) - np.log(0.25)) < 1e-12


def test_single_step_single_label():
    p = np.array([[0.3, 0.7]])
    assert abs(al.ctc_log_likelihood(np.log(p), (1,)) - np.log(0.7)) < 1e-15


def test_decode_follows_strong_signal():
    p = np.array([[0.8, 0.2], [0.8, 0.2], [0.2, 0.8]])
    assert al.ctc_decode(np.log(p), (0, 1)) == (0, 0, 1)


def test_taco_two_steps_two_sketch_elements_has_one_path(rng):
    A = rng.normal(size=(2, 2))
    S = np.log(rng.uniform(0.1, 0.9, size=(2, 2, 2)))
    expect = A[0, 0] + S[0, 0, 0] + A[1, 1] + S[1, 0, 1]
    assert abs(al.taco_log_likelihood(A, S, (0, 1)) - expect) < 1e-12


def test_decode_sequence_shorter_than_sketch():
    with pytest.raises(ValidationError):
        al.ctc_decode(np.log(np.full((2, 3), 1 / 3)), (0, 1, 2))


def test_confident_emissions_decode_to_ground_truth():
    for d in generate_dialpad(10, K=6, sketch_len=4, seed=2):
        p = np.full((len(d), 6), 0.01 / 5)
        p[np.arange(len(d)), d.labels] = 0.99
        assert al.ctc_decode(np.log(p), d.sketch) == tuple(d.labels.tolist())


def test_ctc_baseline_is_seeded():
    ds = generate_dialpad(8, K=4, sketch_len=2, seed=1)
    cfg = TrainConfig(epochs=2, learning_rate=3e-3, seed=5, batch=4)
    runs = [al.train_ctc_baseline(ds, cfg, pretrain_cfg=TrainConfig(epochs=1, seed=5), hidden_dim=8,
                                  widths=(8,)) for _ in range(2)]
    for d in ds:
        a, b = (r.segmenter.segment(d.states, d.sketch) for r in runs)
        assert a.tolist() == b.tolist()
