import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mizocam.info import Histogram, JointTable, mutual_information
from mizocam.mizo import (
    MizoConfig,
    MizoError,
    MizoState,
    Separator,
    UnitSample,
    classify_units,
    feedback_mask,
    max_margin_step,
    mi_of_score,
    mixture_score,
    project_simplex,
    regret,
    run_mizo,
    tangent_directions,
    zo_update,
)


def planted_task(seed, n=120, informative=1, k=16, n_sources=3):
    """Only source `informative` has a response-dependent shape."""
    rng = np.random.default_rng(seed)
    y = rng.random(n) < 0.5
    sources = []
    for i in range(n):
        row = []
        for s in range(n_sources):
            a = (3.0 if y[i] else 0.4) if s == informative else rng.choice([0.3, 3.0])
            row.append(Histogram(rng.dirichlet(np.full(k, a))))
        sources.append(row)
    return sources, y


# -- mixture -------------------------------------------------------------------

def test_identity_weights_return_first_source():
    rng = np.random.default_rng(0)
    srcs = [Histogram(rng.dirichlet(np.ones(32))) for _ in range(3)]
    dist, score = mixture_score(srcs, np.array([1.0, 0.0, 0.0]))
    assert np.allclose(dist.bins, srcs[0].bins, atol=1e-15)


def test_equal_weights_identical_sources():
    h = Histogram(np.random.default_rng(1).dirichlet(np.ones(32)))
    dist, _ = mixture_score([h, h, h], np.full(3, 1 / 3))
    assert np.allclose(dist.bins, h.bins, atol=1e-15)


def test_neutral_lambda_is_plain_mixture():
    rng = np.random.default_rng(2)
    srcs = [Histogram(rng.dirichlet(np.ones(32))) for _ in range(2)]
    theta = np.array([0.3, 0.7])
    dist, _ = mixture_score(srcs, theta, lam=1.0)
    assert np.allclose(dist.bins, theta @ np.stack([s.bins for s in srcs]), atol=1e-15)


def test_lambda_sharpens():
    h = Histogram([0.1, 0.2, 0.3, 0.4] * 8 / np.float64(8))
    _, flat = mixture_score([h], np.ones(1), lam=1.0)
    _, sharp = mixture_score([h], np.ones(1), lam=2.0)
    assert sharp < flat


def test_mixture_count_mismatch():
    with pytest.raises(MizoError):
        mixture_score([Histogram([1.0])], np.full(2, 0.5))


# -- MI of a score ---------------------------------------------------------------

def test_mi_constant_scores_zero():
    assert mi_of_score(np.ones(20), np.arange(20) % 2 == 0) == 0.0


def test_mi_perfect_separation_one_bit():
    y = np.arange(40) % 2 == 0
    assert mi_of_score(np.where(y, 1.0, 0.0) + np.arange(40) * 1e-6, y) == pytest.approx(1.0, abs=1e-12)


def test_mi_degenerate_target():
    with pytest.raises(MizoError, match="degenerate target"):
        mi_of_score([0.1, 0.2, 0.3], [True, True, True])


def exhaustive_binning_mi(x, y):
    """Average MI over every max-entropy 2-bin split between order statistics."""
    order = np.argsort(x, kind="stable")
    ys = y[order].astype(int)
    n = len(x)
    best_h, mis = -1.0, []
    for cut in range(1, n):
        p = cut / n
        h = round(-(p * math.log2(p) + (1 - p) * math.log2(1 - p)), 9)
        bins = (np.arange(n) >= cut).astype(int)
        mi = mutual_information(JointTable.from_samples(bins, ys, dims=(2, 2)))
        if h > best_h:
            best_h, mis = h, [mi]
        elif h == best_h:
            mis.append(mi)
    return float(np.mean(mis))


@pytest.mark.parametrize("seed", range(5))
def test_mi_matches_exhaustive_binning_oracle(seed):
    rng = np.random.default_rng(seed)
    y = rng.random(100) < 0.5
    x = y + rng.normal(0, 0.1, 100)
    assert abs(mi_of_score(x, y) - exhaustive_binning_mi(x, y)) < 0.05


# -- zeroth-order update -----------------------------------------------------------

def test_zo_coefficient_positive():
    s = MizoState.initial(2)
    s.theta = np.array([0.5, 0.5])
    s.loss_history = [0.5]
    v = np.array([[1.0, -1.0]])
    new, accepted = zo_update(s, 0.4, 1, np.random.default_rng(0), directions=v)
    assert accepted
    assert new.theta == pytest.approx([0.6, 0.4])
    assert new.loss_history == [0.5, 0.4]


def test_zo_coefficient_negative_reverses():
    s = MizoState.initial(2)
    s.loss_history = [0.4]
    new, _ = zo_update(s, 0.5, 1, np.random.default_rng(0), directions=np.array([[1.0, -1.0]]))
    assert new.theta[0] < 0.5


def test_zo_direction_mean():
    dirs = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    assert dirs.mean(axis=0) == pytest.approx([0.0, 0.5])
    s = MizoState.initial(2)
    s.loss_history = [1.0]
    new, _ = zo_update(s, 0.0, 4, np.random.default_rng(0), directions=dirs)
    # step (0, 0.5) then projection onto the simplex
    assert new.theta == pytest.approx(project_simplex([0.5, 1.0]))


def test_zo_rejects_without_improvement():
    s = MizoState.initial(3)
    new, accepted = zo_update(s, -0.3, 4, np.random.default_rng(0), objective=lambda th: 0.3)
    assert not accepted and np.array_equal(new.theta, s.theta)
    assert new.loss_history == [-0.3]


def test_zo_requires_positive_r():
    with pytest.raises(MizoError):
        zo_update(MizoState.initial(2), 0.0, 0, np.random.default_rng(0))


@given(st.integers(2, 6), st.integers(1, 8), st.integers(0, 2**31), st.one_of(st.none(), st.integers(0, 5)))
def test_tangent_directions_sum_to_zero(n, r, seed, coord):
    if coord is not None and coord >= n:
        coord = None
    d = tangent_directions(np.random.default_rng(seed), n, r, coord)
    assert d.shape == (r, n)
    assert np.allclose(d.sum(axis=1), 0.0, atol=1e-12)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8))
def test_projection_lands_on_simplex(v):
    p = project_simplex(v)
    assert abs(p.sum() - 1) < 1e-9 and p.min() >= 0


# -- regret ---------------------------------------------------------------------

def test_regret_examples():
    s = MizoState.initial(1)
    s.mi_running_mean = 0.5
    assert regret(s, 0.7) == pytest.approx(-0.2)
    assert regret(s, 0.5) == 0.0


def test_running_mean_never_below_prefix():
    srcs, y = planted_task(3, n=60)
    run = run_mizo(srcs, y, rounds=20, config=MizoConfig(seed=3))
    means = [t["running_mean"] for t in run.trace]
    assert all(means[-1] >= m for m in means)


# -- unit separation --------------------------------------------------------------

def test_classify_units_pmi_sign():
    j = JointTable([[0.1, 0.3], [0.3, 0.1], [0.1, 0.1]])
    units = classify_units(Histogram(j.mass.sum(axis=1)), j)
    assert [u.orientation for u in units] == ["Up", "Down", "Down"]


def test_classify_units_independent_all_down():
    j = JointTable(np.outer([0.2, 0.3, 0.5], [0.4, 0.6]))
    units = classify_units(Histogram(j.mass.sum(axis=1)), j)
    assert not any(u.up for u in units)


def test_classify_units_hand_computed_four_bins():
    j = JointTable([[0.05, 0.20], [0.15, 0.10], [0.10, 0.10], [0.20, 0.10]])
    p_y1 = 0.5
    hand = []
    for row in j.mass:
        hand.append(math.log2(row[1] / row.sum() / p_y1))
    units = classify_units(Histogram(j.mass.sum(axis=1)), j)
    assert [u.up for u in units] == [h > 0 for h in hand]
    assert [u.feature[2] for u in units] == pytest.approx(hand)


def unit(x, up):
    return UnitSample(np.array([float(x)]), up)


def test_max_margin_gate_closed():
    sep = Separator(np.array([0.3]), 0.1, 2 / 0.3)
    out, stepped = max_margin_step(sep, [unit(-1, False), unit(1, True)], 0.5, 0)
    assert not stepped
    assert np.array_equal(out.w, sep.w) and out.bias == sep.bias


def grid_qp_oracle():
    """Minimum hinge loss over a (w, b) grid with |w| <= 1; ties go to the smallest |w|."""
    best = None
    for w in np.linspace(-1, 1, 201):
        for b in np.linspace(-1, 1, 201):
            loss = max(0, 1 - (w * 1 + b)) + max(0, 1 + (w * -1 + b))
            key = (round(loss, 9), abs(w))
            if best is None or key < best[0]:
                best = (key, w, b)
    return best[1], best[2]


def test_max_margin_converges_to_qp_oracle():
    w_star, b_star = grid_qp_oracle()
    sep = Separator.zero(1)
    units = [unit(-1, False), unit(1, True)]
    for t in range(1, 400):
        sep, _ = max_margin_step(sep, units, 0.5 / math.sqrt(t), 1)
    assert sep.w[0] == pytest.approx(w_star, abs=1e-2)
    assert sep.bias == pytest.approx(b_star, abs=1e-2)
    assert sep.gamma == pytest.approx(2.0, abs=2e-2)


@settings(max_examples=50)
@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3), st.booleans()), min_size=2, max_size=12),
       st.floats(0.01, 5))
def test_max_margin_norm_bound_and_gamma(points, eta):
    units = [UnitSample(np.array([a, b]), up) for a, b, up in points]
    sep = Separator.zero(2)
    for _ in range(5):
        sep, _ = max_margin_step(sep, units, eta, 1)
        n = np.linalg.norm(sep.w)
        assert n <= 1 + 1e-12
        if n > 0:
            assert sep.gamma * n == pytest.approx(2.0)


# -- the loop ------------------------------------------------------------------

def test_single_source_one_round():
    srcs, y = planted_task(0, n=40, informative=0, n_sources=1)
    run = run_mizo(srcs, y, rounds=1, config=MizoConfig(seed=0, batch_size=40))
    assert run.state.theta.tolist() == [1.0]
    expected = mi_of_score(list(run.scores.values()), y)
    assert run.state.mi_running_mean == pytest.approx(expected, abs=1e-11)


def test_run_mizo_errors():
    srcs, y = planted_task(0, n=10)
    with pytest.raises(MizoError):
        run_mizo(srcs, y, rounds=0)
    with pytest.raises(MizoError):
        run_mizo([], [], rounds=1)


def test_planted_source_found():
    wins = 0
    for seed in range(10):
        srcs, y = planted_task(seed)
        run = run_mizo(srcs, y, rounds=50, config=MizoConfig(seed=seed))
        wins += int(np.argmax(run.state.theta) == 1)
    assert wins >= 9


def test_invariants_on_trace():
    srcs, y = planted_task(4, n=80)
    run = run_mizo(srcs, y, rounds=30, config=MizoConfig(seed=4))
    prev = 0.0
    for t in run.trace:
        th = np.asarray(t["theta"])
        assert abs(th.sum() - 1) <= 1e-9 and th.min() >= 0
        assert t["running_mean"] >= prev
        assert t["regret"] + t["mi"] == t["prev_running_mean"]
        prev = t["running_mean"]
    s = run.state
    assert s.mi_running_mean == pytest.approx(np.mean(s.accepted_mi), abs=1e-11)


def test_feedback_fraction_trend():
    finals = {1.0: [], 0.2: []}
    for seed in range(10):
        srcs, y = planted_task(seed)
        for f in finals:
            mask = feedback_mask(len(y), f, seed)
            run = run_mizo(srcs, y, rounds=50, config=MizoConfig(seed=seed), revealed=mask)
            finals[f].append(run.state.mi_running_mean)
    assert np.mean(finals[1.0]) >= np.mean(finals[0.2])


def test_feedback_mask_counts_and_nesting():
    for k in (7, 20, 61):
        full, half, fifth = (feedback_mask(k, f, 3) for f in (1.0, 0.5, 0.2))
        assert (full.sum(), half.sum(), fifth.sum()) == (k, k // 2, int(0.2 * k))
        assert np.all(half[fifth]) and np.all(full[half])


def test_separator_frozen_without_feedback():
    srcs, y = planted_task(5, n=60)
    run = run_mizo(srcs, y, rounds=15, config=MizoConfig(seed=5), revealed=np.zeros(60, bool))
    assert np.array_equal(run.state.separator.w, np.zeros(3))
    assert all(p["alpha"] == 0 for p in run.state.phi)


def test_determinism_and_json_round_trip():
    srcs, y = planted_task(6, n=60)
    a = run_mizo(srcs, y, rounds=10, config=MizoConfig(seed=6))
    b = run_mizo(srcs, y, rounds=10, config=MizoConfig(seed=6))
    assert a.state.to_json() == b.state.to_json()
    back = MizoState.from_json(a.state.to_json())
    assert back.to_json() == a.state.to_json()
    assert np.array_equal(back.theta, a.state.theta)


def test_warm_start_continues_steps():
    srcs, y = planted_task(7, n=60)
    first = run_mizo(srcs, y, rounds=5, config=MizoConfig(seed=7))
    second = run_mizo(srcs, y, rounds=5, config=MizoConfig(seed=7), state=first.state)
    assert second.state.step == 10 and len(second.state.mi_history) == 10


def test_count_scaling_leaves_trajectory_unchanged():
    rng = np.random.default_rng(8)
    n = 60
    y = rng.random(n) < 0.5
    counts = [[rng.integers(0, 20, 16) + (5 * y[i] if s == 1 else 0) for s in range(3)] for i in range(n)]
    a = [[Histogram.from_counts(c) for c in row] for row in counts]
    b = [[Histogram.from_counts(np.asarray(c) * 7.0) for c in row] for row in counts]
    ra = run_mizo(a, y, rounds=15, config=MizoConfig(seed=8))
    rb = run_mizo(b, y, rounds=15, config=MizoConfig(seed=8))
    assert ra.state.mi_history == rb.state.mi_history
    assert np.allclose(ra.state.theta, rb.state.theta, atol=1e-12)
    sa, sb = np.array(list(ra.scores.values())), np.array(list(rb.scores.values()))
    assert np.array_equal(np.argsort(sa, kind="stable"), np.argsort(sb, kind="stable"))


def test_no_ar_accepts_every_step():
    srcs, y = planted_task(9, n=60)
    run = run_mizo(srcs, y, rounds=10, config=MizoConfig(seed=9, active=False))
    assert len(run.state.accepted_mi) == 10
    assert np.array_equal(run.state.theta, np.full(3, 1 / 3))
