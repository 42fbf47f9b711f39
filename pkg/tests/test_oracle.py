import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nfl_backreach.backreach import BackreachResult, breach_lp
from nfl_backreach.dynamics import LinearSystem, rollout_batch
from nfl_backreach.geometry import HyperRectangle, RectUnion
from nfl_backreach.oracle import (
    UndefinedError,
    approx_error,
    mc_true_bp,
    soundness_audit,
    step_errors,
)

from .conftest import zero_policy

DI_TARGET = HyperRectangle([4.5, -0.25], [5.0, 0.25])
STATIC = LinearSystem(np.eye(2), np.eye(2), np.zeros(2), [-1.0, -1.0], [1.0, 1.0])


@pytest.fixture(scope="module")
def di_result(di, di_policy):
    return breach_lp(di, di_policy, DI_TARGET, 5, [4, 4])


def test_approx_error_examples():
    assert approx_error(1.0, 1.0) == 0.0
    assert approx_error(1.0, 22.96) == pytest.approx(21.96)
    assert approx_error(2.0, 3.0) == 0.5


def test_approx_error_undefined():
    with pytest.raises(UndefinedError):
        approx_error(0.0, 1.0)


@given(st.floats(1e-3, 1e3), st.floats(0, 1e3), st.floats(1e-3, 1e3))
def test_approx_error_scale_invariant(a, b, k):
    assert approx_error(k * a, k * b) == pytest.approx(approx_error(a, b), rel=1e-9, abs=1e-9)


def test_zero_policy_truth_is_target():
    target = HyperRectangle([-1.0, -1.0], [1.0, 1.0])
    region = HyperRectangle([-2.0, -2.0], [2.0, 2.0])
    est = mc_true_bp(STATIC, zero_policy(2, 2), target, 3, sample_region=region, n_samples=40_000, seed=0)
    for r in est.rects:
        # the sampled hull approaches target ∩ region from inside
        assert target.contains_rect(r, tol=0.0)
        np.testing.assert_allclose(r.lo, target.lo, atol=0.05)
        np.testing.assert_allclose(r.hi, target.hi, atol=0.05)
    assert est.hits[0] == est.hits[1] == est.hits[3]


def test_deterministic(di, di_policy):
    a = mc_true_bp(di, di_policy, DI_TARGET, 3, n_samples=20_000, seed=5)
    b = mc_true_bp(di, di_policy, DI_TARGET, 3, n_samples=20_000, seed=5)
    assert a.rects == b.rects and a.hits == b.hits


def test_invariants(di, di_policy):
    est = mc_true_bp(di, di_policy, DI_TARGET, 5, n_samples=30_000, seed=1)
    assert all(h <= est.n_samples for h in est.hits)
    # independently recount hits and check the rectangles are tight around them
    X = est.region.sample(np.random.default_rng(1), 30_000)
    traj = rollout_batch(di, di_policy, X, 5)
    for t in range(6):
        m = DI_TARGET.contains_points(traj[t], tol=0.0)
        assert m.sum() == est.hits[t]
        if m.any():
            assert np.array_equal(est.rects[t].lo, X[m].min(axis=0))
            assert np.array_equal(est.rects[t].hi, X[m].max(axis=0))


def test_monotone_in_samples(di, di_policy):
    small = mc_true_bp(di, di_policy, DI_TARGET, 5, n_samples=20_000, seed=2)
    large = mc_true_bp(di, di_policy, DI_TARGET, 5, n_samples=120_000, seed=2)
    for a, b in zip(small.rects, large.rects):
        if a is not None:
            assert b.contains_rect(a, tol=0.0)
    assert all(x <= y for x, y in zip(small.hits, large.hits))


def test_first_attribution_counts_fewer():
    target = HyperRectangle([-1.0, -1.0], [1.0, 1.0])
    region = HyperRectangle([-2.0, -2.0], [2.0, 2.0])
    every = mc_true_bp(STATIC, zero_policy(2, 2), target, 3, region, 10_000, seed=0)
    first = mc_true_bp(STATIC, zero_policy(2, 2), target, 3, region, 10_000, seed=0, attribution="first")
    assert first.hits[1] == every.hits[1]
    assert first.hits[2] == first.hits[3] == 0
    assert first.rects[2] is None


def test_bad_arguments(di, di_policy):
    with pytest.raises(ValueError):
        mc_true_bp(di, di_policy, DI_TARGET, 2, n_samples=0)
    with pytest.raises(ValueError):
        mc_true_bp(di, di_policy, DI_TARGET, 2, n_samples=10, attribution="last")


def test_sound_result_has_no_violations(di, di_policy, di_result):
    rep = soundness_audit(di_result, di, di_policy, DI_TARGET, n_samples=100_000, seed=0)
    assert rep.sound and rep.violations == 0
    assert rep.hits_checked > 100


def test_cross_module_soundness(di, di_policy, di_result):
    est = mc_true_bp(di, di_policy, DI_TARGET, 5, n_samples=100_000, seed=8)
    for t in range(1, 6):
        if est.rects[t] is not None:
            assert di_result.hulls[t].contains_rect(est.rects[t])
    errs = step_errors(di_result, est)
    assert errs[0] is not None
    assert all(e is None or e >= -1e-9 for e in errs[1:])


def _shrunk(result, t):
    hulls = list(result.hulls)
    h = hulls[t]
    mid = h.center
    # halve along the first axis
    half = HyperRectangle(h.lo, np.array([mid[0], h.hi[1]]))
    sets = list(result.bp_sets)
    sets[t] = RectUnion((half,))
    hulls[t] = half
    return BackreachResult(result.algorithm, sets, hulls, result.omega, result.lp_solves)


def test_shrunken_hull_detected(di, di_policy, di_result):
    rep = soundness_audit(_shrunk(di_result, 3), di, di_policy, DI_TARGET, n_samples=100_000, seed=0)
    assert rep.violations >= 1
    assert all(t == 3 for t, _ in rep.violating_states)
    assert len(rep.violating_states) <= 100


def test_empty_sets_detected(di, di_policy, di_result):
    empty = BackreachResult("breach", [di_result.bp_sets[0]] + [RectUnion()] * 5, [DI_TARGET] + [None] * 5,
                            [None] * 5, 0)
    rep = soundness_audit(empty, di, di_policy, DI_TARGET, n_samples=50_000, seed=0)
    assert rep.violations == rep.hits_checked > 0


def test_audit_report_serializes(di, di_policy, di_result):
    rep = soundness_audit(di_result, di, di_policy, DI_TARGET, n_samples=1000, seed=3)
    d = rep.to_dict()
    assert d["seed"] == 3 and d["n_samples"] == 1000 and d["violations"] == 0
