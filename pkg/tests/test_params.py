import io
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hybridloc.errors import ConfigurationError
from hybridloc.measurement import Dataset, NoiseParams, synthesize_dataset
from hybridloc.params import (EstimationConfig, ParamAccumulators, _Direction, _Scalar, current_estimates,
                              kappa_estimate, params_from_estimates, residual_update, run_parameter_free,
                              velocity_from_history)
from hybridloc.scenarios import make_scenario
from hybridloc.solver import SolverConfig
from hybridloc.tracking import ConvexTracker


def two_node_dataset(tick, d, r=None, u=None, speeds=None, headings=None):
    return Dataset(dim=2, n_nodes=2, tick=tick, dt=1.0, anchors=np.array([[0.0, 5.0]]),
                   ranges={(0, 1): d}, anchor_ranges={} if r is None else {(0, 0): r},
                   bearings={} if u is None else {(0, 1): np.asarray(u, dtype=float)},
                   speeds=speeds, headings=headings)


TRUTH = np.array([[0.0, 0.0], [3.0, 4.0]])


def test_kappa_closed_form_example():
    assert kappa_estimate(0.5, 3) == pytest.approx(float(Fraction(11, 6)), rel=1e-15)
    assert kappa_estimate(0.0, 2) == 0.0
    assert kappa_estimate(1.0, 2) == math.inf
    with pytest.raises(ValueError, match="domain"):
        kappa_estimate(1.5, 2)


@given(st.floats(0.001, 0.998), st.floats(0.0005, 0.001), st.sampled_from([2, 3]))
def test_kappa_is_increasing(g, dg, p):
    assert kappa_estimate(g + dg, p) > kappa_estimate(g, p)


def test_constant_residual_gives_its_square():
    acc = ParamAccumulators(2)
    for t in range(12):
        residual_update(acc, TRUTH, two_node_dataset(t, 5.0 + 0.3))
    assert acc.ranges[(0, 1)].sigma() ** 2 == pytest.approx(0.09, rel=1e-12)
    assert acc.ranges[(0, 1)].count == 12


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=50), st.randoms())
def test_variance_is_order_independent(res, rnd):
    a, b = _Scalar(), _Scalar()
    shuffled = list(res)
    rnd.shuffle(shuffled)
    for r in res:
        a.add(r)
    for r in shuffled:
        b.add(r)
    assert a.sigma() ** 2 == pytest.approx(b.sigma() ** 2, rel=1e-12, abs=1e-300)


def test_range_std_recovered_from_perfect_estimates():
    sc = make_scenario("lap")
    rng = np.random.default_rng(4)
    acc = ParamAccumulators(2)
    for k in range(1000):
        t = k % sc.ticks
        ds = synthesize_dataset(sc.snapshot(t), sc.velocities[t], NoiseParams(range_std=0.5), sc.dt, rng)
        residual_update(acc, sc.nodes[t], ds)
    sig = acc.ranges[(0, 1)].sigma()
    assert 0.45 <= sig <= 0.55


def test_lagged_velocity_is_exact_for_linear_and_quadratic_motion():
    c = np.array([0.7, -1.3])
    t = 12
    linear = [c * tau for tau in range(t)]
    np.testing.assert_allclose(velocity_from_history(linear), c, rtol=1e-14)
    quad = [np.array([float(tau) ** 2]) for tau in range(t)]
    assert velocity_from_history(quad)[0] == pytest.approx(2 * (t - 4), rel=1e-14)
    assert velocity_from_history(quad[:6]) is None


def test_velocity_residuals_start_after_warmup():
    acc = ParamAccumulators(2)
    for t in range(7):
        residual_update(acc, TRUTH + t, two_node_dataset(t, 5.0, speeds=np.ones(2), headings=np.ones((2, 2)) / math.sqrt(2)))
    assert acc.t == 7 and not acc.speeds
    residual_update(acc, TRUTH + 7, two_node_dataset(7, 5.0, speeds=np.ones(2), headings=np.ones((2, 2)) / math.sqrt(2)))
    assert acc.speeds[0].count == 1
    # unit diagonal motion: step sqrt(2) estimated, 1 measured
    assert acc.speeds[0].total == pytest.approx((1 - math.sqrt(2)) ** 2)


def test_perfectly_aligned_directions_clamp_at_cap():
    acc = ParamAccumulators(2)
    u = (TRUTH[0] - TRUTH[1]) / 5.0
    for t in range(20):
        residual_update(acc, TRUTH, two_node_dataset(t, 5.0, u=u))
    est = current_estimates(acc, EstimationConfig())[("bearing", (0, 1))]
    assert est.value == 1e6 and est.clamped and est.samples == 20


def test_zero_direction_residual_is_skipped_in_normalized_mode():
    acc = ParamAccumulators(2)
    u = (TRUTH[0] - TRUTH[1]) / 5.0
    residual_update(acc, TRUTH, two_node_dataset(0, 5.0, u=u), directions="normalized")
    assert (0, 1) not in acc.bearings
    residual_update(acc, TRUTH, two_node_dataset(1, 5.0, u=[1.0, 0.0]), directions="normalized")
    assert acc.bearings[(0, 1)].count == 1


@given(st.integers(0, 2**31), st.sampled_from(["aligned", "normalized"]))
def test_direction_sums_are_bounded_by_count(seed, mode):
    rng = np.random.default_rng(seed)
    acc = ParamAccumulators(2)
    for t in range(15):
        u = rng.normal(size=2)
        residual_update(acc, TRUTH + rng.normal(0, 0.5, (2, 2)), two_node_dataset(t, 5.0, u=u / np.linalg.norm(u)),
                        directions=mode)
    for d in acc.bearings.values():
        assert np.linalg.norm(d.vec) <= d.count + 1e-12
        assert d.count <= acc.t


def test_warmup_uses_defaults_then_estimates():
    cfg = EstimationConfig()
    defaults = NoiseParams()
    acc = ParamAccumulators(2)
    for t in range(7):
        residual_update(acc, TRUTH, two_node_dataset(t, 5.4))
    # 7 ticks: still warming up even with samples accumulating
    p = params_from_estimates(current_estimates(acc, cfg), defaults, acc, cfg)
    assert p.sigma(0, 1) == defaults.range_std
    for t in range(7, 10):
        residual_update(acc, TRUTH, two_node_dataset(t, 5.4))
    p = params_from_estimates(current_estimates(acc, cfg), defaults, acc, cfg)
    assert p.sigma(0, 1) == pytest.approx(0.4)


def test_sigma_floor_and_kappa_floor():
    cfg = EstimationConfig(sigma_floor=0.01)
    acc = ParamAccumulators(2)
    for t in range(12):
        residual_update(acc, TRUTH, two_node_dataset(t, 5.0))
    est = current_estimates(acc, cfg)[("range", (0, 1))]
    assert est.value == 0.01 and est.clamped
    d = _Direction(np.zeros(2), 3)
    acc.bearings[(0, 1)] = d
    est = current_estimates(acc, cfg)[("bearing", (0, 1))]
    assert est.value == cfg.kappa_floor and est.clamped


def test_config_validation():
    for bad in (dict(sigma_floor=0.0), dict(kappa_floor=2e6), dict(directions="raw"),
                dict(velocity_reference="future"), dict(min_samples=0)):
        with pytest.raises(ConfigurationError):
            EstimationConfig(**bad)
    with pytest.raises(ConfigurationError):
        run_parameter_free([two_node_dataset(0, 5.0)], NoiseParams(range_std=None))


def test_noiseless_run_matches_known_parameters():
    sc = make_scenario("lawnmower")
    rng = np.random.default_rng(9)
    # kappa 1e24 keeps the von Mises angle noise far below the tolerance
    exact = NoiseParams(1e-14, 1e-14, 1e24, 1e24, 1e-14, 1e24)
    data = [synthesize_dataset(sc.snapshot(t), sc.velocities[t], exact, sc.dt, rng) for t in range(40)]
    defaults = NoiseParams()
    cfg = EstimationConfig()
    # floored STDs make L huge, so the default relative-step rule would stop
    # after a step or two; solve tightly to compare the minimizers themselves
    solver = SolverConfig(max_iter=20000, tol=1e-12)
    pf = run_parameter_free(data, defaults, window=5, solver=solver, config=cfg)
    tracker = ConvexTracker(5, solver)
    known = np.array([tracker.step(ds, defaults).positions for ds in data])
    mne_pf = np.linalg.norm(pf.positions - sc.nodes[:40], axis=2).mean(axis=1)
    mne_known = np.linalg.norm(known - sc.nodes[:40], axis=2).mean(axis=1)
    np.testing.assert_allclose(mne_pf, mne_known, atol=1e-6)
    for row in pf.trace:
        if not math.isnan(row.sigma):
            assert cfg.sigma_floor <= row.sigma
        if not math.isnan(row.kappa):
            assert cfg.kappa_floor <= row.kappa <= cfg.kappa_cap
    buf = io.StringIO()
    pf.write_trace(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "tick,kind,id,sigma,kappa,clamped,samples"
    assert len(lines) == len(pf.trace) + 1
