import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import exact_datasets, make_window
from hybridloc.errors import DegenerateGeometryError, DegenerateMeasurementError
from hybridloc.measurement import NoiseParams
from hybridloc.problem import WindowData, assemble, best_auxiliary, gradient, mle_cost, relaxed_cost


def mle_transcription(x, win, params):
    """Independent term-by-term maximum-likelihood cost with explicit loops over ids."""
    topo = win.topology
    T = x.shape[0]
    cost = 0.0
    d_of = {e: k for k, e in enumerate(topo.range_edges)}
    r_of = {e: k for k, e in enumerate(topo.anchor_ranges)}
    for t in range(T):
        for (i, j), k in d_of.items():
            dist = np.sqrt(np.sum((x[t, i] - x[t, j]) ** 2))
            cost += (dist - win.d[t, k]) ** 2 / (2 * params.sigma(i, j) ** 2)
            if (i, j) in topo.bearing_edges and win.d[t, k] > 0:
                cost -= params.kappa(i, j) * np.dot(win.u[t, k], (x[t, i] - x[t, j]) / dist)
        for (i, a), k in r_of.items():
            dist = np.sqrt(np.sum((x[t, i] - win.alpha[t, k]) ** 2))
            cost += (dist - win.r[t, k]) ** 2 / (2 * params.varsigma(i, a) ** 2)
            if (i, a) in topo.anchor_bearings and win.r[t, k] > 0:
                cost -= params.lam(i, a) * np.dot(win.q[t, k], (x[t, i] - win.alpha[t, k]) / dist)
    for t in range(1, T):
        for i in range(x.shape[1]):
            step = x[t, i] - x[t - 1, i]
            dist = np.sqrt(np.sum(step**2))
            cost += (dist - win.step[t, i]) ** 2 / (2 * params.sigma_v(i) ** 2)
            if win.step[t, i] > 0:
                cost -= params.kappa_v(i) * np.dot(win.heading[t, i], step / dist)
    return cost


def test_dense_matches_operator_and_is_symmetric_psd(small_problem, rng):
    _, _, form, _, _ = small_problem
    M = form.dense()
    assert form.layout.size <= 500
    assert np.abs(M - M.T).max() <= 1e-10
    assert np.linalg.eigvalsh(M)[0] >= -1e-9
    for _ in range(5):
        z = rng.normal(size=form.layout.size)
        np.testing.assert_allclose(form.apply(z), M @ z, rtol=0, atol=1e-12 * max(1.0, np.abs(M @ z).max()))
        assert z @ form.apply(z) >= 0


def test_relaxed_cost_is_quadratic_form_plus_constant(small_problem, rng):
    win, params, form, _, _ = small_problem
    c0 = relaxed_cost(np.zeros(form.layout.size), win, params)
    assert c0 == pytest.approx(form.constant, rel=1e-12)
    M = form.dense()
    for _ in range(5):
        z = rng.normal(0, 3, form.layout.size)
        quad = 0.5 * z @ M @ z - form.b @ z
        assert relaxed_cost(z, win, params) - c0 == pytest.approx(quad, rel=1e-10, abs=1e-10)


def test_single_node_single_anchor_block():
    data = exact_datasets([[[1.0, 2.0]]], [[0.0, 0.0]], bearings="none")
    win = WindowData.from_datasets(data)
    form, cons = assemble(win, NoiseParams(1.0, 1.0, 1.0, 1.0, 1.0, 1.0))
    expected = np.kron(np.array([[1.0, -1.0], [-1.0, 1.0]]), np.eye(2))
    np.testing.assert_array_equal(form.dense(), expected)
    assert form.layout.sizes == (2, 0, 2, 0)


def test_no_anchors_zero_b1_and_single_tick_has_no_velocity_block(rng):
    data = exact_datasets([rng.uniform(0, 5, (3, 2))], np.zeros((0, 2)))
    form, cons = assemble(WindowData.from_datasets(data), NoiseParams())
    x_part = form.layout.split(form.b)[0]
    assert np.all(x_part == 0)
    assert form.layout.sizes[3] == 0 and cons.s.size == 0


def test_gradient_examples(small_problem, rng):
    _, _, form, _, _ = small_problem
    np.testing.assert_array_equal(gradient(form, np.zeros(form.layout.size)), -form.b)
    z0 = rng.normal(size=form.layout.size)
    shifted = dataclasses.replace(form, b=form.apply(z0))
    np.testing.assert_array_equal(gradient(shifted, z0), np.zeros_like(z0))


def test_gradient_matches_central_differences(rng):
    for k in range(5):
        win, params, _ = make_window(rng, n=3, m=2, window=1 + k % 3)
        form, _ = assemble(win, params)
        z = rng.normal(0, 2, form.layout.size)
        h = 1e-5 * max(1.0, np.abs(z).max())
        fd = np.array([(relaxed_cost(z + h * e, win, params) - relaxed_cost(z - h * e, win, params)) / (2 * h)
                       for e in np.eye(z.size)])
        g = gradient(form, z)
        assert np.linalg.norm(g - fd) <= 1e-6 * np.linalg.norm(fd)


def test_mle_cost_at_truth_with_exact_data(rng):
    pos = rng.uniform(0, 10, (4, 2))
    anc = rng.uniform(0, 10, (2, 2))
    params = NoiseParams(0.5, 0.7, 300.0, 400.0, 0.2, 500.0)
    win = WindowData.from_datasets(exact_datasets([pos], anc))
    n_b, n_ab = len(win.topology.bearing_edges), len(win.topology.anchor_bearings)
    assert mle_cost(pos[None], win, params) == pytest.approx(-(300.0 * n_b + 400.0 * n_ab), abs=1e-9)


def test_mle_single_edge_distance_term():
    data = exact_datasets([[[0.0, 0.0], [1.0, 0.0]]], np.zeros((0, 2)), bearings="none")
    win = WindowData.from_datasets(data)
    x = np.array([[[0.0, 0.0], [2.0, 0.0]]])
    assert mle_cost(x, win, NoiseParams(1.0)) == pytest.approx(0.5)


def test_mle_matches_transcription(rng):
    for window in (1, 3):
        win, params, truth = make_window(rng, n=4, m=2, window=window, bearings=lambda e: (e[0] + e[1]) % 2 == 1)
        x = truth + rng.normal(0, 0.5, truth.shape)
        assert mle_cost(x, win, params) == pytest.approx(mle_transcription(x, win, params), rel=1e-12, abs=1e-12)


def test_mle_degenerate_geometry():
    win = WindowData.from_datasets(exact_datasets([[[0.0, 0.0], [1.0, 0.0]]], np.zeros((0, 2))))
    with pytest.raises(DegenerateGeometryError, match="degenerate geometry"):
        mle_cost(np.zeros((1, 2, 2)), win, NoiseParams())


def test_relaxed_cost_with_exact_auxiliaries(rng):
    pos = rng.uniform(0, 10, (3, 2))
    params = NoiseParams(0.5, 0.5, 200.0, 300.0)
    win = WindowData.from_datasets(exact_datasets([pos], np.zeros((0, 2))))
    form, _ = assemble(win, params)
    y = win.layout.split(np.zeros(win.layout.size))[1].copy()
    for e, (i, j) in enumerate(win.topology.range_edges):
        y[0, e] = pos[i] - pos[j]
    z = win.layout.join(pos[None], y, np.zeros((1, 0, 2)), np.zeros((0, 3, 2)))
    assert relaxed_cost(z, win, params) == pytest.approx(-200.0 * len(win.topology.range_edges), rel=1e-12)


def test_zero_range_with_bearing():
    data = exact_datasets([[[0.0, 0.0], [1.0, 0.0]]], [[0.0, 1.0]])
    data[0].ranges[(0, 1)] = 0.0
    win = WindowData.from_datasets(data)
    form, cons = assemble(win, NoiseParams())
    assert cons.y[0, 0] == 0.0
    assert np.all(form.layout.split(form.b)[1][0, 0] == 0.0)
    with pytest.raises(DegenerateMeasurementError):
        assemble(win, NoiseParams(), strict=True)


def test_doubling_kappa_doubles_only_its_block(rng):
    win, _, _ = make_window(rng, n=3, m=1, window=2)
    base = NoiseParams(0.3, 0.4, 500, 600, 0.1, 800)
    edge = win.topology.range_edges[0]
    doubled = dataclasses.replace(base, edge_bearing_kappa={edge: 1000.0})
    b0 = assemble(win, base)[0].b
    b1 = assemble(win, doubled)[0].b
    lay = win.layout
    y0, y1 = lay.split(b0)[1], lay.split(b1)[1]
    np.testing.assert_array_equal(y1[:, 0], 2 * y0[:, 0])
    rest = np.ones(lay.window * lay.n_edges, dtype=bool).reshape(lay.window, lay.n_edges)
    rest[:, 0] = False
    np.testing.assert_array_equal(y1[rest], y0[rest])
    # x, w and s parts are untouched
    for k in (0, 2, 3):
        np.testing.assert_array_equal(lay.split(b0)[k], lay.split(b1)[k])


@given(st.integers(0, 2**31), st.floats(0, 1))
def test_relaxed_cost_is_convex(seed, theta):
    rng = np.random.default_rng(seed)
    win, params, _ = make_window(rng, n=3, m=1, window=2)
    z1, z2 = rng.normal(0, 5, (2, win.layout.size))
    lhs = relaxed_cost(theta * z1 + (1 - theta) * z2, win, params)
    rhs = theta * relaxed_cost(z1, win, params) + (1 - theta) * relaxed_cost(z2, win, params)
    assert lhs <= rhs + 1e-9 * max(1.0, abs(rhs))


def test_lower_bound_with_zero_measured_step():
    # seed where a clipped speed measurement gives a zero step for node 1
    rng = np.random.default_rng(794703)
    win, params, truth = make_window(rng, n=3, m=2, window=2)
    assert win.step[1, 1] == 0
    form, cons = assemble(win, params)
    x = truth + rng.normal(0, 0.3, truth.shape)
    z = best_auxiliary(x, form, cons)
    assert relaxed_cost(z, win, params) <= mle_cost(x, win, params) + 1e-9 * abs(mle_cost(x, win, params))


@given(st.integers(0, 2**31))
def test_relaxation_lower_bounds_mle(seed):
    rng = np.random.default_rng(seed)
    win, params, truth = make_window(rng, n=3, m=2, window=2)
    form, cons = assemble(win, params)
    x = truth + rng.normal(0, 0.3, truth.shape)
    z = best_auxiliary(x, form, cons)
    assert relaxed_cost(z, win, params) <= mle_cost(x, win, params) + 1e-9 * max(1.0, abs(mle_cost(x, win, params)))
