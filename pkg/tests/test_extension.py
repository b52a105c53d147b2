import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fracmono.domain import conductivity_from_values, make_conductivity
from fracmono.errors import ValidationError
from fracmono.exterior import build_fractional_matrix, solve_exterior
from fracmono.extension import (
    ExtensionSolver,
    build_ymesh,
    d_s_constant,
    default_height,
    dirichlet_energy,
    energy,
    energy_identity_check,
    gradient_form,
    neumann_trace,
    solve_extension,
)
from fracmono.spectral import assemble_operator, fractional_apply, spectral_decompose

from conftest import partition_1d


# ---------------------------------------------------------------- mesh


def test_uniform_mesh_at_half():
    m = build_ymesh(0.5, 32, 3.0, grading=1.0)
    np.testing.assert_allclose(np.diff(m.nodes), 3.0 / 32, rtol=1e-13)
    np.testing.assert_allclose(m.weights, np.diff(m.nodes), rtol=1e-13)


def test_weights_telescope():
    m = build_ymesh(0.25, 64, 4.0)
    assert m.weights.sum() == pytest.approx(4.0**1.5 / 1.5, abs=1e-12)


def test_first_node():
    m = build_ymesh(0.75, 32, 2.0, grading=2.0)
    assert m.nodes[1] == 0.001953125
    assert build_ymesh(0.75, 32, 2.0).grading == pytest.approx(2.0)


@pytest.mark.parametrize("kw", [dict(s=1.2), dict(M=8), dict(Y=0.0), dict(grading=0.5)])
def test_mesh_rejects_bad_parameters(kw):
    args = dict(s=0.5, M=32, Y=1.0) | kw
    with pytest.raises(ValidationError):
        build_ymesh(**args)


@given(s=st.floats(0.05, 0.95), M=st.integers(16, 200), Y=st.floats(0.5, 20))
def test_mesh_invariants(s, M, Y):
    m = build_ymesh(s, M, Y)
    assert m.nodes[0] == 0.0 and m.nodes[-1] == pytest.approx(Y)
    assert np.all(np.diff(m.nodes) > 0)
    assert np.all(m.weights > 0) and np.all(m.conductances > 0)
    assert m.weights.sum() == pytest.approx(Y ** (2 - 2 * s) / (2 - 2 * s), rel=1e-10)


# ---------------------------------------------------------------- constant


def test_d_s_values():
    assert d_s_constant(0.5) == pytest.approx(1.0, abs=1e-15)
    assert d_s_constant(0.25) == pytest.approx(0.47799, abs=5e-6)
    assert all(d_s_constant(s) > 0 for s in np.arange(0.1, 0.95, 0.1))


# ---------------------------------------------------------------- solver


@pytest.fixture(scope="module")
def setup_1d():
    p = partition_1d()
    sig = make_conductivity(p, 1.0, [(p.omega[8:14], 1.8)])
    return p, sig


def test_zero_data_zero_field(setup_1d):
    p, sig = setup_1d
    m = build_ymesh(0.5, 32, default_height(p))
    field = solve_extension(sig, p, m, np.zeros(8))
    np.testing.assert_array_equal(field.values, 0.0)
    np.testing.assert_array_equal(neumann_trace(field, m), 0.0)
    assert energy(field, m, p, p.omega).value == 0.0


def test_field_linearity(setup_1d, rng):
    p, sig = setup_1d
    m = build_ymesh(0.3, 48, default_height(p))
    solver = ExtensionSolver(sig, p, m)
    f, g = rng.standard_normal((2, 8))
    a = solver.solve(f + g).values
    b = solver.solve(f).values + solver.solve(g).values
    assert np.linalg.norm(a - b) <= 1e-9 * np.linalg.norm(a)


def test_boundary_rows(setup_1d, rng):
    p, sig = setup_1d
    m = build_ymesh(0.5, 32, default_height(p))
    f = rng.standard_normal(8)
    field = solve_extension(sig, p, m, f)
    np.testing.assert_array_equal(field.values[0, p.window], f)
    outside = np.setdiff1d(p.exterior, p.window)
    np.testing.assert_array_equal(field.values[0, outside], 0.0)
    np.testing.assert_array_equal(field.values[-1], 0.0)


def test_window_fields_match_solves(setup_1d):
    p, sig = setup_1d
    m = build_ymesh(0.5, 32, default_height(p))
    solver = ExtensionSolver(sig, p, m)
    F = solver.window_fields()
    assert F.shape == (33, p.n_cells, 8)
    e = np.zeros(8)
    e[5] = 1.0
    np.testing.assert_allclose(F[:, :, 5], solver.solve(e).values, atol=1e-14)


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_maximum_principle(setup_1d, s):
    p, sig = setup_1d
    m = build_ymesh(s, 64, default_height(p))
    f = np.abs(np.random.default_rng(4).standard_normal(8))
    field = solve_extension(sig.with_order(s), p, m, f)
    assert field.values.min() >= -1e-10 * f.max()


def test_trace_matches_exterior_solution_small():
    from conftest import partition_small

    p = partition_small()
    sig = make_conductivity(p)
    m = build_ymesh(0.5, 32, default_height(p))
    S = spectral_decompose(assemble_operator(p, sig))
    f = np.array([1.0, 0.0])
    u = solve_exterior(build_fractional_matrix(S, p, 0.5), f)
    field = solve_extension(sig, p, m, f)
    err = np.linalg.norm(field.values[0, p.omega] - u[p.omega]) / np.linalg.norm(u[p.omega])
    assert err <= 0.05


def _trace_error(p, sig, s, M, f):
    S = spectral_decompose(assemble_operator(p, sig))
    u = solve_exterior(build_fractional_matrix(S, p, s), f)
    ref = fractional_apply(S, s, u)
    m = build_ymesh(s, M, default_height(p))
    tr = neumann_trace(solve_extension(sig.with_order(s), p, m, f), m) / d_s_constant(s)
    return np.linalg.norm(tr[p.window] - ref[p.window]) / np.linalg.norm(ref[p.window]), tr, ref


def test_trace_consistency_half():
    p = partition_1d()
    f = np.random.default_rng(0).standard_normal(8)
    err, tr, _ = _trace_error(p, make_conductivity(p), 0.5, 256, f)
    assert err <= 0.05
    # the Neumann condition on the domain holds to discretization accuracy
    assert np.abs(tr[p.omega]).max() <= 0.05 * np.abs(tr[p.window]).max()


def test_trace_error_decreases_with_refinement():
    p = partition_1d()
    sig = make_conductivity(p, 1.0, [(p.omega[8:14], 1.8)])
    f = np.random.default_rng(0).standard_normal(8)
    for s in (0.25, 0.75):
        errs = [_trace_error(p, sig, s, M, f)[0] for M in (64, 128, 256)]
        assert errs[0] > errs[1] > errs[2]


def test_y_doubling_stability(setup_1d):
    p, sig = setup_1d
    f = np.random.default_rng(2).standard_normal(8)
    for s in (0.25, 0.5, 0.75):
        Y = default_height(p)
        traces = []
        for height in (Y, 2 * Y):
            m = build_ymesh(s, 256, height)
            traces.append(neumann_trace(solve_extension(sig.with_order(s), p, m, f), m)[p.window])
        assert np.linalg.norm(traces[1] - traces[0]) / np.linalg.norm(traces[0]) <= 0.02


# ---------------------------------------------------------------- energies


def test_gradient_form_matches_operator(rng):
    from fracmono.domain import Box, Geometry, GridSpec, build_partition

    p = build_partition(
        GridSpec(2, 16, 1.0), Geometry(omega=Box((-0.5, -0.5), (0.5, 0.5)), window=Box((0.75, -0.25), (1.0, 0.25)))
    )
    sig = conductivity_from_values(p, rng.uniform(0.5, 2.0, p.omega.size))
    Q = gradient_form(p, sig.values).toarray()
    L = assemble_operator(p, sig).toarray()
    assert np.abs(Q - L).max() <= 1e-12 * np.abs(L).max()


def test_energy_additive_and_linear(setup_1d, rng):
    p, sig = setup_1d
    m = build_ymesh(0.5, 32, default_height(p))
    field = solve_extension(sig, p, m, rng.standard_normal(8))
    A, B = p.omega[:12], p.omega[12:]
    whole = energy(field, m, p, p.omega).value
    assert energy(field, m, p, A).value + energy(field, m, p, B).value == pytest.approx(whole, rel=1e-12)
    assert energy(field, m, p, p.omega, 0.0).value == 0.0
    assert energy(field, m, p, p.omega, 3.0).value == pytest.approx(3 * whole, rel=1e-13)


def test_energy_identity_at_half(setup_1d, rng):
    p, sig = setup_1d
    m = build_ymesh(0.5, 128, default_height(p))
    check = energy_identity_check(sig, p, m, rng.standard_normal(8))
    assert check.gap <= 0.10
    zero = energy_identity_check(sig, p, m, np.zeros(8))
    assert zero.lhs == zero.rhs == 0.0


def test_dirichlet_energy_positive(setup_1d, rng):
    p, sig = setup_1d
    m = build_ymesh(0.25, 64, default_height(p))
    field = solve_extension(sig.with_order(0.25), p, m, rng.standard_normal(8))
    assert dirichlet_energy(field, m, p, sig) > 0


def test_identity_gap_decreases_under_joint_refinement():
    f_fine = None
    gaps = []
    for N, M in ((32, 64), (64, 128), (128, 256)):
        p = partition_1d(N)
        sig = make_conductivity(p)
        if f_fine is None:
            f_fine = np.random.default_rng(0).standard_normal(4)
        # same profile sampled at each resolution
        f = np.repeat(f_fine, p.window.size // 4)
        m = build_ymesh(0.25, M, default_height(p))
        gaps.append(energy_identity_check(sig.with_order(0.25), p, m, f).gap)
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[-1] <= 0.10
