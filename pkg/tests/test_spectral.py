import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import gamma

from fracmono.domain import conductivity_from_values, make_conductivity
from fracmono.errors import NumericalError, ValidationError
from fracmono.spectral import (
    QuadratureSpec,
    absorption_weights,
    assemble_operator,
    bilinear_form,
    continuum_kernel_constant,
    default_quadrature,
    fractional_apply,
    fractional_matrix,
    heat_apply,
    heat_kernel,
    kernel_assemble,
    semigroup_fractional_apply,
    spectral_decompose,
    stencil_matrix,
)

from conftest import partition_1d

TWO_BY_TWO = np.array([[2.0, -1.0], [-1.0, 2.0]])


def unit_operator(n=64, half_width=1.0):
    h = 2 * half_width / n
    return spectral_decompose(stencil_matrix(np.ones(n), (n,), h), spacing=h, cell_volume=h)


# ---------------------------------------------------------------- stencil


def test_two_unknown_stencil():
    np.testing.assert_array_equal(stencil_matrix(np.ones(2), (2,), 1.0).toarray(), TWO_BY_TWO)


def test_stencil_homogeneous_in_sigma():
    a = stencil_matrix(np.ones(5), (5,), 1.0).toarray()
    b = stencil_matrix(2 * np.ones(5), (5,), 1.0).toarray()
    np.testing.assert_array_equal(b, 2 * a)


def test_harmonic_faces_three_cells():
    sig = np.array([1.0, 2.0, 1.0])
    hm = 2 * 1 * 2 / (1 + 2)  # 4/3
    expect = np.array([[1 + hm, -hm, 0], [-hm, 2 * hm, -hm], [0, -hm, 1 + hm]])
    np.testing.assert_allclose(stencil_matrix(sig, (3,), 1.0, "harmonic").toarray(), expect, rtol=1e-15)


def test_arithmetic_faces_three_cells():
    expect = np.array([[2.5, -1.5, 0], [-1.5, 3.0, -1.5], [0, -1.5, 2.5]])
    np.testing.assert_allclose(stencil_matrix(np.array([1.0, 2.0, 1.0]), (3,), 1.0).toarray(), expect)


def test_unit_stencil_2d_five_point():
    A = stencil_matrix(np.ones(16), (4, 4), 0.5).toarray()
    assert A[5, 5] == pytest.approx(4 / 0.25)
    assert A[5, 6] == A[5, 9] == pytest.approx(-1 / 0.25)
    assert A[5, 10] == 0.0
    np.testing.assert_array_equal(A, A.T)


def test_assemble_operator_spd(p1d, rng):
    sig = conductivity_from_values(p1d, rng.uniform(0.5, 2.0, 32))
    L = assemble_operator(p1d, sig).toarray()
    np.testing.assert_array_equal(L, L.T)
    assert np.linalg.eigvalsh(L)[0] > 0


# ---------------------------------------------------------------- spectral


def test_two_by_two_eigenpairs():
    S = spectral_decompose(TWO_BY_TWO)
    np.testing.assert_allclose(S.eigenvalues, [1.0, 3.0], rtol=1e-14)
    V = S.eigenvectors * np.sign(S.eigenvectors[0])
    np.testing.assert_allclose(V, np.array([[1, 1], [1, -1]]) / np.sqrt(2), atol=1e-14)


def test_diagonal_eigenpairs():
    S = spectral_decompose(np.diag([4.0, 9.0]))
    np.testing.assert_array_equal(S.eigenvalues, [4.0, 9.0])
    np.testing.assert_array_equal(np.abs(S.eigenvectors), np.eye(2))


def test_dirichlet_laplacian_spectrum():
    S = spectral_decompose(stencil_matrix(np.ones(64), (64,), 1.0))
    k = np.arange(1, 65)
    np.testing.assert_allclose(S.eigenvalues, 2 - 2 * np.cos(k * np.pi / 65), rtol=1e-12, atol=1e-14)


def test_eigen_residual(p1d, rng):
    L = assemble_operator(p1d, conductivity_from_values(p1d, rng.uniform(0.5, 2.0, 32))).toarray()
    S = spectral_decompose(L)
    resid = np.abs(L @ S.eigenvectors - S.eigenvectors * S.eigenvalues).max()
    assert resid <= 1e-8 * S.eigenvalues[-1]


def test_decompose_rejects_bad_input():
    with pytest.raises(ValidationError):
        spectral_decompose(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(NumericalError, match="positive definite"):
        spectral_decompose(np.array([[1.0, 0.0], [0.0, -1.0]]))


# ---------------------------------------------------------------- semigroup


def test_heat_identity_and_eigenvector():
    S = spectral_decompose(TWO_BY_TWO)
    v = np.array([0.3, -1.2])
    np.testing.assert_allclose(heat_apply(S, 0.0, v), v, atol=1e-15)
    e = np.array([1.0, -1.0]) / np.sqrt(2)
    np.testing.assert_allclose(heat_apply(S, 0.7, e), np.exp(-2.1) * e, rtol=1e-13)
    with pytest.raises(ValidationError):
        heat_apply(S, -1.0, v)


def test_heat_long_time_asymptotics():
    S = spectral_decompose(TWO_BY_TWO)
    t = 20.0
    out = heat_apply(S, t, np.array([1.0, 0.0]))
    np.testing.assert_allclose(out, np.exp(-t) * np.array([0.5, 0.5]), rtol=1e-15 + 1e-12)


def test_fractional_two_by_two():
    S = spectral_decompose(TWO_BY_TWO)
    np.testing.assert_allclose(fractional_apply(S, 0.5, np.array([1.0, 1.0])), [1.0, 1.0], rtol=1e-14)
    np.testing.assert_allclose(
        fractional_apply(S, 0.5, np.array([1.0, -1.0])), [1.7320508075688772, -1.7320508075688772], rtol=1e-14
    )
    np.testing.assert_array_equal(fractional_apply(S, 0.5, np.zeros(2)), 0.0)


@pytest.mark.parametrize("s", [0.0, 1.0, -0.2, 1.5])
def test_order_outside_unit_interval_rejected(s):
    with pytest.raises(ValidationError):
        fractional_apply(spectral_decompose(TWO_BY_TWO), s, np.ones(2))


@given(s=st.floats(0.05, 0.95), seed=st.integers(0, 2**16))
def test_spectral_mapping(s, seed):
    S = unit_operator(32)
    v = np.random.default_rng(seed).standard_normal(32)
    out = fractional_apply(S, 1 - s, fractional_apply(S, s, v))
    ref = S.apply(v)
    assert np.linalg.norm(out - ref) <= 1e-8 * np.linalg.norm(ref)


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_semigroup_quadrature_matches_power(s):
    S = unit_operator(16)
    v = np.random.default_rng(0).standard_normal(16)
    quad = default_quadrature(S)
    assert quad.n_nodes == 200
    ref = fractional_apply(S, s, v)
    err = np.linalg.norm(semigroup_fractional_apply(S, s, v, quad) - ref) / np.linalg.norm(ref)
    assert err <= 1e-6


def test_quadrature_rule_integrates_exponential():
    quad = QuadratureSpec(400, 1e-8, 1e3)
    t, w = quad.nodes_weights()
    # int_0^inf e^{-t} t^{1/2} dt = Gamma(3/2), written in log t
    assert np.sum(w * t**1.5 * np.exp(-t)) == pytest.approx(gamma(1.5), rel=1e-8)
    with pytest.raises(ValidationError):
        QuadratureSpec(1, 1.0, 2.0)


def test_fractional_matrix_symmetric_and_consistent():
    S = unit_operator(32)
    A = fractional_matrix(S, 0.3)
    np.testing.assert_array_equal(A, A.T)
    v = np.linspace(-1, 1, 32)
    np.testing.assert_allclose(A @ v, fractional_apply(S, 0.3, v), atol=1e-12)
    rows = np.array([3, 7, 11])
    np.testing.assert_allclose(fractional_matrix(S, 0.3, rows), A[np.ix_(rows, rows)], atol=1e-13)


# ---------------------------------------------------------------- heat kernel bounds


@pytest.mark.parametrize("random_sigma", [False, True])
def test_gaussian_bounds_fit(random_sigma):
    p = partition_1d()
    rng = np.random.default_rng(1)
    sig = conductivity_from_values(p, rng.uniform(0.4, 2.5, 32)) if random_sigma else make_conductivity(p)
    S = spectral_decompose(assemble_operator(p, sig))
    h = p.grid.spacing
    x = p.grid.centers()[:, 0]
    mid = np.flatnonzero(np.abs(x) < 0.25)
    rows = []
    for t in np.geomspace(4 * h * h, 0.25**2, 8):
        P = heat_kernel(S, t)
        for i in mid[::4]:
            for j in mid:
                r2t = (x[i] - x[j]) ** 2 / t
                if r2t <= 16:
                    rows.append((r2t, np.log(P[i, j] * np.sqrt(t))))
    a = np.array(rows)
    design = np.column_stack([np.ones(len(a)), -a[:, 0]])
    coef = np.linalg.lstsq(design, a[:, 1], rcond=None)[0]
    resid = a[:, 1] - design @ coef
    alpha, c1, c2 = coef[1], np.exp(coef[0] + resid.min()), np.exp(coef[0] + resid.max())
    assert alpha > 0 and 0 < c1 <= c2 < np.inf
    if not random_sigma:
        # whole-line heat kernel: (4 pi t)^{-1/2} exp(-r^2 / 4t)
        assert alpha == pytest.approx(0.25, rel=0.05)
        assert c1 <= 1 / np.sqrt(4 * np.pi) <= c2


# ---------------------------------------------------------------- kernel


def test_continuum_constant():
    assert continuum_kernel_constant(1, 0.5) == pytest.approx(1 / np.pi, rel=1e-14)
    assert continuum_kernel_constant(2, 0.5) == pytest.approx(1 / (2 * np.pi), rel=1e-14)


@pytest.fixture(scope="module")
def unit_kernels():
    S = unit_operator(64)
    return S, {s: kernel_assemble(S, s) for s in (0.25, 0.5, 0.75)}


def test_kernel_symmetric_positive_zero_diagonal(unit_kernels):
    _, Ks = unit_kernels
    rng = np.random.default_rng(3)
    for K in Ks.values():
        E = K.entries
        np.testing.assert_array_equal(np.diag(E), 0.0)
        i, j = rng.integers(0, 64, (2, 100))
        np.testing.assert_allclose(E[i, j], E[j, i], rtol=0, atol=1e-12 * np.abs(E).max())
        off = ~np.eye(64, dtype=bool)
        assert np.all(E[off] > 0)
        assert K.tail_estimate <= 0.01


def test_kernel_matches_fractional_matrix(unit_kernels):
    S, Ks = unit_kernels
    for s, K in Ks.items():
        A = fractional_matrix(S, s)
        off = ~np.eye(64, dtype=bool)
        rel = np.abs(K.entries[off] + A[off] / S.cell_volume) / np.abs(A[off] / S.cell_volume)
        assert rel.max() <= 1e-4


@pytest.mark.parametrize("random_sigma", [False, True])
def test_kernel_power_law_bounds(random_sigma):
    p = partition_1d()
    rng = np.random.default_rng(1)
    sig = conductivity_from_values(p, rng.uniform(0.4, 2.5, 32)) if random_sigma else make_conductivity(p)
    S = spectral_decompose(assemble_operator(p, sig))
    x = p.grid.centers()[:, 0]
    mid = np.flatnonzero(np.abs(x) < 0.25)
    for s in (0.25, 0.5, 0.75):
        K = kernel_assemble(S, s).entries
        vals = [K[i, j] * abs(x[i] - x[j]) ** (1 + 2 * s) for i in mid for j in mid if abs(i - j) >= 2]
        assert 0 < min(vals) and max(vals) / min(vals) <= 10


def test_kernel_rejects_narrow_quadrature():
    S = unit_operator(32)
    with pytest.raises(ValidationError, match="too narrow"):
        kernel_assemble(S, 0.5, QuadratureSpec(200, 1e-2, 1.0))


def test_bilinear_form_basic(unit_kernels, rng):
    S, Ks = unit_kernels
    K = Ks[0.5]
    h = S.cell_volume
    assert bilinear_form(K, np.ones(64), np.ones(64), h) == pytest.approx(0.0, abs=1e-9)
    u, w = rng.standard_normal((2, 64))
    assert bilinear_form(K, u, w, h) == bilinear_form(K, w, u, h)
    assert bilinear_form(K, u, u, h) >= 0


def test_bilinear_form_vs_spectral_rough_data(unit_kernels):
    S, Ks = unit_kernels
    x = -1 + (np.arange(64) + 0.5) * S.spacing
    u = np.random.default_rng(0).standard_normal(64) * (np.abs(x) < 0.5)
    ref = u @ fractional_apply(S, 0.5, u) * S.cell_volume
    assert abs(bilinear_form(Ks[0.5], u, u, S.cell_volume) - ref) / ref <= 0.05


def test_bilinear_form_with_absorption_is_exact(unit_kernels):
    S, Ks = unit_kernels
    x = -1 + (np.arange(64) + 0.5) * S.spacing
    u = np.exp(-(x**2) / (2 * 0.15**2))
    for s, K in Ks.items():
        ref = u @ fractional_apply(S, s, u) * S.cell_volume
        got = bilinear_form(K, u, u, S.cell_volume, absorption_weights(S, s))
        assert abs(got - ref) / ref <= 1e-5
