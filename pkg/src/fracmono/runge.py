"""Cutoff profiles in ``y``, energy Gram matrices, localized potentials and Runge fits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize
from scipy import linalg as sla
from scipy.sparse.linalg import spsolve

from fracmono.domain import Conductivity, DomainPartition, index_distance
from fracmono.errors import NumericalError, ValidationError
from fracmono.extension import ExtensionSolver, YMesh, face_pairs, gradient_form
from fracmono.spectral import FaceMean, check_order, stencil_matrix

__all__ = [
    "BetaProfile",
    "beta_profile",
    "profile_integral",
    "smoothstep",
    "HarmonicTarget",
    "harmonic_target",
    "EnergyGram",
    "energy_gram",
    "LocalizedSequence",
    "localized_sequence",
    "RungeCurve",
    "runge_curve",
    "runge_residual",
]


def smoothstep(t: np.ndarray, order: int = 0) -> np.ndarray:
    """Quintic ``C^2`` step from 0 on ``t <= 0`` to 1 on ``t >= 1``, or its derivative."""
    t = np.asarray(t, dtype=float)
    inside = (t > 0) & (t < 1)
    u = np.clip(t, 0.0, 1.0)
    if order == 0:
        return u**3 * (10.0 - 15.0 * u + 6.0 * u**2)
    if order == 1:
        return np.where(inside, 30.0 * u**2 * (1.0 - u) ** 2, 0.0)
    if order == 2:
        return np.where(inside, 60.0 * u * (1.0 - u) * (1.0 - 2.0 * u), 0.0)
    raise ValidationError("smoothstep derivatives are available up to order 2")


def _bump(b: float, y: np.ndarray, order: int = 0) -> np.ndarray:
    # b on [1, 1/(1-b)], ramps of unit length on each side
    p = 1.0 / (1.0 - b)
    y = np.asarray(y, dtype=float)
    out = b * (smoothstep(y, order) - smoothstep(y - p, order))
    return np.where((y > 0) & (y < p + 1.0), out, 0.0)


def profile_integral(b: float, k: float, s: float) -> float:
    """``int_0^inf (y + k)^(1-2s) bump_b(y) dy``, split at the ramp ends."""
    p = 1.0 / (1.0 - b)
    a = 2.0 - 2.0 * s

    def f(y: float) -> float:
        return (y + k) ** (1.0 - 2.0 * s) * float(_bump(b, np.array(y)))

    up = integrate.quad(f, 0.0, 1.0, epsabs=1e-15, epsrel=1e-13)[0]
    down = integrate.quad(f, p, p + 1.0, epsabs=1e-15, epsrel=1e-13)[0]
    flat = b * ((p + k) ** a - (1.0 + k) ** a) / a
    return up + flat + down


@dataclass(frozen=True)
class BetaProfile:
    """Cutoff ``beta_k(y) = bump_b(y - k)``, normalized to unit weighted mass.

    The value is ``b`` on ``[k+1, plateau_right]`` and zero outside
    ``(k, plateau_right + 1)``, where ``plateau_right = k + 1/(1-b)``.
    """

    k: int
    s: float
    b: float
    plateau_right: float
    normalization_error: float

    def __call__(self, y: np.ndarray) -> np.ndarray:
        return self.derivative(y, 0)

    def derivative(self, y: np.ndarray, order: int = 1) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        lo, hi = self.support
        return np.where((y > lo) & (y < hi), _bump(self.b, y - self.k, order), 0.0)

    @property
    def support(self) -> tuple[float, float]:
        return float(self.k), self.plateau_right + 1.0

    def derivative_bound(self, order: int) -> float:
        """Exact sup norm of the ``order``-th derivative (0, 1 or 2)."""
        step_sup = {0: 1.0, 1: 15.0 / 8.0, 2: 10.0 / np.sqrt(3.0)}[order]
        return self.b * step_sup


def beta_profile(k: int, s: float) -> BetaProfile:
    """Solve for the plateau height ``b`` giving unit weighted mass.

    Raises
    ------
    NumericalError
        If the weighted mass does not cross 1 on (0, 1).
    """
    s = check_order(s)
    if int(k) != k or k < 1:
        raise ValidationError(f"k must be an integer >= 1, got {k}")
    lo, hi = 1e-9, 1.0 - 1e-9
    f_lo, f_hi = profile_integral(lo, k, s) - 1.0, profile_integral(hi, k, s) - 1.0
    if f_lo >= 0 or f_hi <= 0:
        raise NumericalError(f"no bracket for the plateau height: I(0+) - 1 = {f_lo:.3e}, I(1-) - 1 = {f_hi:.3e}")
    b = optimize.brentq(lambda x: profile_integral(x, k, s) - 1.0, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=200)
    err = abs(profile_integral(b, k, s) - 1.0)
    if err > 1e-10:
        raise NumericalError(f"plateau height solve stopped at |I - 1| = {err:.3e}")
    return BetaProfile(int(k), s, float(b), k + 1.0 / (1.0 - b), err)


@dataclass(frozen=True, eq=False)
class HarmonicTarget:
    """Piecewise target: 1 on ``d_set`` and discrete sigma-harmonic on ``b_set``."""

    values: np.ndarray
    cells: np.ndarray
    b_interior: np.ndarray
    residual: float


def _neighbors_inside(p: DomainPartition, cells: np.ndarray) -> np.ndarray:
    """Cells of ``cells`` whose every grid neighbor also lies in ``cells``."""
    g = p.grid
    mask = np.zeros(g.shape, dtype=bool)
    mask.flat[cells] = True
    ok = mask.copy()
    for ax in range(g.n_dims):
        for shift in (-1, 1):
            nb = np.zeros_like(mask)
            src = [slice(None)] * g.n_dims
            dst = [slice(None)] * g.n_dims
            if shift == 1:
                src[ax], dst[ax] = slice(1, None), slice(0, -1)
            else:
                src[ax], dst[ax] = slice(0, -1), slice(1, None)
            nb[tuple(dst)] = mask[tuple(src)]
            ok &= nb
    return np.flatnonzero(ok.ravel())


def harmonic_target(p: DomainPartition, sigma: Conductivity, face_mean: FaceMean = "arithmetic") -> HarmonicTarget:
    """Target with zero gradient on ``d_set`` and nonzero gradient on ``b_set``.

    On ``b_set`` the boundary-layer cells carry the coordinate sum of their
    centers, and interior cells solve ``div(sigma grad v) = 0``.
    """
    if p.b_set is None or p.d_set is None:
        raise ValidationError("harmonic target needs b_set and d_set")
    B, D = p.b_set, p.d_set
    if B.size < 2:
        raise ValidationError("b_set is degenerate (fewer than two cells)")
    if D.size and index_distance(p.grid, B, D) < 2:
        raise ValidationError("b_set and d_set must be separated by at least one cell")
    g = p.grid
    v = np.zeros(p.n_cells)
    v[D] = 1.0
    interior = _neighbors_inside(p, B)
    rim = np.setdiff1d(B, interior)
    v[rim] = g.centers()[rim].sum(axis=1)
    if np.ptp(v[rim]) == 0:
        raise ValidationError("b_set boundary values are constant; target would have zero gradient")
    L = stencil_matrix(sigma.values, g.shape, g.spacing, face_mean).tocsr()
    residual = 0.0
    if interior.size:
        Lii = L[interior][:, interior].tocsc()
        rhs = -(L[interior][:, rim] @ v[rim])
        v[interior] = np.atleast_1d(spsolve(Lii, rhs))
        residual = float(np.abs((L @ v)[interior]).max())
        scale = max(1.0, float(np.abs(L[interior]).max() * np.abs(v[B]).max()))
        if residual > 1e-10 * scale:
            raise NumericalError(f"harmonic target residual {residual:.3e}")
    cells = np.union1d(B, D)
    v.setflags(write=False)
    return HarmonicTarget(v, cells, interior, residual)


@dataclass(frozen=True, eq=False)
class EnergyGram:
    """Quadratic form ``E(f) = f^T G f * vol`` on window data."""

    matrix: np.ndarray
    region: np.ndarray
    cell_volume: float
    provenance: dict = field(default_factory=dict)

    def energy(self, f: np.ndarray) -> float:
        f = np.asarray(f, dtype=float)
        return float(f @ self.matrix @ f * self.cell_volume)


def _layer_gram(layers: np.ndarray, weights: np.ndarray, Q) -> np.ndarray:
    # layers: (M, n_cells, m)
    G = np.zeros((layers.shape[2], layers.shape[2]))
    for w, U in zip(weights, layers):
        G += w * (U.T @ (Q @ U))
    return 0.5 * (G + G.T)


def energy_gram(
    sigma: Conductivity,
    p: DomainPartition,
    mesh: YMesh,
    region: np.ndarray,
    solver: ExtensionSolver | None = None,
    fields: np.ndarray | None = None,
    face_mean: FaceMean = "arithmetic",
) -> EnergyGram:
    """Gram matrix of the unit-density x-gradient energy over ``region x (0, Y)``."""
    region = np.asarray(region, dtype=int)
    if not np.all(np.isin(region, p.omega)):
        raise ValidationError("Gram region must lie in omega")
    m = p.window.size
    prov = {"sigma": sigma.digest(), "partition": p.digest(), "s": mesh.s, "M": mesh.n_intervals, "Y": mesh.height}
    if region.size == 0:
        return EnergyGram(np.zeros((m, m)), region, p.grid.cell_volume, prov)
    if fields is None:
        solver = solver if solver is not None else ExtensionSolver(sigma, p, mesh, face_mean)
        fields = solver.window_fields()
    layers = 0.5 * (fields[1:] + fields[:-1])
    G = _layer_gram(layers, mesh.weights, gradient_form(p, 1.0, region))
    return EnergyGram(G, region, p.grid.cell_volume, prov)


@dataclass(frozen=True, eq=False)
class LocalizedSequence:
    """Window data ``f_i`` (rows) with energies on B and D and the regularization path."""

    data: np.ndarray
    energy_b: np.ndarray
    energy_d: np.ndarray
    eps: np.ndarray
    completed: bool

    @property
    def ratios(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.where(self.energy_d > 0, self.energy_b / np.where(self.energy_d > 0, self.energy_d, 1), np.inf)


def localized_sequence(G_B: EnergyGram, G_D: EnergyGram, steps: int = 6, eps0: float = 1e-2) -> LocalizedSequence:
    """Top generalized eigenvectors of ``G_B f = mu (G_D + eps_i I) f`` with ``eps_i = eps0 10^-i``.

    Each ``f_i`` is scaled to unit energy on D, or to unit energy on B when
    its D-energy vanishes. The sequence stops early, with ``completed=False``,
    when the regularized denominator is numerically singular.
    """
    if G_B.matrix.shape != G_D.matrix.shape:
        raise ValidationError("Gram matrices differ in size")
    for key in ("sigma", "partition", "s", "M", "Y"):
        if G_B.provenance.get(key) != G_D.provenance.get(key):
            raise ValidationError(f"Gram matrices have mismatched provenance ({key})")
    if not eps0 > 0:
        raise ValidationError("eps0 must be positive")
    m = G_B.matrix.shape[0]
    vol = G_B.cell_volume
    data, eb, ed, eps = [], [], [], []
    completed = True
    for i in range(1, steps + 1):
        e = eps0 * 10.0**-i
        try:
            _, vec = sla.eigh(G_B.matrix, G_D.matrix + e * np.eye(m), subset_by_index=[m - 1, m - 1])
        except (np.linalg.LinAlgError, ValueError):
            completed = False
            break
        f = vec[:, 0]
        f = f * np.sign(f[np.argmax(np.abs(f))])
        d = G_D.energy(f)
        if d > 0:
            f = f / np.sqrt(d)
        else:
            f = f / np.sqrt(G_B.energy(f))
        data.append(f)
        eb.append(G_B.energy(f))
        ed.append(G_D.energy(f))
        eps.append(e)
    return LocalizedSequence(
        np.array(data).reshape(-1, m), np.array(eb), np.array(ed), np.array(eps), completed
    )


@dataclass(frozen=True)
class RungeCurve:
    """Residuals of nested least-squares fits for basis sizes ``1..|W|``.

    ``residual_x`` uses values plus x-gradients; ``residual_full`` also counts
    y-differences. Norms are weighted by ``y^(1-2s)`` over the target cells.
    """

    basis_sizes: np.ndarray
    residual_x: np.ndarray
    residual_full: np.ndarray
    target_norm_x: float
    target_norm_full: float
    touches_boundary: bool

    @property
    def relative_x(self) -> np.ndarray:
        return self.residual_x / self.target_norm_x if self.target_norm_x > 0 else np.zeros_like(self.residual_x)

    @property
    def relative_full(self) -> np.ndarray:
        if self.target_norm_full > 0:
            return self.residual_full / self.target_norm_full
        return np.zeros_like(self.residual_full)


def _nested_residuals(A: np.ndarray, t: np.ndarray, cutoff: float = 1e-12) -> np.ndarray:
    """Residual norms of least squares on the leading columns of ``A``, exactly nonincreasing.

    Columns whose QR pivot falls below ``cutoff`` times the largest one are
    dropped, which truncates the pseudo-inverse.
    """
    Q, R = sla.qr(A, mode="economic")
    c = Q.T @ t
    d = np.abs(np.diag(R))
    keep = d > cutoff * max(d.max(), np.finfo(float).tiny) if d.size else d.astype(bool)
    outside = float(np.sum((t - Q[:, keep] @ c[keep]) ** 2))
    # squared residual after m columns: the unexplained part plus gains of columns m+1, ...
    gain = np.where(keep, c**2, 0.0)
    tail = np.concatenate([np.cumsum(gain[::-1])[::-1][1:], [0.0]])
    return np.sqrt(outside + tail)


def _touches_omega_boundary(p: DomainPartition, cells: np.ndarray) -> bool:
    inner = _neighbors_inside(p, p.omega)
    return bool(np.setdiff1d(cells, inner).size)


def runge_curve(
    target: HarmonicTarget,
    beta: BetaProfile,
    sigma: Conductivity,
    p: DomainPartition,
    mesh: YMesh,
    solver: ExtensionSolver | None = None,
    fields: np.ndarray | None = None,
    face_mean: FaceMean = "arithmetic",
) -> RungeCurve:
    """Fit ``v(x) beta(y)`` on the target cells by window-basis extensions."""
    if beta.plateau_right + 1.0 > mesh.height:
        raise ValidationError(f"y-mesh height {mesh.height} does not cover the cutoff support up to {beta.plateau_right + 1.0}")
    C = target.cells
    if fields is None:
        solver = solver if solver is not None else ExtensionSolver(sigma, p, mesh, face_mean)
        fields = solver.window_fields()
    vol = p.grid.cell_volume
    h = p.grid.spacing
    a, b, _ = face_pairs(p)
    inC = np.zeros(p.n_cells, dtype=bool)
    inC[C] = True
    inner = inC[a] & inC[b]
    fa, fb = a[inner], b[inner]
    sw = np.sqrt(mesh.weights)[:, None, None]
    sc = np.sqrt(mesh.conductances)[:, None, None]

    def x_rows(Z: np.ndarray) -> np.ndarray:
        # Z: (M, n_cells, k) on mid-layers
        val = Z[:, C] * sw
        grad = (Z[:, fb] - Z[:, fa]) / h * sw
        return np.concatenate([val.reshape(-1, Z.shape[2]), grad.reshape(-1, Z.shape[2])]) * np.sqrt(vol)

    def y_rows(Z: np.ndarray) -> np.ndarray:
        # Z: (M+1, n_cells, k) on nodes
        dy = (Z[1:, C] - Z[:-1, C]) * sc
        return dy.reshape(-1, Z.shape[2]) * np.sqrt(vol)

    v = target.values
    mids = mesh.midpoints
    T_mid = (beta(mids)[:, None] * v[None, :])[:, :, None]
    T_node = (beta(mesh.nodes)[:, None] * v[None, :])[:, :, None]
    layers = 0.5 * (fields[1:] + fields[:-1])
    Ax = x_rows(layers)
    tx = x_rows(T_mid)[:, 0]
    Af = np.concatenate([Ax, y_rows(fields)])
    tf = np.concatenate([tx, y_rows(T_node)[:, 0]])
    return RungeCurve(
        np.arange(1, fields.shape[2] + 1),
        _nested_residuals(Ax, tx),
        _nested_residuals(Af, tf),
        float(np.linalg.norm(tx)),
        float(np.linalg.norm(tf)),
        _touches_omega_boundary(p, C),
    )


def runge_residual(
    target: HarmonicTarget,
    beta: BetaProfile,
    sigma: Conductivity,
    p: DomainPartition,
    mesh: YMesh,
    m: int,
    face_mean: FaceMean = "arithmetic",
) -> float:
    """Residual norm (values plus x-gradients) of the best fit from the first ``m`` window excitations."""
    if not 1 <= m <= p.window.size:
        raise ValidationError(f"basis size must lie in [1, {p.window.size}], got {m}")
    curve = runge_curve(target, beta, sigma, p, mesh, face_mean=face_mean)
    return float(curve.residual_x[m - 1])
