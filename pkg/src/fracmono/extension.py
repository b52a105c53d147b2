"""Weighted half-space extension on a graded mesh in the extra variable ``y``.

The extension solves ``div_{x,y}(y^(1-2s) A grad u) = 0`` on the grid times
``(0, Y)``. Here ``A`` is ``sigma`` on x-fluxes and 1 on y-fluxes. The
discretization is a tensor product of the cell-grid stencil in x with a
finite-volume scheme on y-nodes ``y_j = Y (j/M)^gamma``, and the weight is
integrated exactly on every y-interval.

Boundary conditions:

* Dirichlet data ``f`` on exterior cells at ``y = 0``.
* Natural (flux-free) condition on domain cells at ``y = 0``.
* Zero at ``y = Y`` and at the lateral box boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla
from scipy.special import gamma

from fracmono.domain import Conductivity, DomainPartition, exterior_data
from fracmono.errors import NumericalError, ValidationError
from fracmono.spectral import FaceMean, check_order, stencil_matrix

__all__ = [
    "YMesh",
    "ExtensionField",
    "EnergyReport",
    "IdentityCheck",
    "ExtensionSolver",
    "build_ymesh",
    "default_height",
    "solve_extension",
    "neumann_trace",
    "d_s_constant",
    "face_pairs",
    "gradient_form",
    "energy",
    "dirichlet_energy",
    "energy_identity_check",
]


@dataclass(frozen=True, eq=False)
class YMesh:
    """Graded nodes on ``[0, Y]`` with exact per-interval weight integrals.

    Attributes
    ----------
    nodes : ndarray, shape (M+1,)
        ``y_j = Y (j/M)^gamma``.
    weights : ndarray, shape (M,)
        ``int_{y_j}^{y_{j+1}} y^(1-2s) dy``.
    conductances : ndarray, shape (M,)
        ``2s / (y_{j+1}^(2s) - y_j^(2s))``. This is the exact two-point flux
        coefficient of ``y^(1-2s) d/dy`` for profiles that carry a constant
        weighted flux across the interval.
    """

    s: float
    nodes: np.ndarray
    weights: np.ndarray
    conductances: np.ndarray
    height: float
    grading: float

    @property
    def n_intervals(self) -> int:
        return self.weights.size

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.nodes[1:] + self.nodes[:-1])


def build_ymesh(s: float, M: int, Y: float, grading: float | None = None) -> YMesh:
    """Graded y-mesh; the default grading exponent is ``3/(2s)``."""
    s = check_order(s)
    if int(M) != M or M < 16:
        raise ValidationError(f"number of y-intervals must be an integer >= 16, got {M}")
    if not Y > 0:
        raise ValidationError(f"height must be positive, got {Y}")
    g = 1.5 / s if grading is None else float(grading)
    if g < 1:
        raise ValidationError(f"grading exponent must be >= 1, got {g}")
    y = Y * (np.arange(M + 1) / M) ** g
    a = 2.0 - 2.0 * s
    om = (y[1:] ** a - y[:-1] ** a) / a
    cond = 2.0 * s / (y[1:] ** (2 * s) - y[:-1] ** (2 * s))
    for arr in (y, om, cond):
        arr.setflags(write=False)
    return YMesh(s, y, om, cond, float(Y), g)


def default_height(p: DomainPartition) -> float:
    """Default truncation height, four box half-widths."""
    return 4.0 * p.grid.half_width


def d_s_constant(s: float) -> float:
    """Constant linking the weighted Neumann trace to the fractional power."""
    s = check_order(s)
    return float(gamma(1.0 - s) / (2.0 ** (2.0 * s - 1.0) * gamma(s)))


def face_pairs(p: DomainPartition) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Interior faces as cell pairs ``(a, b)``, and the cells of boundary faces.

    A cell on a box corner appears once per boundary face it owns.
    """
    g = p.grid
    idx = np.arange(g.n_cells).reshape(g.shape)
    a_list, b_list, ghost = [], [], []
    for ax in range(g.n_dims):
        a_list.append(np.take(idx, np.arange(g.cells_per_axis - 1), axis=ax).ravel())
        b_list.append(np.take(idx, np.arange(1, g.cells_per_axis), axis=ax).ravel())
        ghost.append(np.take(idx, 0, axis=ax).ravel())
        ghost.append(np.take(idx, g.cells_per_axis - 1, axis=ax).ravel())
    return np.concatenate(a_list), np.concatenate(b_list), np.concatenate(ghost)


def gradient_form(
    p: DomainPartition,
    density: np.ndarray | float,
    region: np.ndarray | None = None,
    internal_only: bool = False,
) -> sps.csr_matrix:
    """Sparse form ``Q`` with ``u^T Q u = sum_faces rho_face |grad_x u|^2``.

    Face gradients are one-sided differences across cell faces. By default
    each face takes the arithmetic mean of the region-masked cell densities on
    its two sides, and a boundary face takes its cell's density. The form is
    then linear in the masked density, and it reproduces the stencil operator
    when the density is the conductivity on all cells. With ``internal_only``,
    only faces with both cells in the region count, at the mean density.
    """
    n = p.n_cells
    rho = np.broadcast_to(np.asarray(density, dtype=float), (n,)).copy()
    mask = np.ones(n, dtype=bool)
    if region is not None:
        mask[:] = False
        mask[np.asarray(region, dtype=int)] = True
    rho[~mask] = 0.0
    a, b, ghost = face_pairs(p)
    w = 0.5 * (rho[a] + rho[b])
    if internal_only:
        w = np.where(mask[a] & mask[b], w, 0.0)
        gw = np.zeros(ghost.size)
    else:
        gw = rho[ghost]
    diag = np.bincount(a, w, n) + np.bincount(b, w, n) + np.bincount(ghost, gw, n)
    Q = sps.coo_matrix(
        (np.concatenate([diag, -w, -w]), (np.r_[np.arange(n), a, b], np.r_[np.arange(n), b, a])), shape=(n, n)
    ).tocsr()
    return Q / p.grid.spacing**2


@dataclass(frozen=True, eq=False)
class ExtensionField:
    """Nodal values ``u[j, cell]`` at ``y = nodes[j]``; row 0 is the trace."""

    values: np.ndarray
    boundary_data: np.ndarray
    sigma_digest: str
    s: float

    @property
    def layer_means(self) -> np.ndarray:
        """Mid-interval values ``(u_j + u_{j+1})/2``, shape ``(M, n_cells)``."""
        return 0.5 * (self.values[1:] + self.values[:-1])


@dataclass(frozen=True)
class EnergyReport:
    region_id: str
    density_mode: str
    value: float


@dataclass(frozen=True)
class IdentityCheck:
    lhs: float
    rhs: float
    gap: float


class ExtensionSolver:
    """Assembled and factorized extension system, reusable across boundary data.

    Unknowns are ordered as ``u[j * n_cells + cell]``.
    """

    def __init__(
        self,
        sigma: Conductivity,
        p: DomainPartition,
        mesh: YMesh,
        face_mean: FaceMean = "arithmetic",
    ) -> None:
        if sigma.values.size != p.n_cells:
            raise ValidationError("conductivity does not match the grid")
        self.sigma = sigma
        self.partition = p
        self.mesh = mesh
        self.face_mean = face_mean
        n, M = p.n_cells, mesh.n_intervals
        g = p.grid
        Lx = stencil_matrix(sigma.values, g.shape, g.spacing, face_mean)
        om, cd = mesh.weights, mesh.conductances
        j = np.arange(M)
        # mid-layer mass and y-stiffness on the nodes
        Tm = sps.coo_matrix(
            (np.concatenate([om, om, om, om]) / 4.0, (np.r_[j, j, j + 1, j + 1], np.r_[j, j + 1, j, j + 1])),
            shape=(M + 1, M + 1),
        ).tocsr()
        Ts = sps.coo_matrix(
            (np.concatenate([cd, -cd, -cd, cd]), (np.r_[j, j, j + 1, j + 1], np.r_[j, j + 1, j, j + 1])),
            shape=(M + 1, M + 1),
        ).tocsr()
        self.stiffness = (sps.kron(Tm, Lx) + sps.kron(Ts, sps.identity(n))).tocsr()
        fixed = np.zeros((M + 1) * n, dtype=bool)
        fixed[M * n :] = True
        fixed[p.exterior] = True
        self._fixed = fixed
        self._free = np.flatnonzero(~fixed)
        self._fixed_idx = np.flatnonzero(fixed)

    @cached_property
    def _blocks(self) -> tuple[sps.csc_matrix, sps.csr_matrix]:
        K = self.stiffness
        Kff = K[self._free][:, self._free].tocsc()
        Kfd = K[self._free][:, self._fixed_idx].tocsr()
        return Kff, Kfd

    @cached_property
    def _lu(self) -> spla.SuperLU:
        Kff, _ = self._blocks
        try:
            return spla.splu(Kff)
        except RuntimeError as exc:
            diag = np.abs(Kff.diagonal())
            est = diag.max() / max(diag.min(), np.finfo(float).tiny)
            raise NumericalError(f"extension solve failed ({exc}); diagonal ratio {est:.3e}") from exc

    def _solve_data(self, D: np.ndarray) -> np.ndarray:
        """Solve for full-length data columns ``D`` of shape ``(n_cells, k)``."""
        n, M = self.partition.n_cells, self.mesh.n_intervals
        k = D.shape[1]
        full = np.zeros(((M + 1) * n, k))
        full[:n] = D
        Kff, Kfd = self._blocks
        rhs = -(Kfd @ full[self._fixed_idx])
        sol = self._lu.solve(np.asarray(rhs))
        res = Kff @ sol - rhs
        scale = np.maximum(np.linalg.norm(rhs, axis=0), np.finfo(float).tiny)
        rel = np.linalg.norm(res, axis=0) / scale
        nz = np.linalg.norm(rhs, axis=0) > 0
        if np.any(rel[nz] > 1e-8):
            raise NumericalError(f"extension residual {rel[nz].max():.3e} exceeds 1e-8")
        full[self._free] = sol
        return full.reshape(M + 1, n, k)

    def solve(self, f: np.ndarray) -> ExtensionField:
        """Extension of exterior data ``f`` (all cells, exterior cells or window cells)."""
        data = exterior_data(self.partition, f)
        vals = self._solve_data(data[:, None])[:, :, 0]
        vals.setflags(write=False)
        return ExtensionField(vals, data, self.sigma.digest(), self.mesh.s)

    def window_fields(self) -> np.ndarray:
        """Extensions of the window indicator basis, shape ``(M+1, n_cells, |W|)``."""
        p = self.partition
        D = np.zeros((p.n_cells, p.window.size))
        D[p.window, np.arange(p.window.size)] = 1.0
        return self._solve_data(D)


def solve_extension(
    sigma: Conductivity,
    p: DomainPartition,
    mesh: YMesh,
    f: np.ndarray,
    face_mean: FaceMean = "arithmetic",
) -> ExtensionField:
    """Solve the extension problem for exterior data ``f``."""
    return ExtensionSolver(sigma, p, mesh, face_mean).solve(f)


def neumann_trace(field: ExtensionField, mesh: YMesh) -> np.ndarray:
    """Weighted conormal derivative at ``y = 0`` from the first layer.

    Uses ``u ~ u(., 0) + a y^(2s)`` near ``y = 0``, so ``-y^(1-2s) du/dy -> -2s a``.
    """
    u = field.values
    return -2.0 * mesh.s * (u[1] - u[0]) / mesh.nodes[1] ** (2.0 * mesh.s)


def _layer_energy(layers: np.ndarray, mesh: YMesh, Q: sps.spmatrix) -> float:
    QU = (Q @ layers.T).T
    return float(np.dot(mesh.weights, np.einsum("jc,jc->j", layers, QU)))


def energy(
    field: ExtensionField,
    mesh: YMesh,
    p: DomainPartition,
    region: np.ndarray,
    density: np.ndarray | float = 1.0,
    region_id: str = "region",
) -> EnergyReport:
    """Weighted x-gradient energy over ``region x (0, Y)``.

    Computes ``vol * sum_j w_j sum_faces rho |grad_x u_j|^2`` on mid-interval
    layers. Additive over disjoint regions and linear in the density.
    """
    Q = gradient_form(p, density, region)
    val = _layer_energy(field.layer_means, mesh, Q) * p.grid.cell_volume
    mode = "constant" if np.ndim(density) == 0 else "per-cell"
    return EnergyReport(region_id, mode, val)


def dirichlet_energy(field: ExtensionField, mesh: YMesh, p: DomainPartition, sigma: Conductivity) -> float:
    """Full weighted energy with ``sigma`` on x-fluxes and 1 on y-fluxes."""
    x_part = energy(field, mesh, p, np.arange(p.n_cells), sigma.values).value
    dy = np.diff(field.values, axis=0)
    y_part = float(np.dot(mesh.conductances, np.einsum("jc,jc->j", dy, dy))) * p.grid.cell_volume
    return x_part + y_part


def energy_identity_check(
    sigma: Conductivity,
    p: DomainPartition,
    mesh: YMesh,
    f: np.ndarray,
    face_mean: FaceMean = "arithmetic",
) -> IdentityCheck:
    """Compare the extension energy with ``d_s <Lambda f, f>``.

    ``f`` is given on the window cells.
    """
    from fracmono.exterior import dn_matrix, dn_pairing

    f = np.asarray(f, dtype=float)
    if f.shape != (p.window.size,):
        raise ValidationError("identity check expects data on the window cells")
    field = solve_extension(sigma, p, mesh, f, face_mean)
    lhs = dirichlet_energy(field, mesh, p, sigma)
    lam = dn_matrix(sigma.with_order(mesh.s), p, face_mean=face_mean)
    rhs = d_s_constant(mesh.s) * dn_pairing(lam, f, f)
    big = max(abs(lhs), abs(rhs))
    gap = abs(lhs - rhs) / big if big > 0 else 0.0
    return IdentityCheck(lhs, rhs, gap)
