"""Discrete divergence-form operator and its spectral calculus.

The operator ``L = -div(sigma grad)`` is assembled with a flux-conservative
finite-volume stencil and a zero-Dirichlet closure at the box boundary. A dense
symmetric eigendecomposition of ``L`` then drives the heat semigroup, the
fractional power and the jump kernel.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.sparse as sps
from scipy import linalg as sla
from scipy.special import gamma

from fracmono.domain import Conductivity, DomainPartition
from fracmono.errors import NumericalError, ValidationError

__all__ = [
    "EllipticMatrix",
    "SpectralOperator",
    "QuadratureSpec",
    "KernelMatrix",
    "stencil_matrix",
    "assemble_operator",
    "spectral_decompose",
    "heat_apply",
    "heat_kernel",
    "fractional_apply",
    "fractional_matrix",
    "default_quadrature",
    "semigroup_fractional_apply",
    "kernel_assemble",
    "bilinear_form",
    "absorption_weights",
    "continuum_kernel_constant",
    "check_order",
]

FaceMean = Literal["arithmetic", "harmonic"]


def check_order(s: float) -> float:
    """Return ``s`` as float, rejecting values outside (0, 1)."""
    s = float(s)
    if not 0.0 < s < 1.0:
        raise ValidationError(f"fractional order must lie in (0, 1), got {s}")
    return s


def _face_values(a: np.ndarray, b: np.ndarray, face_mean: FaceMean) -> np.ndarray:
    if face_mean == "arithmetic":
        return 0.5 * (a + b)
    if face_mean == "harmonic":
        return 2.0 * a * b / (a + b)
    raise ValidationError(f"unknown face mean {face_mean!r}")


def stencil_matrix(
    values: np.ndarray, shape: tuple[int, ...], spacing: float, face_mean: FaceMean = "arithmetic"
) -> sps.csr_matrix:
    """Sparse ``-div(sigma grad)`` on a cell grid with zero-Dirichlet closure.

    Interior faces carry the chosen mean of the two adjacent cell values. A
    boundary face sits between a cell and a zero ghost at the same distance
    as an interior neighbor and carries the cell's own value.

    Parameters
    ----------
    values : ndarray
        Cell conductivities, flattened in C order.
    shape : tuple of int
        Grid shape.
    spacing : float
        Cell width ``h``; entries scale as ``1/h**2``.
    face_mean : {"arithmetic", "harmonic"}
        Rule for interior face conductivities.
    """
    sig = np.asarray(values, dtype=float).reshape(shape)
    n = sig.size
    idx = np.arange(n).reshape(shape)
    diag = np.zeros(shape)
    rows, cols, vals = [], [], []
    for ax in range(len(shape)):
        lo = [slice(None)] * len(shape)
        hi = [slice(None)] * len(shape)
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        a, b = sig[tuple(lo)], sig[tuple(hi)]
        w = _face_values(a, b, face_mean)
        diag[tuple(lo)] += w
        diag[tuple(hi)] += w
        rows += [idx[tuple(lo)].ravel(), idx[tuple(hi)].ravel()]
        cols += [idx[tuple(hi)].ravel(), idx[tuple(lo)].ravel()]
        vals += [-w.ravel(), -w.ravel()]
        # ghost faces on both ends of this axis
        first = [slice(None)] * len(shape)
        last = [slice(None)] * len(shape)
        first[ax] = 0
        last[ax] = -1
        diag[tuple(first)] += sig[tuple(first)]
        diag[tuple(last)] += sig[tuple(last)]
    rows.append(idx.ravel())
    cols.append(idx.ravel())
    vals.append(diag.ravel())
    mat = sps.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    return mat / spacing**2


@dataclass(frozen=True, eq=False)
class EllipticMatrix:
    """Sparse symmetric positive-definite operator ``-div(sigma grad)``."""

    matrix: sps.csr_matrix
    spacing: float
    cell_volume: float
    face_mean: str = "arithmetic"

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def assemble_operator(
    p: DomainPartition, sigma: Conductivity, face_mean: FaceMean = "arithmetic"
) -> EllipticMatrix:
    """Assemble ``L = -div(sigma grad)`` on the partition's grid."""
    if sigma.values.size != p.n_cells:
        raise ValidationError("conductivity does not match the grid")
    g = p.grid
    mat = stencil_matrix(sigma.values, g.shape, g.spacing, face_mean)
    return EllipticMatrix(mat, g.spacing, g.cell_volume, face_mean)


@dataclass(frozen=True, eq=False)
class SpectralOperator:
    """Eigenpairs ``L = V diag(mu) V^T`` with ascending ``mu``."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    spacing: float = 1.0
    cell_volume: float = 1.0

    @property
    def size(self) -> int:
        return self.eigenvalues.size

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Apply ``L`` through its eigenpairs."""
        return self._spectral_apply(self.eigenvalues, v)

    def _spectral_apply(self, weights: np.ndarray, v: np.ndarray) -> np.ndarray:
        V = self.eigenvectors
        v = np.asarray(v, dtype=float)
        coef = V.T @ v
        if coef.ndim == 1:
            return V @ (weights * coef)
        return V @ (weights[:, None] * coef)


def spectral_decompose(
    L: EllipticMatrix | np.ndarray | sps.spmatrix, spacing: float | None = None, cell_volume: float | None = None
) -> SpectralOperator:
    """Dense symmetric eigendecomposition.

    Raises
    ------
    NumericalError
        If the eigensolver fails; the matrix is saved to a temporary ``.npy``
        file whose path is included in the message.
    """
    if isinstance(L, EllipticMatrix):
        dense = L.toarray()
        spacing = L.spacing if spacing is None else spacing
        cell_volume = L.cell_volume if cell_volume is None else cell_volume
    elif sps.issparse(L):
        dense = L.toarray()
    else:
        dense = np.array(L, dtype=float)
    if dense.ndim != 2 or dense.shape[0] != dense.shape[1]:
        raise ValidationError("operator must be a square matrix")
    if not np.allclose(dense, dense.T, rtol=0, atol=1e-12 * max(1.0, np.abs(dense).max())):
        raise ValidationError("operator is not symmetric")
    try:
        try:
            mu, V = sla.eigh(dense, driver="evd")  # divide and conquer: fastest for the full spectrum
        except np.linalg.LinAlgError:
            mu, V = sla.eigh(dense, driver="evr")
    except (np.linalg.LinAlgError, ValueError) as exc:
        fd, path = tempfile.mkstemp(suffix=".npy", prefix="fracmono_eigh_")
        os.close(fd)
        np.save(path, dense)
        raise NumericalError(f"eigensolver failed ({exc}); matrix saved to {path}") from exc
    if mu[0] <= 0:
        raise NumericalError(f"operator is not positive definite (smallest eigenvalue {mu[0]:.3e})")
    return SpectralOperator(mu, V, 1.0 if spacing is None else spacing, 1.0 if cell_volume is None else cell_volume)


def heat_apply(S: SpectralOperator, t: float, v: np.ndarray) -> np.ndarray:
    """Heat semigroup ``exp(-t L) v``."""
    if t < 0:
        raise ValidationError(f"time must be nonnegative, got {t}")
    return S._spectral_apply(np.exp(-t * S.eigenvalues), v)


def heat_kernel(S: SpectralOperator, t: float) -> np.ndarray:
    """Matrix of the discrete heat kernel ``p_t(x_i, x_j)`` (density per unit volume)."""
    if t < 0:
        raise ValidationError(f"time must be nonnegative, got {t}")
    V = S.eigenvectors
    return (V * np.exp(-t * S.eigenvalues)) @ V.T / S.cell_volume


def fractional_apply(S: SpectralOperator, s: float, v: np.ndarray) -> np.ndarray:
    """Fractional power ``L^s v``."""
    s = check_order(s)
    return S._spectral_apply(S.eigenvalues**s, v)


def fractional_matrix(S: SpectralOperator, s: float, rows: np.ndarray | None = None) -> np.ndarray:
    """Dense ``L^s``, optionally restricted to ``rows`` x ``rows``."""
    s = check_order(s)
    V = S.eigenvectors if rows is None else S.eigenvectors[np.asarray(rows)]
    A = (V * S.eigenvalues**s) @ V.T
    return 0.5 * (A + A.T)


@dataclass(frozen=True)
class QuadratureSpec:
    """Trapezoidal rule in ``log t`` on ``n_nodes`` log-spaced nodes."""

    n_nodes: int
    t_min: float
    t_max: float

    def __post_init__(self) -> None:
        if self.n_nodes < 2 or not 0 < self.t_min < self.t_max:
            raise ValidationError("quadrature needs n_nodes >= 2 and 0 < t_min < t_max")

    def nodes_weights(self) -> tuple[np.ndarray, np.ndarray]:
        """Nodes ``t_k`` and weights for integrals of the form ``int g(t) d(log t)``."""
        tau = np.linspace(np.log(self.t_min), np.log(self.t_max), self.n_nodes)
        w = np.full(self.n_nodes, tau[1] - tau[0])
        w[[0, -1]] *= 0.5
        return np.exp(tau), w


def default_quadrature(S: SpectralOperator, n_nodes: int = 200) -> QuadratureSpec:
    return QuadratureSpec(n_nodes, 1e-6 * S.spacing**2, 100.0 / S.eigenvalues[0])


def semigroup_fractional_apply(
    S: SpectralOperator, s: float, v: np.ndarray, quad: QuadratureSpec | None = None
) -> np.ndarray:
    """``L^s v`` from heat-semigroup quadrature, independent of ``mu**s``.

    Integrates ``(exp(-tL) - I) v t^(-1-s) dt / Gamma(-s)`` after subtracting
    a scalar comparison semigroup at rate ``c = mu_1``, matched to first order
    at ``t = 0``. The subtracted terms are integrated in closed form and the
    smooth remainder by the trapezoidal rule in ``log t``.
    """
    s = check_order(s)
    quad = default_quadrature(S) if quad is None else quad
    t, w = quad.nodes_weights()
    v = np.asarray(v, dtype=float)
    c = S.eigenvalues[0]
    defect = S.apply(v) - c * v
    acc = np.zeros_like(v)
    for tk, wk in zip(t, w):
        ec = np.exp(-tk * c)
        rem = heat_apply(S, tk, v) - ec * v + tk * ec * defect
        acc += wk * tk**-s * rem
    g = gamma(-s)
    return acc / g + c**s * v - gamma(1.0 - s) * c ** (s - 1.0) / g * defect


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Jump-kernel magnitudes ``K[i, j]`` for ``i != j``; the diagonal is zero."""

    entries: np.ndarray
    s: float
    quad: QuadratureSpec
    tail_estimate: float


def kernel_assemble(S: SpectralOperator, s: float, quad: QuadratureSpec | None = None) -> KernelMatrix:
    """Jump kernel from the time integral of the heat kernel against ``t^(-1-s)``.

    The integral over ``(0, t_min)`` uses the first-order expansion
    ``exp(-tL) = I - tL + O(t^2)``; the rest uses the trapezoidal rule in ``log t``.

    Raises
    ------
    ValidationError
        If the nodes do not span ``[1e-4 h^2, 10/mu_1]`` or the estimated
        truncated tails exceed 1% of any entry.
    """
    s = check_order(s)
    quad = default_quadrature(S) if quad is None else quad
    h2 = S.spacing**2
    mu = S.eigenvalues
    lo, hi = 1e-4 * h2, 10.0 / mu[0]
    if quad.t_min > lo or quad.t_max < hi:
        raise ValidationError(
            f"quadrature range [{quad.t_min:.3e}, {quad.t_max:.3e}] too narrow; "
            f"use t_min <= {lo:.3e} and t_max >= {hi:.3e}"
        )
    t, w = quad.nodes_weights()
    phi = (w * t**-s) @ np.exp(-np.outer(t, mu))
    V = S.eigenvectors
    scale = 1.0 / (abs(gamma(-s)) * S.cell_volume)
    # closed-form head on (0, t_min) from exp(-tL) ~ I - tL
    head_weights = phi - mu * quad.t_min ** (1.0 - s) / (1.0 - s)
    K = (V * head_weights) @ V.T * scale
    K = 0.5 * (K + K.T)
    # truncation estimates: second-order head remainder and exp(-mu_1 t) tail
    head = np.abs((V * mu**2) @ V.T) * 0.5 * quad.t_min ** (2.0 - s) / (2.0 - s)
    tail = np.abs((V * np.exp(-quad.t_max * mu)) @ V.T) * quad.t_max ** (-1.0 - s) / mu[0]
    off = ~np.eye(S.size, dtype=bool)
    denom = np.abs(K[off]) / scale
    ratio = float(np.max((head[off] + tail[off]) / np.maximum(denom, np.finfo(float).tiny)))
    if ratio > 0.01:
        raise ValidationError(
            f"quadrature tails estimated at {ratio:.2%} of the kernel; "
            f"use t_min <= {quad.t_min / 100:.3e} and t_max >= {quad.t_max * 10:.3e}"
        )
    np.fill_diagonal(K, 0.0)
    return KernelMatrix(K, s, quad, ratio)


def absorption_weights(S: SpectralOperator, s: float) -> np.ndarray:
    """Per-cell absorption ``L^s 1`` left over by the truncation box.

    Adding ``sum_i u_i w_i kappa_i vol`` to the jump form recovers ``<L^s u, w>``.
    """
    return fractional_apply(S, s, np.ones(S.size))


def bilinear_form(
    K: KernelMatrix, u: np.ndarray, w: np.ndarray, cell_volume: float, absorption: np.ndarray | None = None
) -> float:
    """``1/2 sum_{i != j} (u_i - u_j)(w_i - w_j) K_ij vol^2``, plus ``sum_i u_i w_i kappa_i vol`` if given."""
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    E = K.entries
    rows = E.sum(axis=1)
    val = np.dot(u * w, rows) - 0.5 * (u @ E @ w + w @ E @ u)
    val *= cell_volume**2
    if absorption is not None:
        val += float(np.dot(u * w, absorption)) * cell_volume
    return float(val)


def continuum_kernel_constant(n: int, s: float) -> float:
    """Constant ``c`` in the whole-space kernel ``c |x - z|^(-n-2s)``."""
    s = check_order(s)
    return float(4.0**s * gamma(n / 2 + s) / (np.pi ** (n / 2) * abs(gamma(-s))))
