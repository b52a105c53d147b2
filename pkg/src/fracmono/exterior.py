"""Exterior-value problem for the fractional operator and its DN map on the window."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from fracmono.domain import Conductivity, DomainPartition, exterior_data
from fracmono.errors import NumericalError, ValidationError
from fracmono.spectral import (
    FaceMean,
    SpectralOperator,
    assemble_operator,
    check_order,
    fractional_matrix,
    spectral_decompose,
)

__all__ = [
    "FractionalMatrix",
    "DNMatrix",
    "build_fractional_matrix",
    "solve_exterior",
    "assemble_dn",
    "dn_matrix",
    "dn_pairing",
]


@dataclass(frozen=True, eq=False)
class FractionalMatrix:
    """Dense ``L^s`` with block views induced by a partition."""

    matrix: np.ndarray
    partition: DomainPartition
    s: float
    sigma_digest: str = ""

    def block(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        return self.matrix[np.ix_(rows, cols)]

    @property
    def omega_block(self) -> np.ndarray:
        o = self.partition.omega
        return self.block(o, o)

    @property
    def omega_exterior(self) -> np.ndarray:
        return self.block(self.partition.omega, self.partition.exterior)

    @property
    def exterior_block(self) -> np.ndarray:
        e = self.partition.exterior
        return self.block(e, e)


@dataclass(frozen=True, eq=False)
class DNMatrix:
    """Symmetric DN matrix on the window cells, in the cell basis.

    ``asymmetry`` is ``max|Lambda - Lambda^T| / max|Lambda|`` before the stored
    entries were symmetrized.
    """

    entries: np.ndarray
    s: float
    cell_volume: float
    provenance: dict = field(default_factory=dict)
    asymmetry: float = 0.0

    @property
    def size(self) -> int:
        return self.entries.shape[0]


def build_fractional_matrix(
    S: SpectralOperator, p: DomainPartition, s: float, sigma_digest: str = ""
) -> FractionalMatrix:
    """Dense ``L^s`` from a spectral decomposition."""
    A = fractional_matrix(S, s)
    A.setflags(write=False)
    return FractionalMatrix(A, p, check_order(s), sigma_digest)


def _cholesky(block: np.ndarray) -> tuple[np.ndarray, bool]:
    try:
        return sla.cho_factor(block, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"domain block of the fractional matrix is not positive definite ({exc})") from exc


def solve_exterior(A: FractionalMatrix, f: np.ndarray) -> np.ndarray:
    """Solve ``(L^s u)|_domain = 0`` with ``u = f`` off the domain.

    ``f`` may be given on all cells, on the exterior cells or on the window cells.
    """
    p = A.partition
    u = exterior_data(p, f)
    fac = _cholesky(A.omega_block)
    u[p.omega] = -sla.cho_solve(fac, A.omega_exterior @ u[p.exterior])
    res = np.linalg.norm((A.matrix @ u)[p.omega])
    bound = 1e-8 * np.linalg.norm(A.matrix, 2) * np.linalg.norm(u[p.exterior])
    if res > bound and res > 0:
        raise NumericalError(f"exterior solve residual {res:.3e} exceeds {bound:.3e}")
    return u


def _provenance(A: FractionalMatrix) -> dict:
    p = A.partition
    return {
        "sigma": A.sigma_digest,
        "grid": p.grid.digest(),
        "partition": p.digest(),
        "s": A.s,
    }


def _symmetrized(lam: np.ndarray) -> tuple[np.ndarray, float]:
    big = np.abs(lam).max()
    asym = float(np.abs(lam - lam.T).max() / big) if big > 0 else 0.0
    return 0.5 * (lam + lam.T), asym


def assemble_dn(A: FractionalMatrix, method: str = "schur", threads: int = 1) -> DNMatrix:
    """DN matrix on the window.

    Parameters
    ----------
    method : {"schur", "columns"}
        ``"schur"`` forms ``A_WW - A_WO A_OO^{-1} A_OW``. ``"columns"`` applies
        ``L^s`` to the exterior solution for each window indicator.
    threads : int
        Worker count for column assembly.
    """
    p = A.partition
    W, O = p.window, p.omega
    if method == "schur":
        fac = _cholesky(A.omega_block)
        AOW = A.block(O, W)
        lam = A.block(W, W) - AOW.T @ sla.cho_solve(fac, AOW)
    elif method == "columns":

        def column(j: int) -> np.ndarray:
            e = np.zeros(W.size)
            e[j] = 1.0
            return (A.matrix @ solve_exterior(A, e))[W]

        with ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
            lam = np.column_stack(list(ex.map(column, range(W.size))))
    else:
        raise ValidationError(f"unknown DN assembly method {method!r}")
    sym, asym = _symmetrized(lam)
    return DNMatrix(sym, A.s, p.grid.cell_volume, _provenance(A), asym)


def dn_matrix(
    sigma: Conductivity,
    p: DomainPartition,
    s: float | None = None,
    face_mean: FaceMean = "arithmetic",
    spectral: SpectralOperator | None = None,
) -> DNMatrix:
    """DN matrix straight from a conductivity (Schur complement on domain and window rows only)."""
    s = sigma.s if s is None else check_order(s)
    S = spectral if spectral is not None else spectral_decompose(assemble_operator(p, sigma, face_mean))
    idx = np.concatenate([p.omega, p.window])
    A = fractional_matrix(S, s, idx)
    no = p.omega.size
    AOO, AOW, AWW = A[:no, :no], A[:no, no:], A[no:, no:]
    fac = _cholesky(AOO)
    lam = AWW - AOW.T @ sla.cho_solve(fac, AOW)
    prov = {"sigma": sigma.digest(), "grid": p.grid.digest(), "partition": p.digest(), "s": s}
    sym, asym = _symmetrized(lam)
    return DNMatrix(sym, s, p.grid.cell_volume, prov, asym)


def dn_pairing(lam: DNMatrix, f: np.ndarray, g: np.ndarray, cell_volume: float | None = None) -> float:
    """``f^T Lambda g * vol`` for window data ``f``, ``g``."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != (lam.size,) or g.shape != (lam.size,):
        raise ValidationError("pairing data must live on the window cells")
    vol = lam.cell_volume if cell_volume is None else cell_volume
    return float(0.5 * (f @ lam.entries @ g + g @ lam.entries @ f) * vol)

