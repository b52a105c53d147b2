"""Pixel-wise monotonicity tests, inclusion reconstruction and uniqueness probes."""

from __future__ import annotations

from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from scipy.spatial.distance import directed_hausdorff

from fracmono.domain import Conductivity, DomainPartition
from fracmono.errors import ValidationError
from fracmono.exterior import DNMatrix, dn_matrix, dn_pairing
from fracmono.extension import ExtensionSolver, YMesh, build_ymesh, d_s_constant, default_height, energy
from fracmono.monotonicity import LoewnerVerdict, loewner_test
from fracmono.runge import LocalizedSequence, energy_gram, localized_sequence
from fracmono.spectral import FaceMean

__all__ = [
    "PixelTestResult",
    "ReconstructionMap",
    "UniquenessReport",
    "DNCache",
    "pixel_test",
    "reconstruct_inclusion",
    "uniqueness_probe",
    "hausdorff_cells",
]

Side = Literal["raise", "lower"]
Decision = Literal["inside", "outside", "undecided"]


class DNCache:
    """Small LRU cache of DN matrices keyed by conductivity digest and order."""

    def __init__(self, p: DomainPartition, face_mean: FaceMean = "arithmetic", maxsize: int = 64) -> None:
        self.partition = p
        self.face_mean = face_mean
        self.maxsize = maxsize
        self._store: OrderedDict[tuple[str, float], DNMatrix] = OrderedDict()

    def get(self, sigma: Conductivity, s: float) -> DNMatrix:
        key = (sigma.digest(), float(s))
        if key in self._store:
            self._store.move_to_end(key)
            return self._store[key]
        lam = dn_matrix(sigma, self.partition, s, self.face_mean)
        self._store[key] = lam
        if len(self._store) > self.maxsize:
            self._store.popitem(last=False)
        return lam


@dataclass(frozen=True)
class PixelTestResult:
    pixel: tuple[int, ...]
    beta: float
    side: str
    verdict: LoewnerVerdict
    decision: Decision


def pixel_test(
    lam_meas: DNMatrix,
    sigma0: Conductivity,
    p: DomainPartition,
    pixel: Sequence[int] | int,
    beta: float,
    side: Side = "raise",
    tol: float = 1e-8,
    cache: DNCache | None = None,
) -> PixelTestResult:
    """Compare the measured map with the map of ``sigma0 +/- beta`` on one pixel.

    For ``side="raise"`` the pixel is "inside" when ``Lambda_meas - Lambda_test``
    is PSD. For ``side="lower"`` it is "inside" when that difference is NSD.
    A zero difference carries no information and is "undecided".
    """
    if not beta > 0:
        raise ValidationError(f"test contrast must be positive, got {beta}")
    if side not in ("raise", "lower"):
        raise ValidationError(f"unknown side {side!r}")
    cells = np.atleast_1d(np.asarray(pixel, dtype=int))
    if not np.all(np.isin(cells, p.omega)):
        raise ValidationError("pixel must lie in omega")
    vals = sigma0.values.copy()
    vals[cells] += beta if side == "raise" else -beta
    bad = cells[(vals[cells] < sigma0.lam) | (vals[cells] > 1.0 / sigma0.lam)]
    if bad.size:
        raise ValidationError(f"ellipticity violated by the test coefficient at cell {int(bad[0])}")
    test = Conductivity(vals, sigma0.omega, sigma0.lam, sigma0.s)
    lam_test = cache.get(test, lam_meas.s) if cache is not None else dn_matrix(test, p, lam_meas.s)
    verdict = loewner_test(lam_meas, lam_test, tol)
    want = "PSD" if side == "raise" else "NSD"
    if verdict.classification == "zero":
        decision: Decision = "undecided"
    elif verdict.classification == want:
        decision = "inside"
    else:
        decision = "outside"
    return PixelTestResult(tuple(int(c) for c in cells), float(beta), side, verdict, decision)


@dataclass(frozen=True)
class ReconstructionMap:
    results: tuple[PixelTestResult, ...]

    @property
    def decisions(self) -> dict[int, str]:
        return {r.pixel[0]: r.decision for r in self.results}

    @property
    def inside(self) -> np.ndarray:
        return np.array(sorted(r.pixel[0] for r in self.results if r.decision == "inside"), dtype=int)


def reconstruct_inclusion(
    lam_meas: DNMatrix,
    sigma0: Conductivity,
    p: DomainPartition,
    test_region: Sequence[int] | np.ndarray,
    beta: float,
    tol: float = 1e-8,
    side: Side = "raise",
    threads: int = 1,
    face_mean: FaceMean = "arithmetic",
) -> ReconstructionMap:
    """Run ``pixel_test`` on every cell of ``test_region``, in index order."""
    region = np.unique(np.asarray(test_region, dtype=int))

    def one(c: int) -> PixelTestResult:
        return pixel_test(lam_meas, sigma0, p, [c], beta, side, tol, DNCache(p, face_mean, maxsize=1))

    with ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
        results = tuple(ex.map(one, region.tolist()))
    return ReconstructionMap(results)


def hausdorff_cells(p: DomainPartition, a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric Hausdorff distance between two cell sets, in cell widths."""
    a = np.asarray(a, dtype=int)
    b = np.asarray(b, dtype=int)
    if a.size == 0 and b.size == 0:
        return 0.0
    if a.size == 0 or b.size == 0:
        return float("inf")
    ia = p.grid.multi_index(a).astype(float)
    ib = p.grid.multi_index(b).astype(float)
    return float(max(directed_hausdorff(ia, ib)[0], directed_hausdorff(ib, ia)[0]))


@dataclass(frozen=True)
class UniquenessReport:
    """Desk-scale check that ordered coefficients differing on O give different DN maps."""

    region: tuple[int, ...]
    direction: str
    dn_gap: float
    coefficient_gap: float
    conclusion: Literal["consistent", "contradiction-detected"]
    localized: LocalizedSequence | None = None
    lower_bound: float | None = None
    dn_pairing_gap: float | None = None


def uniqueness_probe(
    sigma1: Conductivity,
    sigma2: Conductivity,
    p: DomainPartition,
    O: Sequence[int] | np.ndarray,
    delta_min: float,
    noise_floor: float = 1e-10,
    mesh: YMesh | None = None,
    localize: bool = True,
    steps: int = 6,
    face_mean: FaceMean = "arithmetic",
) -> UniquenessReport:
    """Compare DN maps of two coefficients ordered on ``O`` and equal elsewhere.

    ``conclusion`` is "contradiction-detected" when the coefficient gap on ``O``
    is positive and at least ``delta_min`` and the spectral norm of the DN
    difference exceeds ``noise_floor``. With ``localize``, a localized
    sequence is run with B the cells where the gap reaches ``delta_min`` and
    D the domain minus ``O``. The report then includes the energy lower bound
    and the DN pairing for the last datum.
    """
    O = np.unique(np.asarray(O, dtype=int))
    if not np.all(np.isin(O, p.omega)):
        raise ValidationError("O must lie in omega")
    diff = sigma1.values - sigma2.values
    outside = np.setdiff1d(np.arange(p.n_cells), O)
    if np.any(diff[outside] != 0):
        raise ValidationError("coefficients must agree outside O")
    if np.all(diff[O] >= 0):
        direction, hi, lo, sign = "sigma1>=sigma2", sigma1, sigma2, 1.0
    elif np.all(diff[O] <= 0):
        direction, hi, lo, sign = "sigma2>=sigma1", sigma2, sigma1, -1.0
    else:
        raise ValidationError("coefficients are not ordered on O")
    s = sigma1.s
    lam1 = dn_matrix(sigma1, p, s, face_mean)
    lam2 = dn_matrix(sigma2, p, s, face_mean)
    dn_gap = float(np.linalg.norm(lam1.entries - lam2.entries, 2))
    coef_gap = float(np.max(np.abs(diff[O]))) if O.size else 0.0
    detected = coef_gap > 0 and coef_gap >= delta_min and dn_gap > noise_floor
    conclusion = "contradiction-detected" if detected else "consistent"

    seq = lower = pairing = None
    B = O[np.abs(diff[O]) >= max(delta_min, np.finfo(float).tiny)]
    D = np.setdiff1d(p.omega, O)
    if localize and B.size and D.size:
        mesh = mesh if mesh is not None else build_ymesh(s, 128, default_height(p))
        solver = ExtensionSolver(hi, p, mesh, face_mean)
        F = solver.window_fields()
        G_B = energy_gram(hi, p, mesh, B, fields=F)
        G_D = energy_gram(hi, p, mesh, D, fields=F)
        eps0 = 1e-2 * max(np.linalg.norm(G_D.matrix, 2), np.finfo(float).tiny)
        seq = localized_sequence(G_B, G_D, steps, eps0)
        if seq.data.shape[0]:
            f = seq.data[-1]
            field = solver.solve(f)
            lower = energy(field, mesh, p, O, sign * diff).value
            lam_hi, lam_lo = (lam1, lam2) if sign > 0 else (lam2, lam1)
            pairing = d_s_constant(s) * (dn_pairing(lam_hi, f, f) - dn_pairing(lam_lo, f, f))
    return UniquenessReport(tuple(int(c) for c in O), direction, dn_gap, coef_gap, conclusion, seq, lower, pairing)
