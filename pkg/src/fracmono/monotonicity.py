"""Loewner comparisons of DN matrices and the energy sandwich bounds."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from fracmono.domain import Conductivity, DomainPartition, conductivity_from_values
from fracmono.errors import ValidationError
from fracmono.exterior import DNMatrix, dn_matrix, dn_pairing
from fracmono.extension import ExtensionSolver, YMesh, build_ymesh, d_s_constant, default_height, energy
from fracmono.spectral import FaceMean, SpectralOperator, assemble_operator, spectral_decompose

__all__ = [
    "LoewnerVerdict",
    "SandwichReport",
    "loewner_test",
    "verify_sandwich",
    "sandwich_pair",
    "random_ordered_pair",
    "BatteryRecord",
    "sandwich_battery",
    "FORMS",
]

Classification = Literal["PSD", "NSD", "indefinite", "zero"]
FORMS = ("lemma31_first", "lemma31_second")

# relative size below which a difference of DN matrices counts as zero
_ZERO_FLOOR = 1e-13


@dataclass(frozen=True)
class LoewnerVerdict:
    """Eigenvalue summary of ``Lambda1 - Lambda2``; ``scale`` is its spectral norm."""

    min_eig: float
    max_eig: float
    classification: Classification
    tolerance: float
    scale: float

    def flipped(self) -> "LoewnerVerdict":
        swap = {"PSD": "NSD", "NSD": "PSD"}.get(self.classification, self.classification)
        return LoewnerVerdict(-self.max_eig, -self.min_eig, swap, self.tolerance, self.scale)


def loewner_test(lam1: DNMatrix, lam2: DNMatrix, tol: float = 1e-8) -> LoewnerVerdict:
    """Classify ``Lambda1 - Lambda2`` in the Loewner order.

    PSD when ``min_eig >= -tol * scale`` and NSD when ``max_eig <= tol * scale``.
    The difference is "zero" when its norm is negligible next to the maps.
    """
    if lam1.size != lam2.size:
        raise ValidationError("DN matrices live on different windows")
    for key in ("grid", "partition", "s"):
        a, b = lam1.provenance.get(key), lam2.provenance.get(key)
        if a is not None and b is not None and a != b:
            raise ValidationError(f"DN matrices have mismatched provenance ({key})")
    D = lam1.entries - lam2.entries
    ev = np.linalg.eigvalsh(0.5 * (D + D.T))
    scale = float(np.max(np.abs(ev)))
    ref = max(np.linalg.norm(lam1.entries, 2), np.linalg.norm(lam2.entries, 2))
    lo, hi = float(ev[0]), float(ev[-1])
    if scale <= _ZERO_FLOOR * ref:
        cls: Classification = "zero"
    elif lo >= -tol * scale:
        cls = "PSD"
    elif hi <= tol * scale:
        cls = "NSD"
    else:
        cls = "indefinite"
    return LoewnerVerdict(lo, hi, cls, tol, scale)


@dataclass(frozen=True)
class SandwichReport:
    """``lower <= middle <= upper`` check; violations are the positive parts of the failures."""

    lower: float
    middle: float
    upper: float
    form: str

    @property
    def violations(self) -> tuple[float, float]:
        return max(self.lower - self.middle, 0.0), max(self.middle - self.upper, 0.0)

    def within(self, abs_tol: float = 1e-8, rel_tol: float = 0.05) -> bool:
        allow = abs_tol + rel_tol * abs(self.middle)
        return max(self.violations) <= allow


def sandwich_pair(
    sigma1: Conductivity,
    sigma2: Conductivity,
    p: DomainPartition,
    mesh: YMesh,
    f: np.ndarray,
    face_mean: FaceMean = "arithmetic",
    spectral1: SpectralOperator | None = None,
    spectral2: SpectralOperator | None = None,
) -> dict[str, SandwichReport]:
    """Both sandwich forms for one datum ``f`` on the window; they share the middle term."""
    f = np.asarray(f, dtype=float)
    if f.shape != (p.window.size,):
        raise ValidationError("sandwich data must live on the window cells")
    s = mesh.s
    lam1 = dn_matrix(sigma1, p, s, face_mean, spectral1)
    lam2 = dn_matrix(sigma2, p, s, face_mean, spectral2)
    middle = d_s_constant(s) * (dn_pairing(lam1, f, f) - dn_pairing(lam2, f, f))
    u1 = ExtensionSolver(sigma1, p, mesh, face_mean).solve(f)
    u2 = ExtensionSolver(sigma2, p, mesh, face_mean).solve(f)
    diff = sigma1.values - sigma2.values
    ratio = sigma2.values / sigma1.values * diff
    O = p.omega
    upper = energy(u2, mesh, p, O, diff).value
    return {
        "lemma31_first": SandwichReport(energy(u1, mesh, p, O, diff).value, middle, upper, "lemma31_first"),
        "lemma31_second": SandwichReport(energy(u2, mesh, p, O, ratio).value, middle, upper, "lemma31_second"),
    }


def verify_sandwich(
    sigma1: Conductivity,
    sigma2: Conductivity,
    p: DomainPartition,
    mesh: YMesh,
    f: np.ndarray,
    form: str = "lemma31_first",
    face_mean: FaceMean = "arithmetic",
) -> SandwichReport:
    """One sandwich form.

    The first form bounds ``d_s <(Lambda1 - Lambda2) f, f>`` below by the
    energy of the first extension and above by that of the second, both with
    density ``sigma1 - sigma2``. The second form uses the second extension on
    both sides and the density ``sigma2/sigma1 (sigma1 - sigma2)`` below.
    """
    if form not in FORMS:
        raise ValidationError(f"unknown sandwich form {form!r}")
    return sandwich_pair(sigma1, sigma2, p, mesh, f, face_mean)[form]


def _bump_field(x: np.ndarray, omega_pts: np.ndarray, rng: np.random.Generator, n_bumps: int) -> np.ndarray:
    out = np.zeros(len(x))
    lo, hi = omega_pts.min(axis=0), omega_pts.max(axis=0)
    width = float(np.max(hi - lo))
    for _ in range(n_bumps):
        c = rng.uniform(lo, hi)
        w = rng.uniform(0.05, 0.25) * width
        a = rng.uniform(0.2, 1.0)
        out += a * np.exp(-np.sum((x - c) ** 2, axis=1) / (2 * w**2))
    return out


def random_ordered_pair(
    p: DomainPartition, rng: np.random.Generator, lam: float = 0.4, s: float = 0.5, n_bumps: int = 3
) -> tuple[Conductivity, Conductivity]:
    """Random ``sigma1 >= sigma2`` on the domain, both in ``[1, 2]``.

    Each is background 1 plus nonnegative Gaussian bumps; the second is
    obtained from the first by subtracting further bumps and clipping at 1.
    """
    pts = p.grid.centers()[p.omega]
    s1 = np.minimum(1.0 + _bump_field(pts, pts, rng, n_bumps), 2.0)
    s2 = np.maximum(s1 - _bump_field(pts, pts, rng, n_bumps), 1.0)
    return conductivity_from_values(p, s1, lam, s), conductivity_from_values(p, s2, lam, s)


@dataclass(frozen=True)
class BatteryRecord:
    trial: int
    s: float
    reports: dict[str, SandwichReport]
    verdict: LoewnerVerdict


def sandwich_battery(
    p: DomainPartition,
    s_values: Sequence[float] = (0.25, 0.5, 0.75),
    n_pairs: int = 20,
    seed: int = 0,
    M: int = 128,
    height: float | None = None,
    face_mean: FaceMean = "arithmetic",
    tol: float = 1e-8,
) -> list[BatteryRecord]:
    """Sandwich forms and Loewner verdicts for random ordered pairs and each ``s``."""
    rng = np.random.default_rng(seed)
    Y = default_height(p) if height is None else height
    out: list[BatteryRecord] = []
    for trial in range(n_pairs):
        sig1, sig2 = random_ordered_pair(p, rng)
        f = rng.standard_normal(p.window.size)
        S1 = spectral_decompose(assemble_operator(p, sig1, face_mean))
        S2 = spectral_decompose(assemble_operator(p, sig2, face_mean))
        for s in s_values:
            mesh = build_ymesh(s, M, Y)
            reps = sandwich_pair(sig1, sig2, p, mesh, f, face_mean, S1, S2)
            verdict = loewner_test(dn_matrix(sig1, p, s, face_mean, S1), dn_matrix(sig2, p, s, face_mean, S2), tol)
            out.append(BatteryRecord(trial, s, reps, verdict))
    return out
