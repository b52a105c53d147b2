"""Command-line entry point.

Usage::

    fracmono <command> --config <path> [--out <dir>] [--seed <int>] [--threads <int>]

The thread count defaults to the ``FRACMONO_THREADS`` environment variable.
Every run writes ``metrics.json``, ``provenance.json`` and one CSV file (with
a JSON sidecar) per table to the output directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
import scipy
import yaml
from threadpoolctl import threadpool_limits

from fracmono import __version__
from fracmono.domain import (
    Ball,
    Box,
    CellList,
    Conductivity,
    DomainPartition,
    Geometry,
    GridSpec,
    Shell,
    build_partition,
    make_conductivity,
)
from fracmono.errors import NumericalError, ValidationError
from fracmono.exterior import assemble_dn, build_fractional_matrix, dn_matrix, solve_exterior
from fracmono.extension import (
    build_ymesh,
    d_s_constant,
    default_height,
    energy_identity_check,
    neumann_trace,
    solve_extension,
)
from fracmono.monotonicity import FORMS, loewner_test, sandwich_battery, sandwich_pair
from fracmono.reconstruct import hausdorff_cells, reconstruct_inclusion, uniqueness_probe
from fracmono.runge import (
    beta_profile,
    energy_gram,
    harmonic_target,
    localized_sequence,
    profile_integral,
    runge_curve,
)
from fracmono.extension import ExtensionSolver
from fracmono.spectral import assemble_operator, fractional_apply, spectral_decompose

log = logging.getLogger("fracmono")

THREADS_ENV = "FRACMONO_THREADS"
COMMANDS = ("forward", "dnmap", "extension-check", "mono-test", "localize", "runge", "reconstruct", "uniqueness")


class ConfigError(ValidationError):
    """Malformed configuration; the message names the offending field."""


# ---------------------------------------------------------------- config


def _require(d: dict, key: str, where: str) -> Any:
    if not isinstance(d, dict) or key not in d or d[key] is None:
        raise ConfigError(f"{where}.{key}: required field missing")
    return d[key]


def parse_shape(spec: Any, where: str):
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ConfigError(f"{where}: expected exactly one of box, ball, shell, cells")
    kind, body = next(iter(spec.items()))
    try:
        if kind == "box":
            return Box(tuple(map(float, _require(body, "lo", f"{where}.box"))), tuple(map(float, _require(body, "hi", f"{where}.box"))))
        if kind == "ball":
            return Ball(tuple(map(float, _require(body, "center", f"{where}.ball"))), float(_require(body, "radius", f"{where}.ball")))
        if kind == "shell":
            return Shell(
                tuple(map(float, _require(body, "center", f"{where}.shell"))),
                float(_require(body, "inner", f"{where}.shell")),
                float(_require(body, "outer", f"{where}.shell")),
            )
        if kind == "cells":
            return CellList(tuple(int(c) for c in body))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}.{kind}: {exc}") from exc
    raise ConfigError(f"{where}: unknown shape kind {kind!r}")


@dataclass
class RunConfig:
    """Validated run configuration."""

    scenario: str
    grid: GridSpec
    geometry: Geometry
    s_values: list[float]
    lam: float
    face_mean: str
    conductivity: dict
    conductivity2: dict | None
    mesh: dict
    options: dict
    seed: int
    raw: dict = field(repr=False, default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config: top level must be a mapping")
        g = _require(raw, "grid", "config")
        try:
            grid = GridSpec(
                int(_require(g, "n_dims", "grid")),
                int(_require(g, "cells_per_axis", "grid")),
                float(_require(g, "half_width", "grid")),
            )
        except ValidationError as exc:
            raise ConfigError(f"grid: {exc}") from exc
        geo = _require(raw, "geometry", "config")
        geometry = Geometry(
            omega=parse_shape(_require(geo, "omega", "geometry"), "geometry.omega"),
            window=parse_shape(_require(geo, "window", "geometry"), "geometry.window"),
            b_set=parse_shape(geo["b_set"], "geometry.b_set") if geo.get("b_set") else None,
            d_set=parse_shape(geo["d_set"], "geometry.d_set") if geo.get("d_set") else None,
            o_set=parse_shape(geo["o_set"], "geometry.o_set") if geo.get("o_set") else None,
        )
        s_raw = raw.get("s", [0.5])
        s_values = [float(x) for x in (s_raw if isinstance(s_raw, list) else [s_raw])]
        for s in s_values:
            if not 0 < s < 1:
                raise ConfigError(f"s: value {s} outside (0, 1)")
        face_mean = raw.get("face_mean", "arithmetic")
        if face_mean not in ("arithmetic", "harmonic"):
            raise ConfigError(f"face_mean: unknown value {face_mean!r}")
        for key in ("conductivity", "conductivity2", "mesh", "options"):
            if raw.get(key) is not None and not isinstance(raw[key], dict):
                raise ConfigError(f"{key}: expected a mapping")
        return cls(
            scenario=str(raw.get("scenario", "unnamed")),
            grid=grid,
            geometry=geometry,
            s_values=s_values,
            lam=float(raw.get("lambda", 0.4)),
            face_mean=face_mean,
            conductivity=raw.get("conductivity") or {},
            conductivity2=raw.get("conductivity2"),
            mesh=raw.get("mesh") or {},
            options=raw.get("options") or {},
            seed=int(raw.get("seed", 0)),
            raw=raw,
        )

    def partition(self) -> DomainPartition:
        return build_partition(self.grid, self.geometry)

    def sigma(self, p: DomainPartition, which: str = "conductivity", s: float = 0.5) -> Conductivity:
        spec = self.conductivity if which == "conductivity" else self.conductivity2
        if spec is None:
            raise ConfigError(f"{which}: required for this command")
        pts = p.grid.centers()
        incl = []
        for i, item in enumerate(spec.get("inclusions", []) or []):
            where = f"{which}.inclusions[{i}]"
            shape = parse_shape(_require(item, "shape", where), f"{where}.shape")
            cells = np.flatnonzero(shape.contains(pts))
            cells = np.intersect1d(cells, p.omega)
            incl.append((cells, float(_require(item, "value", where))))
        return make_conductivity(p, float(spec.get("background", 1.0)), incl, self.lam, s)

    def ymesh(self, p: DomainPartition, s: float, intervals: int | None = None, height: float | None = None):
        M = int(intervals if intervals is not None else self.mesh.get("intervals", 128))
        Y = height if height is not None else self.mesh.get("height")
        Y = float(Y) if Y is not None else default_height(p)
        return build_ymesh(s, M, Y, self.mesh.get("grading"))


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path} ({exc.strerror})") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config: not valid YAML/JSON ({exc})") from exc
    return RunConfig.from_dict(raw)


# ---------------------------------------------------------------- results


@dataclass
class Table:
    columns: list[str]
    data: np.ndarray
    op: str
    description: str = ""


@dataclass
class ResultBundle:
    """Metrics tagged by producing operation, CSV tables and provenance."""

    metrics: list[dict] = field(default_factory=list)
    tables: dict[str, Table] = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def metric(self, name: str, value: Any, op: str, **tags: Any) -> None:
        self.metrics.append({"name": name, "value": _plain(value), "op": op, **{k: _plain(v) for k, v in tags.items()}})

    def table(self, name: str, columns: list[str], rows: Any, op: str, description: str = "") -> None:
        arr = np.atleast_2d(np.asarray(rows, dtype=float))
        if arr.size == 0:
            arr = arr.reshape(0, len(columns))
        self.tables[name] = Table(columns, arr, op, description)

    def write(self, out: Path) -> None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(json.dumps({"metrics": self.metrics}, indent=2, sort_keys=True) + "\n")
        for name, t in self.tables.items():
            path = out / f"{name}.csv"
            lines = [",".join(t.columns)] + [",".join(_fmt(x) for x in row) for row in t.data]
            path.write_text("\n".join(lines) + "\n")
            meta = {
                "file": path.name,
                "columns": t.columns,
                "shape": list(t.data.shape),
                "op": t.op,
                "description": t.description,
                "sha256": hashlib.sha256(path.read_bytes()).hexdigest(),
            }
            (out / f"{name}.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        (out / "provenance.json").write_text(json.dumps(self.provenance, indent=2, sort_keys=True) + "\n")

    def digest(self) -> str:
        h = hashlib.sha256(json.dumps(self.metrics, sort_keys=True).encode())
        for name in sorted(self.tables):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.tables[name].data).tobytes())
        return h.hexdigest()


def _fmt(x: float) -> str:
    return repr(float(x))


def _plain(v: Any) -> Any:
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.ndarray):
        return [_plain(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def _window_data(cfg: RunConfig, p: DomainPartition, rng: np.random.Generator) -> np.ndarray:
    spec = cfg.options.get("data", "random")
    if spec == "random":
        return rng.standard_normal(p.window.size)
    if spec == "ones":
        return np.ones(p.window.size)
    if isinstance(spec, list):
        f = np.asarray(spec, dtype=float)
        if f.shape != (p.window.size,):
            raise ConfigError(f"options.data: expected {p.window.size} values, got {f.size}")
        return f
    raise ConfigError(f"options.data: expected 'random', 'ones' or a list, got {spec!r}")


# ---------------------------------------------------------------- commands


def cmd_forward(cfg: RunConfig, rng: np.random.Generator, threads: int) -> ResultBundle:
    res = ResultBundle()
    p = cfg.partition()
    f = _window_data(cfg, p, rng)
    for s in cfg.s_values:
        sig = cfg.sigma(p, s=s)
        S = spectral_decompose(assemble_operator(p, sig, cfg.face_mean))
        A = build_fractional_matrix(S, p, s, sig.digest())
        u = solve_exterior(A, f)
        resid = float(np.linalg.norm((A.matrix @ u)[p.omega]))
        tag = f"s{s:g}"
        res.metric("omega_residual", resid, "solve_exterior", s=s)
        res.metric("max_abs_u_omega", float(np.abs(u[p.omega]).max()), "solve_exterior", s=s)
        cols = [f"x{i}" for i in range(p.grid.n_dims)]
        res.table(f"u_{tag}", ["cell", *cols, "u"], np.column_stack([np.arange(p.n_cells), p.grid.centers(), u]), "solve_exterior")
    return res


def _r_doubling_change(cfg: RunConfig, p: DomainPartition, s: float) -> float:
    g = cfg.grid
    big = GridSpec(g.n_dims, 2 * g.cells_per_axis, 2 * g.half_width)
    pb = build_partition(big, cfg.geometry)
    if pb.window.size != p.window.size:
        raise ValidationError("window rasterizes differently on the doubled box")
    lam = dn_matrix(cfg.sigma(p, s=s), p, s, cfg.face_mean).entries
    lam_b = dn_matrix(cfg.sigma(pb, s=s), pb, s, cfg.face_mean).entries
    return float(np.max(np.abs(lam_b - lam) / np.abs(lam)))


def cmd_dnmap(cfg: RunConfig, rng: np.random.Generator, threads: int) -> ResultBundle:
    res = ResultBundle()
    p = cfg.partition()
    for s in cfg.s_values:
        sig = cfg.sigma(p, s=s)
        S = spectral_decompose(assemble_operator(p, sig, cfg.face_mean))
        A = build_fractional_matrix(S, p, s, sig.digest())
        schur = assemble_dn(A, "schur")
        cols = assemble_dn(A, "columns", threads)
        big = np.abs(schur.entries).max()
        res.metric("asymmetry", schur.asymmetry, "assemble_dn", s=s)
        res.metric("schur_vs_columns", float(np.abs(schur.entries - cols.entries).max() / big), "assemble_dn", s=s)
        res.metric("min_eigenvalue", float(np.linalg.eigvalsh(schur.entries)[0]), "assemble_dn", s=s)
        if cfg.options.get("r_doubling", False):
            res.metric("r_doubling_change", _r_doubling_change(cfg, p, s), "assemble_dn", s=s)
        res.table(f"dn_s{s:g}", [f"w{j}" for j in range(p.window.size)], schur.entries, "assemble_dn", "DN matrix in the window cell basis")
    return res


def cmd_extension_check(cfg: RunConfig, rng: np.random.Generator, threads: int) -> ResultBundle:
    res = ResultBundle()
    p = cfg.partition()
    f = _window_data(cfg, p, rng)
    levels = [int(m) for m in cfg.options.get("levels", [64, 128, 256])]
    rows = []
    for s in cfg.s_values:
        sig = cfg.sigma(p, s=s)
        S = spectral_decompose(assemble_operator(p, sig, cfg.face_mean))
        u = solve_exterior(build_fractional_matrix(S, p, s), f)
        ref = fractional_apply(S, s, u)[p.window]
        errs, gaps = [], []
        for M in levels:
            mesh = cfg.ymesh(p, s, intervals=M)
            field_ = solve_extension(sig, p, mesh, f, cfg.face_mean)
            tr = neumann_trace(field_, mesh)[p.window] / d_s_constant(s)
            err = float(np.linalg.norm(tr - ref) / np.linalg.norm(ref))
            gap = energy_identity_check(sig, p, mesh, f, cfg.face_mean).gap
            errs.append(err)
            gaps.append(gap)
            rows.append([s, M, err, gap])
        res.metric("trace_error", errs[-1], "neumann_trace", s=s, intervals=levels[-1])
        res.metric("trace_error_decreasing", bool(np.all(np.diff(errs) < 0)), "neumann_trace", s=s)
        res.metric("identity_gap", gaps[-1], "energy_identity_check", s=s, intervals=levels[-1])
        mesh = cfg.ymesh(p, s, intervals=levels[-1])
        mesh2 = cfg.ymesh(p, s, intervals=levels[-1], height=2 * mesh.height)
        t1 = neumann_trace(solve_extension(sig, p, mesh, f, cfg.face_mean), mesh)[p.window]
        t2 = neumann_trace(solve_extension(sig, p, mesh2, f, cfg.face_mean), mesh2)[p.window]
        res.metric("y_doubling_change", float(np.linalg.norm(t2 - t1) / np.linalg.norm(t1)), "neumann_trace", s=s)
    res.table("refinement", ["s", "intervals", "trace_error", "identity_gap"], rows, "neumann_trace", "error vs y-refinement")
    return res


def cmd_mono_test(cfg: RunConfig, rng: np.random.Generator, threads: int) -> ResultBundle:
    res = ResultBundle()
    p = cfg.partition()
    abs_tol = float(cfg.options.get("abs_tol", 1e-8))
    rel_tol = float(cfg.options.get("rel_tol", 0.05))
    M = int(cfg.mesh.get("intervals", 128))
    rows = []
    if cfg.conductivity2 is not None:
        f = _window_data(cfg, p, rng)
        for s in cfg.s_values:
            sig1, sig2 = cfg.sigma(p, s=s), cfg.sigma(p, "conductivity2", s=s)
            mesh = cfg.ymesh(p, s)
            reps = sandwich_pair(sig1, sig2, p, mesh, f, cfg.face_mean)
            verdict = loewner_test(dn_matrix(sig1, p, s, cfg.face_mean), dn_matrix(sig2, p, s, cfg.face_mean))
            for k, form in enumerate(FORMS):
                r = reps[form]
                rows.append([0, s, k, r.lower, r.middle, r.upper, *r.violations])
                res.metric("max_violation", max(r.violations), "verify_sandwich", s=s, form=form)
                res.metric("max_gap", max(abs(r.lower), abs(r.middle), abs(r.upper)), "verify_sandwich", s=s, form=form)
            res.metric("loewner", verdict.classification, "loewner_test", s=s)
    else:
        records = sandwich_battery(
            p, cfg.s_values, int(cfg.options.get("pairs", 20)), int(rng.integers(2**31)), M,
            cfg.mesh.get("height"), cfg.face_mean,
        )
        n_ok = n_psd = 0
        for rec in records:
            ok = all(r.within(abs_tol, rel_tol) for r in rec.reports.values())
            n_ok += ok
            n_psd += rec.verdict.classification == "PSD" and rec.verdict.min_eig >= -1e-8 * rec.verdict.scale
            for k, form in enumerate(FORMS):
                r = rec.reports[form]
                rows.append([rec.trial, rec.s, k, r.lower, r.middle, r.upper, *r.violations])
        res.metric("runs", len(records), "sandwich_battery")
        res.metric("sandwich_within_tolerance", n_ok, "verify_sandwich")
        res.metric("loewner_psd", n_psd, "loewner_test")
    res.table(
        "sandwich", ["trial", "s", "form", "lower", "middle", "upper", "violation_lower", "violation_upper"], rows,
        "verify_sandwich", "form 0 = lemma31_first, 1 = lemma31_second",
    )
    return res


def _reference_mesh(cfg: RunConfig, p: DomainPartition, s: float, need: float = 0.0):
    Y = cfg.mesh.get("height")
    Y = float(Y) if Y is not None else max(default_height(p), need)
    return cfg.ymesh(p, s, height=Y)


def cmd_localize(cfg: RunConfig, rng: np.random.Generator, threads: int) -> ResultBundle:
    res = ResultBundle()
    p = cfg.partition()
    if p.b_set is None or p.d_set is None:
        raise ConfigError("geometry.b_set / geometry.d_set: required for localize")
    steps = int(cfg.options.get("steps", 6))
    eps_rel = float(cfg.options.get("eps0_relative", 1e-2))
    rows = []
    for s in cfg.s_values:
        sig = cfg.sigma(p, s=s)
        mesh = cfg.ymesh(p, s)
        F = ExtensionSolver(sig, p, mesh, cfg.face_mean).window_fields()
        G_B = energy_gram(sig, p, mesh, p.b_set, fields=F)
        G_D = energy_gram(sig, p, mesh, p.d_set, fields=F)
        seq = localized_sequence(G_B, G_D, steps, eps_rel * np.linalg.norm(G_D.matrix, 2))
        for i in range(seq.energy_b.size):
            rows.append([s, i + 1, seq.eps[i], seq.energy_b[i], seq.energy_d[i], seq.ratios[i]])
        res.metric("final_ratio", float(seq.ratios[-1]), "localized_sequence", s=s)
        res.metric("energy_b_growth", float(seq.energy_b[-1] / seq.energy_b[0]), "localized_sequence", s=s)
        res.metric("completed", seq.completed, "localized_sequence", s=s)
    res.table("localized", ["s", "step", "eps", "energy_b", "energy_d", "ratio"], rows, "localized_sequence", "energy vs step")
    return res


def cmd_runge(cfg: RunConfig, rng: np.random.Generator, threads: int) -> ResultBundle:
    res = ResultBundle()
    p = cfg.partition()
    ks = [int(k) for k in cfg.options.get("k_values", [1, 2, 4, 8])]
    brow = []
    for s in cfg.s_values:
        for k in ks:
            b = beta_profile(k, s)
            brow.append([k, s, b.b, b.plateau_right, b.normalization_error, b.derivative_bound(1), b.derivative_bound(2)])
            res.metric("normalization_error", b.normalization_error, "beta_profile", k=k, s=s)
    res.table("beta", ["k", "s", "b", "plateau_right", "normalization_error", "d1_bound", "d2_bound"], brow, "beta_profile")
    if p.b_set is not None and p.d_set is not None:
        rows = []
        for s in cfg.s_values:
            sig = cfg.sigma(p, s=s)
            beta = beta_profile(1, s)
            mesh = _reference_mesh(cfg, p, s, beta.plateau_right + 2.0)
            curve = runge_curve(harmonic_target(p, sig, cfg.face_mean), beta, sig, p, mesh, face_mean=cfg.face_mean)
            for m, rx, rf in zip(curve.basis_sizes, curve.relative_x, curve.relative_full):
                rows.append([s, m, rx, rf])
            res.metric("relative_residual_x", float(curve.relative_x[-1]), "runge_residual", s=s)
            res.metric("relative_residual_full", float(curve.relative_full[-1]), "runge_residual", s=s)
            res.metric("nonincreasing", bool(np.all(np.diff(curve.residual_x) <= 0)), "runge_residual", s=s)
            res.metric("target_touches_boundary", curve.touches_boundary, "runge_residual", s=s)
        res.table("runge", ["s", "basis_size", "relative_residual_x", "relative_residual_full"], rows, "runge_residual", "residual vs m")
    return res


def cmd_reconstruct(cfg: RunConfig, rng: np.random.Generator, threads: int) -> ResultBundle:
    res = ResultBundle()
    p = cfg.partition()
    betas = [float(b) for b in cfg.options.get("betas", [0.5])]
    tol = float(cfg.options.get("tol", 1e-8))
    noise = float(cfg.options.get("noise", 0.0))
    s = cfg.s_values[0]
    sig_true = cfg.sigma(p, s=s)
    bg = float(cfg.conductivity.get("background", 1.0))
    sig0 = make_conductivity(p, bg, (), cfg.lam, s)
    lam = dn_matrix(sig_true, p, s, cfg.face_mean)
    if noise > 0:
        E = rng.standard_normal(lam.entries.shape)
        E = 0.5 * (E + E.T)
        E *= noise * np.linalg.norm(lam.entries, 2) / np.linalg.norm(E, 2)
        lam = type(lam)(lam.entries + E, lam.s, lam.cell_volume, lam.provenance, lam.asymmetry)
        tol = max(tol, 2.0 * noise * np.linalg.norm(lam.entries, 2))
    truth = np.flatnonzero(np.abs(sig_true.values - bg) > 0)
    region = p.omega
    rows = []
    insides = []
    for beta in betas:
        rmap = reconstruct_inclusion(lam, sig0, p, region, beta, tol, "raise", threads, cfg.face_mean)
        for r in rmap.results:
            code = {"inside": 1, "outside": 0, "undecided": -1}[r.decision]
            rows.append([beta, r.pixel[0], *p.grid.multi_index([r.pixel[0]])[0], code, r.verdict.min_eig, r.verdict.scale])
        ins = rmap.inside
        insides.append(set(ins.tolist()))
        res.metric("inside_count", int(ins.size), "reconstruct_inclusion", beta=beta)
        if truth.size:
            res.metric("hausdorff", hausdorff_cells(p, ins, truth), "reconstruct_inclusion", beta=beta)
    nested = all(insides[i + 1] <= insides[i] for i in range(len(insides) - 1)) if sorted(betas) == betas else None
    res.metric("nested", nested, "reconstruct_inclusion")
    idx_cols = [f"i{a}" for a in range(p.grid.n_dims)]
    res.table("pixels", ["beta", "cell", *idx_cols, "decision", "min_eig", "scale"], rows, "pixel_test", "decision: 1 inside, 0 outside, -1 undecided")
    return res


def cmd_uniqueness(cfg: RunConfig, rng: np.random.Generator, threads: int) -> ResultBundle:
    res = ResultBundle()
    p = cfg.partition()
    if p.o_set is None:
        raise ConfigError("geometry.o_set: required for uniqueness")
    O = p.o_set
    delta = float(cfg.options.get("delta_min", 0.1))
    floor = float(cfg.options.get("noise_floor", 1e-10))
    s = cfg.s_values[0]
    rows = []
    pairs: list[tuple[Conductivity, Conductivity]] = []
    if cfg.conductivity2 is not None:
        pairs.append((cfg.sigma(p, s=s), cfg.sigma(p, "conductivity2", s=s)))
    else:
        for _ in range(int(cfg.options.get("pairs", 10))):
            base = np.ones(p.n_cells)
            base[p.omega] = rng.uniform(1.0, 1.5, p.omega.size)
            bump = np.zeros(p.n_cells)
            k = rng.choice(O, size=min(2, O.size), replace=False)
            bump[k] = rng.uniform(delta, 0.5, k.size)
            s2 = Conductivity(base, p.omega, cfg.lam, s)
            s1 = Conductivity(base + bump, p.omega, cfg.lam, s)
            pairs.append((s1, s2))
    localize = bool(cfg.options.get("localize", True))
    for i, (s1, s2) in enumerate(pairs):
        rep = uniqueness_probe(s1, s2, p, O, delta, floor, localize=localize, face_mean=cfg.face_mean)
        detected = rep.conclusion == "contradiction-detected"
        ratio = float(rep.localized.ratios[-1]) if rep.localized is not None and rep.localized.ratios.size else np.nan
        lb = rep.lower_bound if rep.lower_bound is not None else np.nan
        rows.append([i, rep.dn_gap, rep.coefficient_gap, float(detected), ratio, lb])
        res.metric("dn_gap", rep.dn_gap, "uniqueness_probe", pair=i)
        res.metric("conclusion", rep.conclusion, "uniqueness_probe", pair=i)
    res.table("uniqueness", ["pair", "dn_gap", "coefficient_gap", "detected", "localized_ratio", "lower_bound"], rows, "uniqueness_probe")
    return res


HANDLERS: dict[str, Callable[[RunConfig, np.random.Generator, int], ResultBundle]] = {
    "forward": cmd_forward,
    "dnmap": cmd_dnmap,
    "extension-check": cmd_extension_check,
    "mono-test": cmd_mono_test,
    "localize": cmd_localize,
    "runge": cmd_runge,
    "reconstruct": cmd_reconstruct,
    "uniqueness": cmd_uniqueness,
}


def run(command: str, cfg: RunConfig, seed: int | None = None, threads: int = 1) -> ResultBundle:
    """Execute one command and attach provenance."""
    if command not in HANDLERS:
        raise ValidationError(f"unknown command {command!r}")
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    # OpenBLAS sizes its buffers for the core count at load; raising past it crashes
    blas_threads = max(1, min(threads, os.cpu_count() or 1))
    with threadpool_limits(limits=blas_threads):
        bundle = HANDLERS[command](cfg, rng, threads)
    cfg_text = json.dumps(cfg.raw, sort_keys=True, default=str)
    bundle.provenance = {
        "command": command,
        "scenario": cfg.scenario,
        "config_sha256": hashlib.sha256(cfg_text.encode()).hexdigest(),
        "seed": seed,
        "threads": threads,
        "versions": {
            "fracmono": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }
    bundle.provenance["result_sha256"] = bundle.digest()
    return bundle


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # usage errors exit 1, not 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="fracmono", description="Fractional conductivity operators and monotonicity tests.")
    ap.add_argument("command", choices=COMMANDS, metavar="command", help=" | ".join(COMMANDS))
    ap.add_argument("--config", required=True, help="YAML or JSON run configuration")
    ap.add_argument("--out", default="results", help="output directory (default: results)")
    ap.add_argument("--seed", type=int, default=None, help="random seed (overrides config)")
    ap.add_argument("--threads", type=int, default=None, help=f"worker threads (default: ${THREADS_ENV} or 1)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _threads(flag: int | None) -> int:
    if flag is not None:
        return max(1, flag)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ValidationError(f"{THREADS_ENV} must be an integer, got {env!r}") from exc
    return 1


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        bundle = run(args.command, cfg, args.seed, _threads(args.threads))
        bundle.write(Path(args.out))
    except ValidationError as exc:
        print(f"fracmono: validation error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"fracmono: numerical failure: {exc}", file=sys.stderr)
        return 2
    log.info("wrote %s", args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
