"""Convergence studies on the embedded domains: refine, solve, difference, rate."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .domains import DOMAINS, build_domain
from .fem import EmptyInterior, FEFunction, assemble, convergence_rates, prolong, solve
from .mesh import check_conformity, refine_mesh
from .weights import OutOfRange, kappa_from_a

__all__ = [
    "LEVEL_CAP", "ConfigError", "LevelCapExceeded", "ExperimentConfig", "LevelRecord", "RateTable",
    "run_experiment", "emit_table", "parse_config_text", "load_config",
]

LEVEL_CAP = 5

CSV_COLUMNS = ("level", "dofs", "tets", "h1_diff", "rate", "cg_iters", "seconds")


class ConfigError(ValueError):
    pass


class LevelCapExceeded(ConfigError):
    pass


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _opt_float(text):
    if text is None:
        return None
    if isinstance(text, str) and text.strip().lower() in ("", "none"):
        return None
    return float(text)


@dataclass(frozen=True)
class ExperimentConfig:
    """Parameters of one convergence study.

    Grading can be given as κ or as the exponent a (κ = 2^(-1/a)); when both
    are set for an entity the κ value must agree.
    """

    domain: str = "prism"
    kappa_edge: float | None = None
    kappa_vertex: float | None = None
    a_edge: float | None = None
    a_vertex: float | None = None
    levels: int = 5
    tol: float = 1e-10
    quad_order: int = 4
    allow_large: bool = False
    check_conformity: bool = True
    out: str | None = None
    format: str = "text"

    def __post_init__(self):
        for ent in ("edge", "vertex"):
            k, a = getattr(self, f"kappa_{ent}"), getattr(self, f"a_{ent}")
            if a is not None:
                try:
                    ka = kappa_from_a(a, 1)
                except OutOfRange as exc:
                    raise ConfigError(f"a_{ent}: {exc}") from None
                if k is not None and abs(k - ka) > 1e-12:
                    raise ConfigError(f"kappa_{ent}={k} and a_{ent}={a} disagree")
                object.__setattr__(self, f"kappa_{ent}", float(ka))
        self.validate()

    def validate(self) -> None:
        if self.domain not in DOMAINS:
            raise ConfigError(f"unknown domain {self.domain!r}; choose from {sorted(DOMAINS)}")
        for name in ("kappa_edge", "kappa_vertex"):
            k = getattr(self, name)
            if k is not None and not (0.0 < k <= 0.5):
                raise ConfigError(f"{name}={k} outside (0, 1/2]")
        if self.levels < 2:
            raise ConfigError("levels must be at least 2: a rate needs three solutions")
        if self.levels > LEVEL_CAP and not self.allow_large:
            raise LevelCapExceeded(f"levels={self.levels} exceeds the cap {LEVEL_CAP}; pass allow_large")
        if not (self.tol > 0):
            raise ConfigError("tol must be positive")
        if self.quad_order < 1:
            raise ConfigError("quad_order must be at least 1")
        if self.format not in ("text", "csv"):
            raise ConfigError(f"format must be 'text' or 'csv', got {self.format!r}")

    @property
    def kappa_e(self) -> float:
        return 0.5 if self.kappa_edge is None else self.kappa_edge

    @property
    def kappa_v(self) -> float:
        return 0.5 if self.kappa_vertex is None else self.kappa_vertex

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        """Build from string values (config files, CLI)."""
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for key, raw in values.items():
            k = key.strip().replace("-", "_")
            if k not in known:
                raise ConfigError(f"unknown config key {key!r}")
            if not isinstance(raw, str):
                kw[k] = raw
            elif k in ("kappa_edge", "kappa_vertex", "a_edge", "a_vertex"):
                kw[k] = _opt_float(raw)
            elif k in ("levels", "quad_order"):
                kw[k] = int(raw)
            elif k == "tol":
                kw[k] = float(raw)
            elif k in ("allow_large", "check_conformity"):
                kw[k] = _parse_bool(raw)
            elif k == "out":
                kw[k] = raw.strip() or None
            else:
                kw[k] = raw.strip()
        return cls(**kw)

    def updated(self, **kw) -> "ExperimentConfig":
        """Copy with the non-None keyword values replaced; a new κ drops the matching a."""
        kw = {k: v for k, v in kw.items() if v is not None}
        for ent in ("edge", "vertex"):
            if f"kappa_{ent}" in kw and f"a_{ent}" not in kw:
                kw[f"a_{ent}"] = None
        return replace(self, **kw)


def parse_config_text(text: str) -> dict:
    """key=value lines; '#' starts a comment; blank lines ignored."""
    out = {}
    for no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {no}: expected key=value, got {line!r}")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            return parse_config_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc.strerror}") from exc


@dataclass
class LevelRecord:
    level: int
    points: int
    dofs: int
    tets: int
    census: dict
    h1_diff: float | None  # |u_j - u_{j-1}|, None at level 0
    energy: float  # |u_j|_{H1}^2
    pythagoras_defect: float | None  # | |u_j|^2 - |u_{j-1}|^2 - d_j^2 | / |u_j|^2
    cg_iters: int
    residual: float
    seconds: float
    conformity: list = field(default_factory=list)
    rate: float | None = None


@dataclass
class RateTable:
    domain: str
    kappa_edge: float
    kappa_vertex: float
    tol: float
    quad_order: int
    records: list

    @property
    def rates(self) -> dict:
        """{j: rate_j} with rate_j = log2(d_j / d_{j+1})."""
        return {r.level: r.rate for r in self.records if r.rate is not None}

    @property
    def diffs(self) -> dict:
        return {r.level: r.h1_diff for r in self.records if r.h1_diff is not None}

    def metadata(self) -> dict:
        return {
            "domain": self.domain, "kappa_edge": self.kappa_edge, "kappa_vertex": self.kappa_vertex,
            "tol": self.tol, "quad_order": self.quad_order,
            "total_seconds": round(sum(r.seconds for r in self.records), 3),
            "max_residual": max(r.residual for r in self.records),
        }


def run_experiment(cfg: ExperimentConfig, *, log=None) -> RateTable:
    """Solve -Δu = 1, u = 0 on levels 0..n and tabulate H1 differences and rates.

    The level-j solve is warm-started from the prolonged level-(j-1)
    solution.  When a level has no interior vertices its discrete solution is
    zero.  The census (8^j times the initial count) is checked at every
    level, and conformity as well when ``cfg.check_conformity`` is set.
    """
    cfg.validate()
    dom = build_domain(cfg.domain, cfg.kappa_e, cfg.kappa_v)
    S = dom.singular
    n0 = dom.mesh.n_tets
    records = []
    mesh = None
    u_prev = None
    energy_prev = 0.0
    for j in range(cfg.levels + 1):
        t0 = time.perf_counter()
        mesh = dom.mesh if mesh is None else refine_mesh(mesh, S)
        if mesh.n_tets != n0 * 8**j or sum(mesh.census().values()) != mesh.n_tets:
            raise AssertionError(f"level {j}: census {mesh.census()} does not add up to {n0} * 8^{j}")
        report = check_conformity(mesh) if cfg.check_conformity else []
        if report:
            raise AssertionError(f"level {j}: mesh not conforming: {report[:3]}")
        system = assemble(mesh, 1.0)
        guess = None if u_prev is None else prolong(u_prev, mesh)
        try:
            u, res, _ = solve(mesh, 1.0, tol=cfg.tol, guess=guess, system=system)
            iters, resid = res.iterations, res.residual
            dofs = int((~mesh.boundary).sum())
        except EmptyInterior:
            u, iters, resid, dofs = FEFunction(mesh, np.zeros(mesh.n_points)), 0, 0.0, 0
        c = u.coefficients
        energy = float(c @ (system.A @ c))
        diff = pyth = None
        if guess is not None:
            e = c - guess.coefficients
            diff = math.sqrt(max(float(e @ (system.A @ e)), 0.0))
            pyth = abs(energy - energy_prev - diff**2) / energy if energy > 0 else 0.0
        rec = LevelRecord(j, mesh.n_points, dofs, mesh.n_tets, mesh.census(), diff, energy, pyth,
                          iters, resid, time.perf_counter() - t0, report)
        records.append(rec)
        if log is not None:
            log(f"level {j}: {mesh.n_tets} tets, {dofs} dofs, cg {iters} its, {rec.seconds:.1f}s")
        u_prev, energy_prev = u, energy
    diffs = [r.h1_diff for r in records[1:]]
    for r, rate in zip(records[1:], convergence_rates(diffs)):
        r.rate = float(rate)
    return RateTable(cfg.domain, cfg.kappa_e, cfg.kappa_v, cfg.tol, cfg.quad_order, records)


def _fmt(x, spec):
    return "" if x is None else format(x, spec)


def emit_table(tables, format: str = "text") -> str:
    """Render one table or several.

    ``text`` puts levels j in rows and one rate column per table, rates to
    two decimals.  ``csv`` writes the columns
    level,dofs,tets,h1_diff,rate,cg_iters,seconds per table, each block
    preceded by ``# key=value`` metadata lines.
    """
    if isinstance(tables, RateTable):
        tables = [tables]
    tables = list(tables)
    if not tables:
        raise ValueError("no tables to emit")
    if format == "csv":
        buf = io.StringIO()
        for t in tables:
            for k, v in t.metadata().items():
                buf.write(f"# {k}={v}\n")
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in t.records:
                w.writerow([r.level, r.dofs, r.tets, _fmt(r.h1_diff, ".17g"), _fmt(r.rate, ".2f"),
                            r.cg_iters, f"{r.seconds:.3f}"])
        return buf.getvalue()
    if format != "text":
        raise ValueError(f"unknown format {format!r}")
    domains = {t.domain for t in tables}
    heads = []
    for t in tables:
        h = f"κe={t.kappa_edge:g}"
        if t.kappa_vertex != 0.5 or t.domain == "fichera":
            h += f",κv={t.kappa_vertex:g}"
        heads.append(h)
    width = max(8, *(len(h) for h in heads)) + 2
    lines = [f"convergence rates, domain {'/'.join(sorted(domains))}", "j".rjust(3) + "".join(h.rjust(width) for h in heads)]
    js = sorted({j for t in tables for j in t.rates})
    for j in js:
        cells = [_fmt(t.rates.get(j), ".2f") for t in tables]
        lines.append(str(j).rjust(3) + "".join(c.rjust(width) for c in cells))
    return "\n".join(lines) + "\n"
