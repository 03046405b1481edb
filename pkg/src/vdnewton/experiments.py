"""Convergence studies, EOC tables and their CSV / text output."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .control import l2_error, linf_error, write_samples_csv
from .cut import write_segments_csv
from .mesh import h_of_level, unit_square
from .postprocess import postprocess_solve
from .problems import EXAMPLES, make_problem
from .ssn import SolverError, SsnConfig, fixed_point_solve, solve_damped, solve_undamped

log = logging.getLogger(__name__)

SOLVERS = ("undamped", "damped", "fixedpoint", "postprocess")
DEFAULT_V0 = {"dirichlet": 0.3, "neumann": -1.0}
CSV_COLUMNS = ("h", "err_l2", "err_linf", "eoc_l2", "eoc_linf", "iterations", "quality")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    example: str = "dirichlet"
    alphas: list = field(default_factory=lambda: [1e-3])
    levels: tuple = (3, 7)
    solver: str = "undamped"
    v0: float | None = None  # None: the example's default initial guess
    ssn: dict = field(default_factory=dict)  # SsnConfig overrides
    out: str | None = None
    fmt: str = "csv"
    z_refine: int = 0
    postprocess_tol: float = 1e-8
    samples: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.example not in EXAMPLES:
            raise ConfigError(f"unknown example {self.example!r}")
        if self.solver not in SOLVERS:
            raise ConfigError(f"unknown solver {self.solver!r}; choose from {SOLVERS}")
        if not self.alphas or any(not a > 0 for a in self.alphas):
            raise ConfigError("alphas must be a nonempty list of positive numbers")
        lo, hi = self.levels
        if lo < 0 or hi < lo:
            raise ConfigError(f"empty level range {lo}:{hi}")
        if self.fmt not in ("csv", "text"):
            raise ConfigError("format must be 'csv' or 'text'")
        if self.z_refine < 0:
            raise ConfigError("z_refine must be non-negative")
        try:
            self.ssn_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid solver settings: {exc}") from None

    def ssn_config(self) -> SsnConfig:
        return SsnConfig(**self.ssn)

    @property
    def initial_guess(self) -> float:
        return DEFAULT_V0[self.example] if self.v0 is None else self.v0


def eoc(err_prev: float, err_cur: float, h_prev: float, h_cur: float) -> float:
    """Experimental order of convergence; NaN when any input is not positive."""
    vals = (err_prev, err_cur, h_prev, h_cur)
    if any(not (v > 0.0) or not math.isfinite(v) for v in vals) or h_prev == h_cur:
        return math.nan
    return (math.log(err_prev) - math.log(err_cur)) / (math.log(h_prev) - math.log(h_cur))


@dataclass
class EocRow:
    h: float
    err_l2: float
    err_linf: float
    eoc_l2: float = math.nan
    eoc_linf: float = math.nan
    iterations: int = 0
    quality: float = math.nan
    converged: bool = True


@dataclass
class EocTable:
    rows: list = field(default_factory=list)

    def add(self, h, err_l2, err_linf, iterations, quality, converged=True) -> EocRow:
        row = EocRow(h, err_l2, err_linf, iterations=iterations, quality=quality, converged=converged)
        if self.rows:
            prev = self.rows[-1]
            row.eoc_l2 = eoc(prev.err_l2, err_l2, prev.h, h)
            row.eoc_linf = eoc(prev.err_linf, err_linf, prev.h, h)
        self.rows.append(row)
        return row

    @property
    def all_converged(self) -> bool:
        return all(r.converged for r in self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def __len__(self) -> int:
        return len(self.rows)


# ------------------------------------------------------------------ running

def run_single(cfg: ExperimentConfig, alpha: float, level: int):
    """One solve; returns ``(problem, control, report)``. Solver failures raise."""
    prob = make_problem(cfg.example, alpha, unit_square(level), z_refine=cfg.z_refine)
    ssn = cfg.ssn_config()
    v0 = cfg.initial_guess
    if cfg.solver == "undamped":
        u, rep = solve_undamped(prob, v0, ssn)
    elif cfg.solver == "damped":
        u, rep = solve_damped(prob, v0, ssn)
    elif cfg.solver == "fixedpoint":
        u, rep = fixed_point_solve(prob, v0, ssn)
    else:
        u, rep = postprocess_solve(prob, cfg.postprocess_tol, ssn)
    return prob, u, rep


def _tag(cfg: ExperimentConfig, alpha: float, level: int) -> str:
    return f"{cfg.example}_{cfg.solver}_a{alpha:g}_l{level}"


def run_convergence_study(cfg: ExperimentConfig, alpha: float | None = None) -> EocTable:
    """Solve on every level of ``cfg.levels`` and tabulate errors against the
    exact control. A failing level is recorded with ``converged=False``."""
    alpha = cfg.alphas[0] if alpha is None else alpha
    out = Path(cfg.out) if cfg.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    table = EocTable()
    lo, hi = cfg.levels
    for level in range(lo, hi + 1):
        h = h_of_level(level)
        try:
            prob, u, rep = run_single(cfg, alpha, level)
        except (SolverError, np.linalg.LinAlgError, RuntimeError) as exc:
            log.warning("level %d failed: %s", level, exc)
            table.add(h, math.nan, math.nan, 0, math.nan, converged=False)
            continue
        e2 = l2_error(u, prob.exact_control)
        einf = linf_error(u, prob.exact_control)
        table.add(h, e2, einf, rep.iterations, rep.quality, converged=rep.converged)
        log.info("level %d: L2 %.4e Linf %.4e, %d iterations", level, e2, einf, rep.iterations)
        if out:
            tag = _tag(cfg, alpha, level)
            rep.write_log(out / f"{tag}_log.csv")
            if cfg.samples and level == hi:
                write_samples_csv(u, out / f"{tag}_samples.csv")
                write_segments_csv(u.partition, out / f"{tag}_segments.csv")
    return table


def run_postproc_matrix(cfg: ExperimentConfig):
    """L2 EOC of the postprocessing scheme for every alpha and level.

    Returns ``(h, alphas, eoc)`` with ``eoc`` of shape (levels - 1, alphas);
    row ``i`` belongs to ``h[i]`` (the finer mesh of the pair). Failed runs give NaN.
    """
    cfg = replace(cfg, solver="postprocess")
    lo, hi = cfg.levels
    hs = np.array([h_of_level(k) for k in range(lo + 1, hi + 1)])
    mat = np.full((len(hs), len(cfg.alphas)), np.nan)
    for j, alpha in enumerate(cfg.alphas):
        table = run_convergence_study(cfg, alpha)
        # two Newton steps need not meet the stopping tolerance; only raised
        # failures (NaN errors) produce NaN cells
        mat[:, j] = table.column("eoc_l2")[1:]
    return hs, list(cfg.alphas), mat


# ------------------------------------------------------------------- output

def _fmt(x) -> str:
    return "nan" if not math.isfinite(x) else f"{x:.4e}"


def emit(table: EocTable, path: str | Path | None = None, fmt: str = "csv") -> str:
    """Render ``table`` as CSV (fixed columns, %.4e) or as an aligned text table.
    Writes to ``path`` when given and returns the text."""
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in table.rows:
            w.writerow(
                [_fmt(r.h), _fmt(r.err_l2), _fmt(r.err_linf), _fmt(r.eoc_l2),
                 _fmt(r.eoc_linf), str(r.iterations), _fmt(r.quality)]
            )
        text = buf.getvalue()
    elif fmt == "text":
        text = format_text(table)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if path is not None:
        Path(path).write_text(text)
    return text


def _h_label(h: float) -> str:
    n = math.sqrt(2.0) / h
    return f"sqrt(2)/{round(n)}" if abs(n - round(n)) < 1e-9 else f"{h:.4e}"


def format_text(table: EocTable) -> str:
    head = ["mesh param. h", "ERR", "ERR_inf", "EOC", "EOC_inf", "Iterations", "Quality"]
    body = []
    for r in table.rows:
        e = [f"{r.eoc_l2:.2f}", f"{r.eoc_linf:.2f}"] if math.isfinite(r.eoc_l2) else ["-", "-"]
        its = str(r.iterations) + ("" if r.converged else "*")
        body.append([_h_label(r.h), _fmt(r.err_l2), _fmt(r.err_linf), *e, its, f"{r.quality:.2e}"])
    widths = [max(len(x) for x in col) for col in zip(head, *body)]
    lines = [" | ".join(c.ljust(w) for c, w in zip(head, widths)).rstrip()]
    lines.append("-+-".join("-" * w for w in widths))
    lines += [" | ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in body]
    if not table.all_converged:
        lines.append("* solver did not converge")
    return "\n".join(lines) + "\n"


def parse_csv(source: str | Path) -> EocTable:
    """Inverse of :func:`emit` in CSV format; ``source`` is a path or CSV text."""
    text = source if isinstance(source, str) and "\n" in source else Path(source).read_text()
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {header}")
    table = EocTable()
    for rec in reader:
        if not rec:
            continue
        vals = dict(zip(CSV_COLUMNS, rec))
        table.rows.append(
            EocRow(
                h=float(vals["h"]),
                err_l2=float(vals["err_l2"]),
                err_linf=float(vals["err_linf"]),
                eoc_l2=float(vals["eoc_l2"]),
                eoc_linf=float(vals["eoc_linf"]),
                iterations=int(vals["iterations"]),
                quality=float(vals["quality"]),
                converged=math.isfinite(float(vals["err_l2"])),
            )
        )
    return table


def emit_matrix(hs, alphas, mat, path: str | Path | None = None) -> str:
    """Rows h, columns alpha, cells EOC (%.2f, ``nan`` for failures)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["h"] + [f"{a:g}" for a in alphas])
    for h, row in zip(hs, mat):
        w.writerow([_fmt(h)] + ["nan" if not math.isfinite(x) else f"{x:.2f}" for x in row])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
