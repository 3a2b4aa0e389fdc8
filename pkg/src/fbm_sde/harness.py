"""Monte Carlo strong-error studies with paired paths.

One fine fBm path is drawn per Monte Carlo sample; every coarse grid sees the
exact subsampled nodes of that path, and every scheme and the reference are
driven by the same noise.  Paths are processed in chunks which workers fill
into private slots; the reduction afterwards runs in path order, so tables do
not depend on how many workers were used.
"""

from __future__ import annotations

import concurrent.futures
import csv
import io
import json
import math
import os
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import integrate

from .analysis import constants_for, exact_weighted_interp_error, weight_path
from .fbm_engine import sample_paths
from .model import Degeneracy, LampertiMap, SdeProblem, degeneracy_check, langevin_rate
from .schemes import (
    DEFAULT_SUBSTEPS,
    SchemeKind,
    exact_degenerate_solution,
    langevin_exact_solution,
    solve,
    wong_zakai_solve,
)

__all__ = [
    "ExperimentConfig",
    "ErrorRow",
    "ErrorTable",
    "InterpRow",
    "NoReferenceError",
    "MIN_WZ_FINE_FACTOR",
    "worker_count",
    "select_reference",
    "jackknife_rms",
    "strong_error_study",
    "rate_regression",
    "interp_error_study",
    "run_experiment",
    "load_manifest",
]

MIN_WZ_FINE_FACTOR = 32
CSV_HEADER = ["scheme", "hurst", "n", "paths", "rms_error", "stderr", "scaled_error", "aborted_paths"]
THREADS_ENV = "FBM_SDE_THREADS"


class NoReferenceError(ValueError):
    """No admissible reference solution for the configured problem."""


def _parse_reference(ref: str) -> str:
    allowed = {"auto", "exact_degenerate", "langevin_exact", "wong_zakai"}
    if ref in allowed:
        return ref
    if ref.startswith("coarse:"):
        SchemeKind(ref.split(":", 1)[1])
        return ref
    raise ValueError(f"unknown reference {ref!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines a convergence study.

    ``reference`` is ``auto`` (exact when available, else fine Wong-Zakai),
    an explicit kind, or ``coarse:<scheme>`` to compare against another
    scheme on the same coarse grid.
    """

    problem: SdeProblem
    schemes: tuple[SchemeKind, ...]
    n_list: tuple[int, ...]
    fine_factor: int = MIN_WZ_FINE_FACTOR
    paths: int = 1000
    master_seed: int = 0
    substeps: int = DEFAULT_SUBSTEPS
    output: str | None = None
    method: str = "circulant"
    reference: str = "auto"
    chunk: int = 256

    def __post_init__(self) -> None:
        schemes = tuple(SchemeKind(s) for s in self.schemes)
        if not schemes:
            raise ValueError("at least one scheme is required")
        object.__setattr__(self, "schemes", schemes)
        ns = tuple(int(n) for n in self.n_list)
        if not ns or any(n < 1 or n != m for n, m in zip(ns, self.n_list)):
            raise ValueError("n_list must hold positive integers")
        if len(set(ns)) != len(ns):
            raise ValueError("n_list has duplicates")
        object.__setattr__(self, "n_list", tuple(sorted(ns)))
        for name in ("fine_factor", "paths", "substeps", "chunk"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v}")
            object.__setattr__(self, name, int(v))
        if self.paths < 2:
            raise ValueError("need at least two paths")
        fine = self.fine_n
        bad = [n for n in ns if fine % n]
        if bad:
            raise ValueError(f"coarse sizes {bad} do not divide the fine grid of {fine} steps")
        if self.method not in ("circulant", "cholesky"):
            raise ValueError(f"unknown sampling method {self.method!r}")
        object.__setattr__(self, "reference", _parse_reference(self.reference))
        object.__setattr__(self, "master_seed", int(self.master_seed))

    @property
    def fine_n(self) -> int:
        return max(self.n_list) * self.fine_factor

    def to_dict(self) -> dict:
        return {
            "problem": self.problem.to_dict(),
            "schemes": [s.value for s in self.schemes],
            "n_list": list(self.n_list),
            "fine_factor": self.fine_factor,
            "paths": self.paths,
            "master_seed": self.master_seed,
            "substeps": self.substeps,
            "output": self.output,
            "method": self.method,
            "reference": self.reference,
            "chunk": self.chunk,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        data["problem"] = SdeProblem.from_dict(data["problem"])
        return cls(**data)


@dataclass(frozen=True)
class ErrorRow:
    scheme: str
    hurst: float
    n: int
    paths: int
    rms_error: float
    stderr: float
    scaled_error: float
    aborted_paths: int


@dataclass
class ErrorTable:
    rows: list[ErrorRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def for_scheme(self, scheme) -> list[ErrorRow]:
        name = SchemeKind(scheme).value
        return [r for r in self.rows if r.scheme == name]

    def to_csv(self, out=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in self.rows:
            writer.writerow(
                [
                    r.scheme,
                    f"{r.hurst:.17g}",
                    r.n,
                    r.paths,
                    f"{r.rms_error:.17g}",
                    f"{r.stderr:.17g}",
                    f"{r.scaled_error:.17g}",
                    r.aborted_paths,
                ]
            )
        text = buf.getvalue()
        if out is not None:
            out.write(text)
        return text

    @classmethod
    def from_csv(cls, text: str) -> "ErrorTable":
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"unexpected header {reader.fieldnames}")
        rows = [
            ErrorRow(
                d["scheme"],
                float(d["hurst"]),
                int(d["n"]),
                int(d["paths"]),
                float(d["rms_error"]),
                float(d["stderr"]),
                float(d["scaled_error"]),
                int(d["aborted_paths"]),
            )
            for d in reader
        ]
        return cls(rows)


def worker_count(tasks: int | None = None) -> int:
    """Worker cap from ``FBM_SDE_THREADS`` (default: CPU count)."""
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            cap = int(raw)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
        if cap < 1:
            raise ValueError(f"{THREADS_ENV} must be >= 1")
    else:
        cap = os.cpu_count() or 1
    return max(1, min(cap, tasks)) if tasks else cap


def _chunks(paths: int, chunk: int) -> list[range]:
    return [range(s, min(paths, s + chunk)) for s in range(0, paths, chunk)]


def _run_chunks(fn: Callable[[range], None], ranges: Sequence[range], workers: int | None = None) -> None:
    workers = worker_count(len(ranges)) if workers is None else workers
    if workers <= 1:
        for r in ranges:
            fn(r)
        return
    with concurrent.futures.ThreadPoolExecutor(workers) as pool:
        for fut in [pool.submit(fn, r) for r in ranges]:
            fut.result()


def select_reference(cfg: ExperimentConfig) -> str:
    """Resolve ``auto`` and check that an explicit reference is admissible."""
    p = cfg.problem
    ref = cfg.reference
    if ref == "auto":
        if degeneracy_check(p) is Degeneracy.DEGENERATE:
            return "exact_degenerate"
        if langevin_rate(p) is not None:
            return "langevin_exact"
        ref = "wong_zakai"
    if ref == "exact_degenerate" and degeneracy_check(p) is not Degeneracy.DEGENERATE:
        raise NoReferenceError("exact_degenerate reference needs a degenerate problem")
    if ref == "langevin_exact" and langevin_rate(p) is None:
        raise NoReferenceError("langevin_exact reference needs a = lam*x and sigma = 1")
    if ref == "wong_zakai" and cfg.fine_factor < MIN_WZ_FINE_FACTOR:
        raise NoReferenceError(
            f"fine Wong-Zakai reference needs fine_factor >= {MIN_WZ_FINE_FACTOR}, got {cfg.fine_factor}"
        )
    return ref


def _reference_terminal(cfg: ExperimentConfig, ref: str, fine: np.ndarray, lamperti) -> np.ndarray:
    p = cfg.problem
    if ref == "exact_degenerate":
        return np.atleast_1d(exact_degenerate_solution(p, fine, 1.0, lamperti=lamperti, check=False))
    if ref == "langevin_exact":
        return np.atleast_1d(langevin_exact_solution(langevin_rate(p), p.x0, fine))
    res = wong_zakai_solve(p, fine, cfg.substeps)
    return np.where(res.aborted, np.nan, res.terminal)


def _scheme_terminal(cfg: ExperimentConfig, kind: SchemeKind, coarse: np.ndarray, lamperti) -> np.ndarray:
    if kind is SchemeKind.EXACT_DEGENERATE:
        return np.atleast_1d(exact_degenerate_solution(cfg.problem, coarse, 1.0, lamperti=lamperti))
    res = solve(kind, cfg.problem, coarse, cfg.substeps)
    term = np.atleast_1d(np.asarray(res.terminal, dtype=float))
    if res.aborted is not None:
        term = np.where(res.aborted, np.nan, term)
    return term


def jackknife_rms(sq: np.ndarray) -> tuple[float, float]:
    """RMS of per-path squared errors and its leave-one-out jackknife error."""
    sq = np.asarray(sq, dtype=float)
    m = sq.size
    if m == 0:
        return math.nan, math.nan
    rms = math.sqrt(sq.mean())
    if m < 2:
        return rms, math.nan
    loo = np.sqrt(np.maximum((sq.sum() - sq) / (m - 1), 0.0))
    se = math.sqrt((m - 1) / m * np.sum((loo - loo.mean()) ** 2))
    return rms, se


def _squared_errors(cfg: ExperimentConfig, workers: int | None = None) -> np.ndarray:
    """Per-path squared errors, shape ``(schemes, n_list, paths)``; NaN marks an abort."""
    ref = select_reference(cfg)
    p = cfg.problem
    coarse_ref = SchemeKind(ref.split(":", 1)[1]) if ref.startswith("coarse:") else None
    lamperti = None
    if ref == "exact_degenerate" or SchemeKind.EXACT_DEGENERATE in cfg.schemes:
        lamperti = LampertiMap(p)
    fine_n = cfg.fine_n
    out = np.empty((len(cfg.schemes), len(cfg.n_list), cfg.paths))

    def work(ids: range) -> None:
        fine = sample_paths(fine_n, p.hurst, cfg.master_seed, ids, cfg.method)
        with np.errstate(all="ignore"):
            x_ref = None if coarse_ref else _reference_terminal(cfg, ref, fine, lamperti)
            for j, n in enumerate(cfg.n_list):
                coarse = fine[:, :: fine_n // n]
                target = _scheme_terminal(cfg, coarse_ref, coarse, lamperti) if coarse_ref else x_ref
                for i, kind in enumerate(cfg.schemes):
                    diff = _scheme_terminal(cfg, kind, coarse, lamperti) - target
                    out[i, j, ids.start : ids.stop] = diff * diff

    _run_chunks(work, _chunks(cfg.paths, cfg.chunk), workers)
    return out


def strong_error_study(cfg: ExperimentConfig, workers: int | None = None) -> ErrorTable:
    """RMS terminal error of every scheme at every coarse ``n``.

    Paths whose reference or scheme value is non-finite are counted in
    ``aborted_paths`` and left out of the RMS.
    """
    sq = _squared_errors(cfg, workers)
    h = cfg.problem.hurst
    rows = []
    for i, kind in enumerate(cfg.schemes):
        for j, n in enumerate(cfg.n_list):
            vals = sq[i, j]
            ok = np.isfinite(vals)
            rms, se = jackknife_rms(vals[ok])
            rows.append(
                ErrorRow(
                    kind.value,
                    h,
                    n,
                    int(ok.sum()),
                    rms,
                    se,
                    n ** (h + 0.5) * rms,
                    int((~ok).sum()),
                )
            )
    return ErrorTable(rows)


def rate_regression(table: ErrorTable | Iterable[ErrorRow], scheme) -> tuple[float, float, float]:
    """Least-squares fit of ``log rms`` against ``log n``: ``(slope, intercept, r2)``."""
    name = SchemeKind(scheme).value
    rows = [r for r in table if r.scheme == name and r.rms_error > 0 and math.isfinite(r.rms_error)]
    if len(rows) < 3:
        raise ValueError(f"need at least 3 rows with positive error for {name}, got {len(rows)}")
    x = np.log([r.n for r in rows])
    y = np.log([r.rms_error for r in rows])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - float(np.sum(resid**2) / tot) if tot > 0 else 1.0
    return float(slope), float(intercept), r2


# --------------------------------------------------------------------------
# interpolation error
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class InterpRow:
    """One ``n`` of an interpolation-error study; ``*_scaled`` carry ``n^{2H+1}``."""

    n: int
    mc_value: float
    mc_stderr: float
    exact_value: float | None
    mc_scaled: float
    exact_scaled: float | None
    target: float


def _trapezoid_rows(f: np.ndarray) -> np.ndarray:
    n = f.shape[-1] - 1
    return (f[..., 1:] + f[..., :-1]).sum(axis=-1) * (0.5 / n)


def interp_error_study(cfg: ExperimentConfig, weight="langevin", workers: int | None = None) -> list[InterpRow]:
    """``E|int_0^1 Y_t (B_t - B~_t) dt|^2`` per coarse ``n``.

    ``weight`` is ``"langevin"`` (the deterministic weight
    ``lam e^{lam (1 - t)}`` of a Langevin problem), ``"mc_weight"`` (weight
    paths along fine Wong-Zakai trajectories) or a callable ``rho(t)``.  The
    Monte Carlo value integrates over the fine grid with the trapezoid rule;
    deterministic weights also get the exact value.  ``target`` is
    ``|zeta(-2H)| int E|Y|^2``, the limit of the scaled values.
    """
    p = cfg.problem
    h = p.hurst
    fine_n = cfg.fine_n
    zeta_abs = abs(constants_for(h).zeta_neg2H)
    rho = None
    if callable(weight):
        rho = weight
    elif weight == "langevin":
        lam = langevin_rate(p)
        if lam is None:
            raise ValueError("langevin weight needs a Langevin problem")
        rho = lambda t: lam * np.exp(lam * (1.0 - np.asarray(t, dtype=float)))  # noqa: E731
    elif weight != "mc_weight":
        raise ValueError(f"unknown weight source {weight!r}")

    t_fine = np.arange(fine_n + 1) / fine_n
    rho_fine = None if rho is None else np.broadcast_to(rho(t_fine), t_fine.shape).astype(float)
    per_path = np.empty((len(cfg.n_list), cfg.paths))
    weight_sq = np.empty(cfg.paths)

    def work(ids: range) -> None:
        fine = sample_paths(fine_n, h, cfg.master_seed, ids, cfg.method)
        if rho_fine is None:
            traj = wong_zakai_solve(p, fine, cfg.substeps, trajectory=True, strict=True).trajectory
            y = weight_path(p, fine, traj).y_values
        else:
            y = np.broadcast_to(rho_fine, fine.shape)
        weight_sq[ids.start : ids.stop] = _trapezoid_rows(y * y)
        for j, n in enumerate(cfg.n_list):
            step = fine_n // n
            coarse = fine[:, ::step]
            frac = (np.arange(fine_n + 1) % step) / step
            left = np.minimum(np.arange(fine_n + 1) // step, n - 1)
            frac = np.where(np.arange(fine_n + 1) == fine_n, 1.0, frac)
            interp = coarse[:, left] + frac * (coarse[:, left + 1] - coarse[:, left])
            per_path[j, ids.start : ids.stop] = _trapezoid_rows(y * (fine - interp)) ** 2

    _run_chunks(work, _chunks(cfg.paths, cfg.chunk), workers)

    if rho is None:
        msw = float(weight_sq.mean())
    else:
        msw = integrate.quad(lambda t: float(rho(t)) ** 2, 0.0, 1.0, epsabs=1e-14, epsrel=1e-12)[0]
    target = zeta_abs * msw
    rows = []
    for j, n in enumerate(cfg.n_list):
        vals = per_path[j]
        mean = float(vals.mean())
        se = float(vals.std(ddof=1) / math.sqrt(vals.size))
        scale = n ** (2.0 * h + 1.0)
        exact = None if rho is None else float(exact_weighted_interp_error(rho, n, h))
        rows.append(
            InterpRow(n, mean, se, exact, scale * mean, None if exact is None else scale * exact, target)
        )
    return rows


# --------------------------------------------------------------------------
# artifacts
# --------------------------------------------------------------------------


def _version() -> str:
    from . import __version__

    try:
        desc = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
            check=True,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        desc = ""
    return f"{__version__}+g{desc}" if desc else __version__


def run_experiment(cfg: ExperimentConfig, output: str | Path | None = None, workers: int | None = None) -> dict:
    """Run the strong-error study and write ``errors.csv``, ``manifest.json``
    and ``regression.json`` into the output directory.

    Returns the paths written, the table and the regression summaries.
    """
    out_dir = Path(output or cfg.output or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    table = strong_error_study(cfg, workers)
    elapsed = time.perf_counter() - start

    summaries = {}
    for kind in cfg.schemes:
        try:
            slope, intercept, r2 = rate_regression(table, kind)
        except ValueError:
            continue
        summaries[kind.value] = {"slope": slope, "intercept": intercept, "r2": r2}

    csv_path = out_dir / "errors.csv"
    with open(csv_path, "w", newline="") as fh:
        table.to_csv(fh)
    manifest = {
        "config": cfg.to_dict(),
        "seed": cfg.master_seed,
        "version": _version(),
        "elapsed_seconds": elapsed,
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    reg_path = out_dir / "regression.json"
    reg_path.write_text(json.dumps(summaries, indent=2, sort_keys=True) + "\n")
    return {
        "csv": csv_path,
        "manifest": manifest_path,
        "regression": reg_path,
        "table": table,
        "summaries": summaries,
    }


def load_manifest(path: str | Path) -> tuple[ExperimentConfig, dict]:
    data = json.loads(Path(path).read_text())
    for key in ("config", "seed", "version", "elapsed_seconds"):
        if key not in data:
            raise ValueError(f"manifest lacks {key!r}")
    return ExperimentConfig.from_dict(data["config"]), data
