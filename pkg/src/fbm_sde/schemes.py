"""Approximation schemes driven by sampled fBm paths, plus exact references.

Every solver accepts either a single :class:`FbmPath` or a 2-D array of node
values (one path per row) and is vectorised across paths.  Results are
deterministic functions of their inputs.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .fbm_engine import FbmPath
from .model import Degeneracy, LampertiMap, SdeProblem, degeneracy_check, langevin_rate

__all__ = [
    "SchemeKind",
    "SolveResult",
    "BlowUpError",
    "DEFAULT_SUBSTEPS",
    "euler_solve",
    "mcshane_step",
    "mcshane_solve",
    "wong_zakai_solve",
    "exact_degenerate_solution",
    "langevin_exact_solution",
    "solve",
]

DEFAULT_SUBSTEPS = 8


class SchemeKind(str, enum.Enum):
    EULER = "euler"
    WONG_ZAKAI = "wong_zakai"
    MCSHANE = "mcshane"
    EXACT_DEGENERATE = "exact_degenerate"
    LANGEVIN_EXACT = "langevin_exact"


class BlowUpError(FloatingPointError):
    """A scheme produced a non-finite state."""


@dataclass
class SolveResult:
    """Terminal values (float for one path, array for many) and optional trajectories."""

    scheme: SchemeKind
    n: int
    terminal: float | np.ndarray
    trajectory: np.ndarray | None = None
    aborted: np.ndarray | None = None


def _as_values(path) -> tuple[np.ndarray, bool]:
    if isinstance(path, FbmPath):
        return path.values[None, :], True
    values = np.asarray(path, dtype=float)
    if values.ndim == 1:
        return values[None, :], True
    return values, False


def _finish(scheme, states, traj, single: bool, strict: bool) -> SolveResult:
    bad = ~np.isfinite(states)
    if traj is not None:
        bad |= ~np.all(np.isfinite(traj), axis=-1)
    if bad.any() and (strict or single):
        raise BlowUpError(f"{scheme.value}: non-finite state on {int(bad.sum())} path(s)")
    n = traj.shape[-1] - 1 if traj is not None else None
    if single:
        return SolveResult(scheme, n, float(states[0]), None if traj is None else traj[0], None)
    return SolveResult(scheme, n, states, traj, bad)


def _march(p: SdeProblem, values: np.ndarray, step, keep: bool):
    n = values.shape[1] - 1
    dt = 1.0 / n
    db = np.diff(values, axis=1)
    x = np.full(values.shape[0], p.x0)
    traj = np.empty_like(values) if keep else None
    if keep:
        traj[:, 0] = x
    with np.errstate(all="ignore"):
        for k in range(n):
            x = step(x, dt, db[:, k])
            if keep:
                traj[:, k + 1] = x
    return x, traj, n


def euler_solve(p: SdeProblem, path, trajectory: bool = False, strict: bool = False) -> SolveResult:
    """``X_{k+1} = X_k + a(X_k) dt + sigma(X_k) dB_k``."""
    values, single = _as_values(path)
    a, s = p.a, p.sigma

    def step(x, dt, db):
        return x + a(x) * dt + s(x) * db

    x, traj, n = _march(p, values, step, trajectory)
    res = _finish(SchemeKind.EULER, x, traj, single, strict)
    res.n = n
    return res


def mcshane_step(p: SdeProblem, x, dt: float, db):
    """One McShane step; all coefficients are evaluated at ``x``."""
    a, s = p.a, p.sigma
    av, a1 = a(x), a.derivative(x, 1)
    sv, s1, s2 = s(x), s.derivative(x, 1), s.derivative(x, 2)
    return (
        x
        + av * dt
        + sv * db
        + 0.5 * sv * s1 * db**2
        + 0.5 * (av * s1 + a1 * sv) * db * dt
        + 0.5 * av * a1 * dt**2
        + (sv * sv * s2 + sv * s1 * s1) * db**3 / 6.0
    )


def mcshane_solve(p: SdeProblem, path, trajectory: bool = False, strict: bool = False) -> SolveResult:
    values, single = _as_values(path)
    x, traj, n = _march(p, values, lambda x, dt, db: mcshane_step(p, x, dt, db), trajectory)
    res = _finish(SchemeKind.MCSHANE, x, traj, single, strict)
    res.n = n
    return res


def wong_zakai_solve(
    p: SdeProblem,
    path,
    substeps: int = DEFAULT_SUBSTEPS,
    trajectory: bool = False,
    strict: bool = False,
) -> SolveResult:
    """Solve the equation driven by the piecewise-linear interpolant of ``path``.

    In cell ``k`` this is the ODE ``x' = a(x) + sigma(x) dB_k / dt``, integrated
    with classical RK4 using ``substeps`` equal steps.
    """
    if int(substeps) != substeps or substeps < 1:
        raise ValueError(f"substeps must be a positive integer, got {substeps}")
    values, single = _as_values(path)
    a, s = p.a, p.sigma
    h = 1.0 / substeps

    def step(x, dt, db):
        def f(y):
            return (a(y) * dt + s(y) * db) * h

        for _ in range(substeps):
            k1 = f(x)
            k2 = f(x + 0.5 * k1)
            k3 = f(x + 0.5 * k2)
            k4 = f(x + k3)
            x = x + (k1 + 2.0 * (k2 + k3) + k4) / 6.0
        return x

    x, traj, n = _march(p, values, step, trajectory)
    res = _finish(SchemeKind.WONG_ZAKAI, x, traj, single, strict)
    res.n = n
    return res


def exact_degenerate_solution(
    p: SdeProblem,
    path,
    t=1.0,
    lamperti: LampertiMap | None = None,
    check: bool = True,
):
    """``theta^{-1}(theta(x0) + (a/sigma)(x0) t + B_t)`` for commuting coefficients.

    ``t`` must be a grid node of ``path`` (or an array of nodes).  The map is
    anchored at ``theta(x0)`` so that the solution starts at ``x0``.
    """
    if check and degeneracy_check(p) is not Degeneracy.DEGENERATE:
        raise ValueError("exact_degenerate_solution needs a degenerate (commuting) problem")
    values, single = _as_values(path)
    n = values.shape[1] - 1
    t_arr = np.asarray(t, dtype=float)
    idx = np.rint(t_arr * n).astype(int)
    if np.any(np.abs(idx - t_arr * n) > 1e-9) or np.any((idx < 0) | (idx > n)):
        raise ValueError("t must be a grid node in [0, 1]")
    m = lamperti or LampertiMap(p)
    ratio = float(p.a(p.x0) / p.sigma(p.x0))
    b = values[:, idx]
    out = m.inverse(m.anchor + ratio * t_arr + b)
    if single:
        out = out[0]
        return float(out) if np.ndim(out) == 0 else out
    return out


def langevin_exact_solution(lam: float, x0: float, path, substeps: int = 2):
    """Terminal value of ``dX = lam X dt + dB`` driven by the sampled path.

    Uses ``X_1 = e^lam (x0 + e^{-lam} B_1 + lam int_0^1 e^{-lam s} B_s ds)``;
    the time integral runs over the linear interpolant of the path with
    composite Simpson, ``substeps`` panels per grid cell.
    """
    values, single = _as_values(path)
    n = values.shape[1] - 1
    m = int(substeps)
    if m < 1:
        raise ValueError("substeps must be >= 1")
    # Simpson nodes: 2m+1 equispaced points per cell, shared endpoints
    fine = 2 * m * n
    s = np.arange(fine + 1) / fine
    frac = np.arange(2 * m + 1)[:-1] / (2 * m)
    left = values[:, :-1, None]
    right = values[:, 1:, None]
    interior = (left + frac * (right - left)).reshape(values.shape[0], -1)
    b_fine = np.concatenate([interior, values[:, -1:]], axis=1)
    w = np.ones(fine + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    w *= 1.0 / (3.0 * fine)
    # row-wise reduction keeps each path independent of the batch shape
    integral = (b_fine * (w * np.exp(-lam * s))).sum(axis=1)
    out = np.exp(lam) * (x0 + np.exp(-lam) * values[:, -1] + lam * integral)
    return float(out[0]) if single else out


def solve(kind: SchemeKind | str, p: SdeProblem, path, substeps: int = DEFAULT_SUBSTEPS, **kw) -> SolveResult:
    """Dispatch by scheme name; exact kinds return terminal values only."""
    kind = SchemeKind(kind)
    if kind is SchemeKind.EULER:
        return euler_solve(p, path, **kw)
    if kind is SchemeKind.MCSHANE:
        return mcshane_solve(p, path, **kw)
    if kind is SchemeKind.WONG_ZAKAI:
        return wong_zakai_solve(p, path, substeps, **kw)
    values, single = _as_values(path)
    n = values.shape[1] - 1
    if kind is SchemeKind.EXACT_DEGENERATE:
        term = exact_degenerate_solution(p, path, 1.0, lamperti=kw.get("lamperti"))
    else:
        lam = langevin_rate(p)
        if lam is None:
            raise ValueError("langevin_exact needs a = lam * x and sigma = 1")
        term = langevin_exact_solution(lam, p.x0, path)
    return SolveResult(kind, n, term)
