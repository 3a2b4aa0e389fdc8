"""Scalar SDE instances ``dX = a(X) dt + sigma(X) dB`` on [0, 1].

Besides the problem container this module holds the commutator
``a' sigma - a sigma'``, the degeneracy classification built on it, and the
Lamperti map ``theta(x) = int_0^x dxi / sigma(xi)`` with its inverse and the
reduced drift ``g = (a / sigma) o theta^{-1}``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy import integrate

from .coeff_dsl import CoefficientFn, validate_assumptions
from .fbm_engine import check_hurst

__all__ = [
    "SdeProblem",
    "Degeneracy",
    "DegeneracyThresholds",
    "LampertiError",
    "LampertiMap",
    "commutator",
    "commutator_via_ratio",
    "degeneracy_check",
    "langevin_rate",
    "theta",
    "theta_inverse",
    "reduced_drift",
]

DEFAULT_PROBE_RANGE = (-10.0, 10.0)
PROBE_POINTS = 10_001


@dataclass(frozen=True)
class SdeProblem:
    hurst: float
    x0: float
    a: CoefficientFn
    sigma: CoefficientFn

    def __post_init__(self) -> None:
        object.__setattr__(self, "hurst", check_hurst(self.hurst, sde=True))
        object.__setattr__(self, "x0", float(self.x0))

    @classmethod
    def from_strings(
        cls,
        hurst: float,
        x0: float,
        drift: str,
        diffusion: str,
        params: Mapping[str, float] | None = None,
    ) -> "SdeProblem":
        params = dict(params or {})
        return cls(
            hurst,
            x0,
            CoefficientFn.from_source(drift, params),
            CoefficientFn.from_source(diffusion, params),
        )

    @classmethod
    def from_dict(cls, data: Mapping) -> "SdeProblem":
        unknown = set(data) - {"hurst", "x0", "drift", "diffusion", "params"}
        if unknown:
            raise ValueError(f"unknown problem keys: {', '.join(sorted(unknown))}")
        try:
            return cls.from_strings(
                data["hurst"], data["x0"], data["drift"], data["diffusion"], data.get("params")
            )
        except KeyError as exc:
            raise ValueError(f"problem config is missing {exc.args[0]!r}") from None

    @classmethod
    def from_json(cls, path: str | Path) -> "SdeProblem":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        params = dict(self.a.params)
        params.update(self.sigma.params)
        return {
            "hurst": self.hurst,
            "x0": self.x0,
            "drift": self.a.source,
            "diffusion": self.sigma.source,
            "params": params,
        }

    def with_hurst(self, hurst: float) -> "SdeProblem":
        return SdeProblem(hurst, self.x0, self.a, self.sigma)


def commutator(p: SdeProblem, x):
    """``(a' sigma - a sigma')(x)`` from the symbolic derivatives."""
    return p.a.derivative(x, 1) * p.sigma(x) - p.a(x) * p.sigma.derivative(x, 1)


def commutator_via_ratio(p: SdeProblem, x):
    """Same quantity computed as ``sigma^2 (a / sigma)'``; an independent route."""
    s = p.sigma(x)
    ratio_prime = (p.a.derivative(x, 1) * s - p.a(x) * p.sigma.derivative(x, 1)) / s**2
    return s**2 * ratio_prime


class Degeneracy(str, enum.Enum):
    DEGENERATE = "degenerate"
    NON_DEGENERATE = "non_degenerate"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class DegeneracyThresholds:
    identically_zero: float = 1e-12
    at_x0: float = 1e-8


def degeneracy_check(
    p: SdeProblem,
    probe_range: tuple[float, float] = DEFAULT_PROBE_RANGE,
    thresholds: DegeneracyThresholds = DegeneracyThresholds(),
) -> Degeneracy:
    """Classify the problem by probing the commutator.

    Degenerate when it vanishes (to ``identically_zero``) on every probe;
    non-degenerate when it is clearly nonzero at ``x0``, which certifies the
    non-degeneracy condition; inconclusive otherwise.
    """
    xs = np.linspace(*probe_range, PROBE_POINTS)
    c = np.abs(np.broadcast_to(commutator(p, xs), xs.shape))
    if np.all(c <= thresholds.identically_zero):
        return Degeneracy.DEGENERATE
    if abs(commutator(p, p.x0)) > thresholds.at_x0:
        return Degeneracy.NON_DEGENERATE
    return Degeneracy.INCONCLUSIVE


def langevin_rate(p: SdeProblem, probe_range: tuple[float, float] = DEFAULT_PROBE_RANGE) -> float | None:
    """``lam`` when the problem is ``a = lam * x``, ``sigma = 1``; else ``None``."""
    xs = np.linspace(*probe_range, 201)
    sig = np.broadcast_to(p.sigma(xs), xs.shape)
    if not np.all(sig == 1.0):
        return None
    lam = float(p.a.derivative(0.0, 1))
    if np.allclose(np.broadcast_to(p.a(xs), xs.shape), lam * xs, rtol=1e-13, atol=1e-13):
        return lam
    return None


# --------------------------------------------------------------------------
# Lamperti transform
# --------------------------------------------------------------------------


class LampertiError(ArithmeticError):
    """Diffusion coefficient not positive, or the inverse failed to converge."""


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True, eq=False)
class LampertiMap:
    """``theta`` memoised on an ``h``-spaced lattice anchored at 0.

    Lattice values are cumulative 8-point Gauss-Legendre integrals of
    ``1 / sigma``; a query adds one more Gauss-Legendre integral from the
    nearest lattice node below.  Queries outside the lattice fall back to
    adaptive quadrature.  Built eagerly; immutable afterwards.
    """

    problem: SdeProblem
    tol: float = 1e-12
    step: float = 1e-3
    half_width: float = 50.0
    _lattice: np.ndarray = field(init=False, repr=False)
    _lo_index: int = field(init=False, repr=False)
    _scale: float | None = field(init=False, repr=False)
    anchor: float = field(init=False)

    def __post_init__(self) -> None:
        sigma = self.problem.sigma
        scale = None
        if sigma.is_constant:
            c = float(sigma(0.0))
            if c <= 0.0:
                raise LampertiError(f"diffusion coefficient {c} is not positive")
            scale = c
        object.__setattr__(self, "_scale", scale)
        if scale is None:
            lo = -int(math.ceil(self.half_width / self.step))
            ks = np.arange(lo, -lo)
            cells = self._gl_integral(ks * self.step, (ks + 1) * self.step)
            cum = np.concatenate([[0.0], np.cumsum(cells.astype(np.longdouble))])
            lattice = (cum - cum[-lo]).astype(float)
            lattice.setflags(write=False)
            object.__setattr__(self, "_lattice", lattice)
            object.__setattr__(self, "_lo_index", lo)
        else:
            object.__setattr__(self, "_lattice", np.zeros(1))
            object.__setattr__(self, "_lo_index", 0)
        object.__setattr__(self, "anchor", float(self.theta(self.problem.x0)))

    def _gl_integral(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        xs = mid[..., None] + half[..., None] * _GL_NODES
        sig = np.broadcast_to(self.problem.sigma(xs), xs.shape)
        if np.any(sig <= 0.0) or not np.all(np.isfinite(sig)):
            raise LampertiError("diffusion coefficient is not positive on the integration range")
        return half * ((1.0 / sig) @ _GL_WEIGHTS)

    def _outside(self, x: float) -> float:
        edge = self.half_width if x > 0 else -self.half_width
        k = int(round(edge / self.step))
        base = self._lattice[k - self._lo_index]

        def inv(xi):
            s = float(self.problem.sigma(xi))
            if s <= 0.0:
                raise LampertiError(f"diffusion coefficient not positive at {xi}")
            return 1.0 / s

        val, _ = integrate.quad(inv, k * self.step, x, epsabs=self.tol, epsrel=1e-13, limit=500)
        return float(base + val)

    def theta(self, x):
        x = np.asarray(x, dtype=float)
        if self._scale is not None:
            out = x / self._scale
            return float(out) if out.ndim == 0 else out
        if not np.all(np.isfinite(x)):
            raise LampertiError("theta of a non-finite argument")
        flat = x.reshape(-1)
        k = np.floor(flat / self.step)
        inside = (k >= self._lo_index) & (k < -self._lo_index)
        out = np.empty_like(flat)
        ki = k[inside]
        out[inside] = self._lattice[ki.astype(int) - self._lo_index] + self._gl_integral(
            ki * self.step, flat[inside]
        )
        for i in np.flatnonzero(~inside):
            out[i] = self._outside(float(flat[i]))
        return float(out[0]) if x.ndim == 0 else out.reshape(x.shape)

    def theta_prime(self, x):
        return 1.0 / self.problem.sigma(x)

    def inverse(self, y, max_iter: int = 60):
        """Safeguarded Newton for ``theta(x) = y``; bisection fallback."""
        y = np.asarray(y, dtype=float)
        if self._scale is not None:
            out = y * self._scale
            return float(out) if out.ndim == 0 else out
        if not np.all(np.isfinite(y)):
            raise LampertiError("inverse of a non-finite value")
        shape = y.shape
        y = y.reshape(-1)
        x0 = self.problem.x0
        sig0 = float(self.problem.sigma(x0))
        x = x0 + sig0 * (y - self.anchor)
        tol = 1e-13 * np.maximum(1.0, np.abs(y))
        done = np.zeros(y.shape, dtype=bool)
        for _ in range(max_iter):
            active = ~done
            if not active.any():
                break
            xa = x[active]
            resid = self.theta(xa) - y[active]
            ok = np.abs(resid) <= tol[active]
            step = resid * np.broadcast_to(self.problem.sigma(xa), xa.shape)
            x[active] = np.where(ok, xa, xa - step)
            done[active] = ok
        for i in np.flatnonzero(~done):
            x[i] = self._bisect(float(y[i]), float(x[i]))
        return float(x[0]) if len(shape) == 0 else x.reshape(shape)

    def _bisect(self, y: float, guess: float) -> float:
        if not math.isfinite(guess):
            guess = self.problem.x0
        width = 1.0
        lo, hi = guess - width, guess + width
        for _ in range(200):
            if self.theta(lo) <= y <= self.theta(hi):
                break
            width *= 2.0
            lo, hi = guess - width, guess + width
        else:
            raise LampertiError(f"could not bracket theta^-1({y})")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self.theta(mid) < y:
                lo = mid
            else:
                hi = mid
            if abs(self.theta(mid) - y) <= 1e-13 * max(1.0, abs(y)) or hi - lo < 1e-15 * max(1.0, abs(mid)):
                return mid
        raise LampertiError(f"theta^-1({y}) did not converge")

    def reduced_drift(self, y):
        """``g(y)`` and ``g'(y) = (a' - a sigma' / sigma)(theta^{-1}(y))``."""
        x = self.inverse(y)
        a = self.problem.a
        s = self.problem.sigma
        g = a(x) / s(x)
        g_prime = a.derivative(x, 1) - a(x) * s.derivative(x, 1) / s(x)
        return g, g_prime


def theta(m: LampertiMap, x):
    return m.theta(x)


def theta_inverse(m: LampertiMap, y):
    return m.inverse(y)


def reduced_drift(m: LampertiMap, y):
    return m.reduced_drift(y)


def assumption_report(p: SdeProblem, probe_range: tuple[float, float] = DEFAULT_PROBE_RANGE):
    return validate_assumptions(p.a, p.sigma, probe_range, needs_positivity=not p.sigma.is_constant)
