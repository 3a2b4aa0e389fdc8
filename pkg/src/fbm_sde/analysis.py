"""Analytic quantities behind the optimal error constant.

Contents: the weight process along a solution path and its mean-square
integral, the Malliavin derivative of the solution, zeta at negative
arguments, the constants ``kappa``, ``beta`` and ``K2``, the kernel sums
``K1``/``C0`` whose limit is ``-zeta(-2H)``, the cell covariance ``theta``,
and a deterministic evaluator of ``E|int rho (B - B~) dt|^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np
from scipy import special

from .fbm_engine import check_hurst, sample_paths
from .model import SdeProblem, commutator
from .schemes import DEFAULT_SUBSTEPS, wong_zakai_solve

__all__ = [
    "WeightPath",
    "Estimate",
    "Constants",
    "weight_path",
    "weight_path_stochastic",
    "mean_square_weight_integral",
    "nd_condition_estimate",
    "malliavin_derivative",
    "zeta_negative",
    "zeta_real",
    "constants_for",
    "odd_reciprocal_series",
    "lower_bound_constant",
    "k1_kernel",
    "k2_constant",
    "c0_sequence",
    "theta_cross_cov",
    "interp_error_kernel",
    "exact_weighted_interp_error",
    "predicted_asymptotic_error",
    "simulate_weights",
]


# --------------------------------------------------------------------------
# weight process
# --------------------------------------------------------------------------


@dataclass
class WeightPath:
    n: int
    y_values: np.ndarray
    source: int | np.ndarray | None = None


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float

    def __iter__(self):
        return iter((self.value, self.stderr))


def _log_rate(p: SdeProblem, x):
    # (a' - a sigma'/sigma)(x), written through the commutator so that it is
    # exactly zero wherever the commutator is
    return commutator(p, x) / p.sigma(x)


def _tail_trapezoid(f: np.ndarray, dt: float) -> np.ndarray:
    """``int_{t_k}^1 f`` for every node, by the trapezoid rule."""
    cells = 0.5 * dt * (f[..., 1:] + f[..., :-1])
    out = np.zeros_like(f)
    out[..., :-1] = np.cumsum(cells[..., ::-1], axis=-1)[..., ::-1]
    return out


def weight_path(p: SdeProblem, fine_path, fine_trajectory, source=None) -> WeightPath:
    """Weight process on the grid from the Riemann-integral representation.

    ``Y_t = sigma(X_1) h(X_t) exp(int_t^1 h(X_s) ds)`` with
    ``h = a' - a sigma' / sigma``; the integral uses the trapezoid rule on the
    trajectory's grid.  ``fine_path`` only fixes the grid and may be ``None``.
    """
    x = np.asarray(fine_trajectory, dtype=float)
    n = x.shape[-1] - 1
    if fine_path is not None:
        values = getattr(fine_path, "values", fine_path)
        if np.shape(values)[-1] != n + 1:
            raise ValueError("trajectory and path live on different grids")
    h = np.broadcast_to(_log_rate(p, x), x.shape)
    tail = _tail_trapezoid(h, 1.0 / n)
    sig_end = np.broadcast_to(p.sigma(x[..., -1:]), x[..., -1:].shape)
    return WeightPath(n, sig_end * h * np.exp(tail), source)


def weight_path_stochastic(p: SdeProblem, fine_path, fine_trajectory) -> WeightPath:
    """Weight process from the form with a pathwise Stieltjes integral.

    ``(a' sigma - a sigma')(X_t) exp(int_t^1 a'(X) ds + int_t^1 sigma'(X) dB)``,
    both integrals by trapezoid sums.  Only used as a cross-check.
    """
    x = np.asarray(fine_trajectory, dtype=float)
    b = np.asarray(getattr(fine_path, "values", fine_path), dtype=float)
    n = x.shape[-1] - 1
    a1 = np.broadcast_to(p.a.derivative(x, 1), x.shape)
    s1 = np.broadcast_to(p.sigma.derivative(x, 1), x.shape)
    drift_part = _tail_trapezoid(a1, 1.0 / n)
    db = np.diff(b, axis=-1)
    cells = 0.5 * (s1[..., 1:] + s1[..., :-1]) * db
    noise_part = np.zeros_like(x)
    noise_part[..., :-1] = np.cumsum(cells[..., ::-1], axis=-1)[..., ::-1]
    comm = np.broadcast_to(commutator(p, x), x.shape)
    return WeightPath(n, comm * np.exp(drift_part + noise_part))


def simulate_weights(
    p: SdeProblem,
    paths: int,
    fine_n: int,
    seed: int = 0,
    substeps: int = DEFAULT_SUBSTEPS,
    method: str = "circulant",
    chunk: int = 256,
) -> np.ndarray:
    """Weight paths ``(paths, fine_n + 1)`` along Wong-Zakai trajectories."""
    out = np.empty((paths, fine_n + 1))
    for start in range(0, paths, chunk):
        ids = range(start, min(paths, start + chunk))
        values = sample_paths(fine_n, p.hurst, seed, ids, method)
        traj = wong_zakai_solve(p, values, substeps, trajectory=True, strict=True).trajectory
        out[start : start + len(ids)] = weight_path(p, values, traj).y_values
    return out


def _trapezoid(f: np.ndarray) -> np.ndarray:
    n = f.shape[-1] - 1
    return (f[..., 1:] + f[..., :-1]).sum(axis=-1) * (0.5 / n)


def mean_square_weight_integral(
    p: SdeProblem,
    paths: int,
    fine_n: int,
    seed: int = 0,
    substeps: int = DEFAULT_SUBSTEPS,
    method: str = "circulant",
) -> Estimate:
    """Monte Carlo estimate of ``int_0^1 E|Y_t|^2 dt`` with its standard error."""
    if paths < 2:
        raise ValueError("need at least two paths")
    y = simulate_weights(p, paths, fine_n, seed, substeps, method)
    per_path = _trapezoid(y**2)
    return Estimate(float(per_path.mean()), float(per_path.std(ddof=1) / math.sqrt(paths)))


def nd_condition_estimate(
    p: SdeProblem,
    paths: int,
    fine_n: int,
    seed: int = 0,
    substeps: int = DEFAULT_SUBSTEPS,
    method: str = "circulant",
) -> Estimate:
    """Estimate of ``int_0^1 |E Y_t| dt``; the error is the delta-method one."""
    if paths < 2:
        raise ValueError("need at least two paths")
    y = simulate_weights(p, paths, fine_n, seed, substeps, method)
    mean = y.mean(axis=0)
    value = float(_trapezoid(np.abs(mean)))
    linear = _trapezoid(np.sign(mean) * y)
    return Estimate(value, float(linear.std(ddof=1) / math.sqrt(paths)))


def malliavin_derivative(p: SdeProblem, fine_trajectory, s: float, t: float) -> float:
    """``D_s X_t = sigma(X_t) exp(int_s^t h(X)) 1{s <= t}`` along one trajectory.

    Off-grid times use linear interpolation of the trajectory and of the
    cumulative trapezoid integral of ``h``.
    """
    if not (0.0 <= s <= 1.0 and 0.0 <= t <= 1.0):
        raise ValueError("s and t must lie in [0, 1]")
    if s > t:
        return 0.0
    x = np.asarray(fine_trajectory, dtype=float)
    n = x.size - 1
    nodes = np.arange(n + 1) / n
    h = np.broadcast_to(_log_rate(p, x), x.shape)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (h[1:] + h[:-1]) / n)])
    xt = np.interp(t, nodes, x)
    return float(p.sigma(xt) * math.exp(np.interp(t, nodes, cum) - np.interp(s, nodes, cum)))


# --------------------------------------------------------------------------
# zeta and constants
# --------------------------------------------------------------------------

_BERNOULLI = [
    Fraction(1, 6),
    Fraction(-1, 30),
    Fraction(1, 42),
    Fraction(-1, 30),
    Fraction(5, 66),
    Fraction(-691, 2730),
    Fraction(7, 6),
    Fraction(-3617, 510),
    Fraction(43867, 798),
    Fraction(-174611, 330),
]


def zeta_real(s: float, terms: int = 20) -> float:
    """``zeta(s)`` for real ``s > 1``: Dirichlet sum plus Euler-Maclaurin tail."""
    if not s > 1.0:
        raise ValueError("zeta_real needs s > 1")
    n = terms
    head = math.fsum(k ** (-s) for k in range(1, n))
    tail = [n ** (1.0 - s) / (s - 1.0), 0.5 * n ** (-s)]
    rising = s  # s (s+1) ... (s + 2j - 2)
    fact = 2.0  # (2j)!
    for j, b in enumerate(_BERNOULLI, start=1):
        tail.append(float(b) / fact * rising * n ** (-s - 2 * j + 1))
        rising *= (s + 2 * j - 1) * (s + 2 * j)
        fact *= (2 * j + 1) * (2 * j + 2)
    return math.fsum([head] + tail)


def zeta_negative(s: float) -> float:
    """``zeta(s)`` for ``-2 < s < 0`` through the functional equation."""
    s = float(s)
    if not -2.0 < s < 0.0:
        raise ValueError(f"zeta_negative needs -2 < s < 0, got {s}")
    return (
        2.0**s
        * math.pi ** (s - 1.0)
        * math.sin(0.5 * math.pi * s)
        * math.gamma(1.0 - s)
        * zeta_real(1.0 - s)
    )


def k2_constant(h: float) -> float:
    h = check_hurst(h)
    p = 2.0 * h
    return 1.0 / (p + 1.0) - 1.0 / ((p + 2.0) * (p + 1.0)) - 0.25


@dataclass(frozen=True)
class Constants:
    hurst: float
    kappa: float
    zeta_neg2H: float
    beta: float
    k2: float


def constants_for(h: float) -> Constants:
    h = check_hurst(h, sde=True)
    z = zeta_negative(-2.0 * h)
    return Constants(h, h * (2.0 * h - 1.0), z, math.sqrt(abs(z)), k2_constant(h))


def odd_reciprocal_series(h: float) -> float:
    """``sum_{j >= 1} (2j + 1)^{-(2H + 1)}`` via ``(1 - 2^{-s}) zeta(s) - 1``."""
    s = 2.0 * check_hurst(h) + 1.0
    return (1.0 - 2.0 ** (-s)) * zeta_real(s) - 1.0


def lower_bound_constant(h: float, spectral_c: float) -> float:
    """Lower-bound constant for a caller-supplied spectral constant ``c_H``."""
    h = check_hurst(h, sde=True)
    if not spectral_c > 0.0:
        raise ValueError("spectral constant must be positive")
    sq = odd_reciprocal_series(h) / (2.0 * math.pi ** (2.0 * h + 2.0) * spectral_c)
    return math.sqrt(sq)


# --------------------------------------------------------------------------
# kernel sums
# --------------------------------------------------------------------------


def _k1_series(k: np.ndarray, p: float) -> np.ndarray:
    # K1(k) = k^p sum_{m>=2} C(p, 2m) (1/(2m+2) - 1/4) k^{-2m}; converges for k >= 2
    u2 = 1.0 / k**2
    total = np.zeros_like(k)
    term_pow = u2.copy()
    for m in range(2, 80):
        term_pow = term_pow * u2
        c = special.binom(p, 2 * m) * (1.0 / (2 * m + 2) - 0.25)
        contrib = c * term_pow
        total = total + contrib
        if np.all(np.abs(contrib) <= 1e-18 * np.abs(total)):
            break
    return k**p * total


def _k1_direct(k: float, p: float) -> float:
    terms = [
        -(2 * k**p + (k + 1) ** p + abs(k - 1) ** p) / 8.0,
        ((k + 1) ** (p + 1) - abs(k - 1) ** (p + 1)) / (2 * (p + 1)),
        (2 * k ** (p + 2) - (k + 1) ** (p + 2) - abs(k - 1) ** (p + 2)) / (2 * (p + 1) * (p + 2)),
    ]
    return math.fsum(terms)


def k1_kernel(k, h: float):
    """Scaled double integral of ``theta`` over cells ``k`` apart (``k >= 1``).

    The three power terms cancel to ``O(k^{2H-4})``; for ``k >= 2`` the
    binomial expansion in ``1/k`` is summed instead, which is free of that
    cancellation.
    """
    p = 2.0 * check_hurst(h)
    k_arr = np.asarray(k, dtype=float)
    if np.any(k_arr < 1) or np.any(k_arr != np.round(k_arr)):
        raise ValueError("k must be an integer >= 1")
    flat = k_arr.reshape(-1)
    out = np.empty_like(flat)
    small = flat < 2
    out[small] = [_k1_direct(float(v), p) for v in flat[small]]
    if (~small).any():
        out[~small] = _k1_series(flat[~small], p)
    return float(out[0]) if k_arr.ndim == 0 else out.reshape(k_arr.shape)


def _neumaier(values: np.ndarray) -> np.longdouble:
    total = np.longdouble(0.0)
    comp = np.longdouble(0.0)
    for v in values:
        t = total + v
        if abs(total) >= abs(v):
            comp += (total - t) + v
        else:
            comp += (v - t) + total
        total = t
    return total + comp


def c0_sequence(r: int, h: float) -> float:
    """Closed form of ``C0(r) = K2 + 2 sum_{k=1}^r K1(k)``; tends to ``-zeta(-2H)``.

    The result is an O(1) residue of O(r^{2H+2}) terms.  Everything runs in
    extended precision, the power differences go through ``expm1/log1p``, and
    the power sum is compensated.
    """
    if int(r) != r or r < 1:
        raise ValueError("r must be an integer >= 1")
    r = int(r)
    p = np.longdouble(2.0 * check_hurst(h))
    one = np.longdouble(1.0)
    rr = np.longdouble(r)
    ks = np.arange(1, r + 1, dtype=np.longdouble)
    power_sum = _neumaier(ks**p)
    inv = one / rr

    def up_diff(q):  # (r+1)^q - r^q
        return rr**q * np.expm1(q * np.log1p(inv))

    terms = [
        -up_diff(p) / 4,
        -power_sum,
        (2 * rr ** (p + 1) + up_diff(p + 1)) / (p + 1),
        -up_diff(p + 2) / ((p + 1) * (p + 2)),
    ]
    return float(_neumaier(np.array(terms, dtype=np.longdouble)))


def theta_cross_cov(i: int, j: int, s1, s2, n: int, h: float):
    """``theta_{i,j}(s1, s2)``: covariance of cell-midpoint-average minus value."""
    h = check_hurst(h)
    p = 2.0 * h
    ti, ti1, tj, tj1 = i / n, (i + 1) / n, j / n, (j + 1) / n
    s1 = np.asarray(s1, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    eps = 1e-12
    if np.any((s1 < ti - eps) | (s1 > ti1 + eps)) or np.any((s2 < tj - eps) | (s2 > tj1 + eps)):
        raise ValueError("s1 must lie in cell i and s2 in cell j")
    out = (
        -(abs(ti - tj) ** p + abs(ti - tj1) ** p + abs(ti1 - tj) ** p + abs(ti1 - tj1) ** p) / 8.0
        + (
            np.abs(ti - s2) ** p
            + np.abs(ti1 - s2) ** p
            + np.abs(tj - s1) ** p
            + np.abs(tj1 - s1) ** p
        )
        / 4.0
        - np.abs(s1 - s2) ** p / 2.0
    )
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# weighted interpolation error
# --------------------------------------------------------------------------


def interp_error_kernel(d: int, u, v, p: float, kernel: str = "interp"):
    """Cell-local covariance kernel divided by ``dt^{2H}``.

    ``u``, ``v`` are positions in cells ``i`` and ``j = i - d`` in units of the
    step.  ``kernel="interp"`` is ``E[(B - B~)(s1) (B - B~)(s2)]``;
    ``kernel="midpoint"`` replaces ``B~`` by the cell's endpoint average,
    which is ``theta``.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if kernel == "interp":
        wb = (1.0 - u, u)
        wa = (1.0 - v, v)
    elif kernel == "midpoint":
        wb = (0.5, 0.5)
        wa = (0.5, 0.5)
    else:
        raise ValueError(f"unknown kernel {kernel!r}")
    s1 = d + u
    s2 = v
    total = np.abs(s1 - s2) ** p
    for a_off, wa_v in zip((0.0, 1.0), wa):
        total = total - wa_v * np.abs(s1 - a_off) ** p
    for b_off, wb_v in zip((d, d + 1.0), wb):
        total = total - wb_v * np.abs(b_off - s2) ** p
    for a_off, wa_v in zip((0.0, 1.0), wa):
        for b_off, wb_v in zip((d, d + 1.0), wb):
            total = total + wa_v * wb_v * abs(b_off - a_off) ** p
    return -0.5 * total


def _gauss_rule(q: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(q)
    return 0.5 * (x + 1.0), 0.5 * w


def _graded_rule(q: int) -> tuple[np.ndarray, np.ndarray]:
    # q-point Gauss-Legendre on each half of [0, 1], pulled through a quintic
    # smoothstep so that power-type singularities at the panel ends become
    # high-order zeros
    u, w = _gauss_rule(q)
    phi = u**3 * (10.0 - 15.0 * u + 6.0 * u**2)
    dphi = 30.0 * u**2 * (1.0 - u) ** 2
    nodes = np.concatenate([0.5 * phi, 0.5 + 0.5 * phi])
    weights = np.concatenate([0.5 * w * dphi, 0.5 * w * dphi])
    return nodes, weights


SINGULAR_ORDER_FACTOR = 4


def exact_weighted_interp_error(
    rho: Callable[[np.ndarray], np.ndarray],
    n: int,
    h: float,
    q: int = 8,
    kernel: str = "interp",
) -> float:
    """Deterministic ``E|int_0^1 rho(t) (B_t - B~_t) dt|^2`` for a fixed weight.

    Sums cell-pair double integrals of ``rho(s1) rho(s2) k(s1, s2)``.  The
    kernel depends on a cell pair only through the offset ``d`` and is smooth
    for ``d >= 2``, where a plain ``q``-point tensor Gauss-Legendre rule is
    used.  Pairs with ``d <= 1`` carry ``|.|^{2H}`` edge singularities and use
    a graded rule with ``4q`` nodes per half cell; the diagonal is split along
    ``s1 = s2`` and the triangle mapped onto the unit square.
    """
    h = check_hurst(h)
    if q < 2:
        raise ValueError("quadrature order must be >= 2")
    p = 2.0 * h
    cells = np.arange(n)[:, None]

    def weighted_rho(nodes, weights):
        return np.broadcast_to(rho((cells + nodes) / n), (n, nodes.size)) * weights

    total = 0.0
    nodes, weights = _gauss_rule(q)
    smooth = weighted_rho(nodes, weights)
    for d in range(2, n):
        kd = interp_error_kernel(d, nodes[:, None], nodes[None, :], p, kernel)
        total += 2.0 * float(np.sum((smooth[d:] @ kd) * smooth[: n - d]))

    nodes, weights = _graded_rule(SINGULAR_ORDER_FACTOR * q)
    graded = weighted_rho(nodes, weights)
    if n > 1:
        k1 = interp_error_kernel(1, nodes[:, None], nodes[None, :], p, kernel)
        total += 2.0 * float(np.sum((graded[1:] @ k1) * graded[:-1]))

    # diagonal: s1 = u, s2 = u * v on the triangle s2 < s1, doubled by symmetry
    uu = nodes[:, None]
    vv = uu * nodes[None, :]
    k0 = interp_error_kernel(0, uu, vv, p, kernel) * (weights[None, :] * uu)
    r2 = np.broadcast_to(rho((cells[:, :, None] + vv[None]) / n), (n, nodes.size, nodes.size))
    total += 2.0 * float(np.einsum("ia,iab,ab->", graded, r2, k0))
    return total * n ** (-p - 2.0)


def predicted_asymptotic_error(
    p: SdeProblem,
    paths: int,
    fine_n: int,
    seed: int = 0,
    substeps: int = DEFAULT_SUBSTEPS,
) -> float:
    """``beta_H (int E|Y|^2)^{1/2}``: limit of the scaled McShane error."""
    msw = mean_square_weight_integral(p, paths, fine_n, seed, substeps)
    return constants_for(p.hurst).beta * math.sqrt(max(msw.value, 0.0))
