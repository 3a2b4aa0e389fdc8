"""Independent reference implementations used only by the tests."""

import math

import mpmath
import numpy as np


def zeta_eta(s, terms=60):
    """zeta(s) from the alternating eta series, Borwein's acceleration.

    Valid for every real s != 1; no functional equation involved.
    """
    mpmath.mp.dps = 30
    s = mpmath.mpf(s)
    n = terms
    d = [mpmath.mpf(0)] * (n + 1)
    acc = mpmath.mpf(0)
    for i in range(n + 1):
        acc += mpmath.factorial(n + i - 1) * mpmath.mpf(4) ** i / (mpmath.factorial(n - i) * mpmath.factorial(2 * i))
        d[i] = n * acc
    eta = mpmath.mpf(0)
    for k in range(n):
        eta += (-1) ** k * (d[k] - d[n]) / (k + 1) ** s
    eta = -eta / d[n]
    return float(eta / (1 - mpmath.mpf(2) ** (1 - s)))


def fbm_cov(s, t, h):
    s, t = np.asarray(s, float), np.asarray(t, float)
    return 0.5 * (np.abs(s) ** (2 * h) + np.abs(t) ** (2 * h) - np.abs(t - s) ** (2 * h))


def theta_by_covariance(i, j, s1, s2, n, h):
    """(1/4) E(B_ti + B_ti+1 - 2 B_s1)(B_tj + B_tj+1 - 2 B_s2) expanded bilinearly."""
    left = [(i / n, 1.0), ((i + 1) / n, 1.0), (s1, -2.0)]
    right = [(j / n, 1.0), ((j + 1) / n, 1.0), (s2, -2.0)]
    return 0.25 * sum(a * b * fbm_cov(u, v, h) for u, a in left for v, b in right)


def theta_lamperti_2_plus_sin(x):
    """Closed-form int_0^x dxi / (2 + sin xi) for |x| < pi."""
    r3 = math.sqrt(3.0)
    return 2.0 / r3 * (math.atan((2.0 * math.tan(x / 2.0) + 1.0) / r3) - math.pi / 6.0)


def c0_mpmath(r, h, dps=40):
    """K2 + 2 sum K1(k) straight from the three-line formula, high precision."""
    mpmath.mp.dps = dps
    p = mpmath.mpf(2 * h)
    k2 = 1 / (p + 1) - 1 / ((p + 2) * (p + 1)) - mpmath.mpf(1) / 4
    total = k2
    for k in range(1, r + 1):
        total += 2 * k1_mpmath(k, h, dps)
    return float(total)


def k1_mpmath(k, h, dps=40):
    mpmath.mp.dps = dps
    p = mpmath.mpf(2 * h)
    k = mpmath.mpf(k)
    return (
        -(2 * k**p + (k + 1) ** p + abs(k - 1) ** p) / 8
        + ((k + 1) ** (p + 1) - abs(k - 1) ** (p + 1)) / (2 * (p + 1))
        + (2 * k ** (p + 2) - (k + 1) ** (p + 2) - abs(k - 1) ** (p + 2)) / (2 * (p + 1) * (p + 2))
    )


def interp_error_variance_on_grid(rho, n, factor, h):
    """E|trapezoid sum of rho (B - B~)|^2 on a grid refined `factor` times.

    Exact Gaussian variance w' S w of a linear functional of the fine node
    values; tends to the continuous quantity as factor grows.
    """
    big = n * factor
    t = np.arange(big + 1) / big
    w = np.full(big + 1, 1.0 / big)
    w[0] = w[-1] = 0.5 / big
    w = w * rho(t)
    coef = w.copy()
    k = np.arange(big + 1)
    cell = np.minimum(k // factor, n - 1)
    frac = (k - cell * factor) / factor
    np.add.at(coef, cell * factor, -w * (1 - frac))
    np.add.at(coef, (cell + 1) * factor, -w * frac)
    cov = fbm_cov(t[1:, None], t[None, 1:], h)
    c = coef[1:]
    return float(c @ cov @ c)
