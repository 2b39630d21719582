"""Independent reference computations shared by the test modules.

Each routine takes a different numerical route than the package code it checks.
"""

import math

import numpy as np
from scipy.optimize import brentq


def lam(p, a1, a2, c):
    g = a1 * c + 0.5 * a2 * c * c
    # logistic form, not the ratio used in the package
    return 1.0 / (1.0 + (1.0 - p) / p * np.exp(-g))


def direct_fixed_points(p, a1, a2, grid_size=200_001):
    """Roots of lambda(c) - c by sign scan and Brent refinement."""
    xs = np.linspace(1e-12, 1 - 1e-12, grid_size)
    f = lam(p, a1, a2, xs) - xs
    roots = []
    for i in np.nonzero(np.sign(f[:-1]) != np.sign(f[1:]))[0]:
        roots.append(brentq(lambda c: lam(p, a1, a2, c) - c, xs[i], xs[i + 1], xtol=1e-15, rtol=1e-15))
    roots.extend(float(xs[i]) for i in np.nonzero(f == 0.0)[0])
    return sorted(roots)


def attractor_count(p, a1, a2):
    """Number of fixed points with slope < 1, from the direct scan."""
    count = 0
    for c in direct_fixed_points(p, a1, a2, grid_size=20_001):
        L = lam(p, a1, a2, c)
        if L * (1 - L) * (a1 + a2 * c) < 1.0:
            count += 1
    return count


def dense_level_kernel(n, p, a1, a2):
    """(n+1)x(n+1) level chain from configuration-level counting."""
    P = np.zeros((n + 1, n + 1))
    for k in range(n + 1):
        for s, frac, flip_up in ((k, (n - k) / n, True), (k - 1, k / n, False)):
            if frac == 0:
                continue
            h = a1 / n * s + a2 / n**2 * s * (s - 1) / 2
            plus = p * math.exp(h) / (p * math.exp(h) + 1 - p)
            if flip_up:
                P[k, k + 1] += frac * plus
                P[k, k] += frac * (1 - plus)
            else:
                P[k, k - 1] += frac * (1 - plus)
                P[k, k] += frac * plus
    return P


def binomial_pmf(n, p):
    return np.array([math.comb(n, k) * p**k * (1 - p) ** (n - k) for k in range(n + 1)])


def contraction_by_enumeration(n, p, a1, a2, k):
    """E[Hamming distance] after one coupled step, by listing every vertex choice.

    Pair: the n-1 shared vertices hold k ones; the extra vertex is 1 in X, 0 in Y.
    For a chosen vertex the shared uniform U splits [0, 1) into intervals on which
    the two new spins are fixed; the expectation is a sum of interval lengths.
    """
    def plus(s):
        h = a1 / n * s + a2 / n**2 * s * (s - 1) / 2
        w = p * math.exp(h)
        return w / (w + 1 - p)

    total = 0.0
    spins = [1] * k + [0] * (n - 1 - k)
    for i in range(n):
        if i == n - 1:
            # the disagreeing vertex: both chains see k ones elsewhere and share U,
            # so they coincide afterwards
            continue
        xi = spins[i]
        sx = k + 1 - xi  # X has the extra 1
        sy = k - xi
        fx, fy = plus(sx), plus(sy)
        lo, hi = min(fx, fy), max(fx, fy)
        # U in [lo, hi): the chosen spins differ; extra vertex still differs
        total += 1 + (hi - lo)
    return total / n
