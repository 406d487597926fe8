"""Quadrature rules on the reference triangle and on edges.

Triangle rules are returned in barycentric coordinates with weights that
sum to one, so the integral over a triangle K is ``|K| * sum(w * f(x_q))``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import permutations

import numpy as np
from scipy.special import roots_jacobi


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, 3) barycentric, or (nq,) in [0, 1] for edges
    weights: np.ndarray  # (nq,), sum 1
    degree: int


def _orbit(bary, weight):
    pts = sorted(set(permutations(bary)))
    return [list(p) for p in pts], [weight] * len(pts)


# 12-point symmetric rule of degree 6 (Dunavant 1985)
_DUNAVANT6 = [
    ((0.501426509658179, 0.249286745170910, 0.249286745170910), 0.116786275726379),
    ((0.873821971016996, 0.063089014491502, 0.063089014491502), 0.050844906370207),
    ((0.053145049844817, 0.310352451033784, 0.636502499121399), 0.082851075618374),
]


def _polish_dunavant6():
    # the tabulated 15-digit values are refined by Newton steps on the moment
    # equations so that degree-6 exactness holds to rounding
    from scipy.optimize import least_squares

    x0 = np.array([0.249286745170910, 0.063089014491502, 0.053145049844817, 0.310352451033784,
                   0.116786275726379, 0.050844906370207, 0.082851075618374])

    def build(p):
        a, b, c, d, wa, wb, wc = p
        pts, wts = [], []
        for bary, w in (((1 - 2 * a, a, a), wa), ((1 - 2 * b, b, b), wb), ((c, d, 1 - c - d), wc)):
            q, ww = _orbit(bary, w)
            pts += q
            wts += ww
        return np.array(pts), np.array(wts)

    def resid(p):
        pts, wts = build(p)
        return _moment_errors(pts, wts, 6)

    sol = least_squares(resid, x0, xtol=1e-15, ftol=1e-15, gtol=1e-15)
    return build(sol.x)


def _exact_monomial(i, j):
    # integral of xi^i eta^j over the reference triangle divided by its area 1/2
    from math import factorial

    return 2.0 * factorial(i) * factorial(j) / factorial(i + j + 2)


def _moment_errors(pts, wts, degree):
    xi, eta = pts[:, 1], pts[:, 2]
    errs = []
    for i in range(degree + 1):
        for j in range(degree + 1 - i):
            errs.append(np.dot(wts, xi**i * eta**j) - _exact_monomial(i, j))
    return np.array(errs)


def conical_product_rule(degree: int) -> QuadratureRule:
    """Collapsed Gauss-Jacobi (Stroud) rule, exact to ``degree``, positive weights."""
    n = degree // 2 + 1
    a, wa = roots_jacobi(n, 1.0, 0.0)  # weight (1 - a) on [-1, 1]
    b, wb = np.polynomial.legendre.leggauss(n)
    s = 0.5 * (a + 1.0)
    t = 0.5 * (b + 1.0)
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(wa, wb) / 8.0
    xi = S.ravel()
    eta = ((1.0 - S) * T).ravel()
    pts = np.stack([1.0 - xi - eta, xi, eta], axis=1)
    w = 2.0 * W.ravel()
    return QuadratureRule(pts, w / w.sum() * 1.0, degree)


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadratureRule:
    if degree <= 6:
        pts, wts = _polish_dunavant6()
        return QuadratureRule(pts, wts, 6)
    return conical_product_rule(degree)


@lru_cache(maxsize=None)
def edge_rule(npoints: int) -> QuadratureRule:
    """Gauss-Legendre on [0, 1], exact to degree ``2 * npoints - 1``."""
    x, w = np.polynomial.legendre.leggauss(npoints)
    return QuadratureRule(0.5 * (x + 1.0), 0.5 * w, 2 * npoints - 1)


# degree used for polynomial products, and for smooth data / error integrals
ASSEMBLY_DEGREE = 6
DATA_DEGREE = 12
