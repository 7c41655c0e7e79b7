"""Quadrature rules for triangle and edge integrals.

The triangle rule is a 12-point symmetric Gauss rule exact for polynomials
up to degree 6, which covers every polynomial integrand appearing in the
assembled forms (the worst case is a quadratic field advecting a quadratic
basis function tested against another quadratic, degree 5). Edge rules are
Gauss-Legendre of selectable order; the default 3-point rule is exact to
degree 5, enough for quadratic traces, while smooth non-polynomial boundary
shapes are integrated with controllable accuracy.
"""

import numpy as np

# Barycentric coordinates and weights of the degree-6 rule (Dunavant).
# Weights sum to 1 and are applied as w * |K| on a physical triangle K.
_TRI_GROUPS = [
    (0.873821971016996, 0.063089014491502, 0.050844906370207),
    (0.501426509658179, 0.249286745170910, 0.116786275726379),
]
_TRI_ASYM = (0.636502499121399, 0.310352451033785, 0.053145049844816,
             0.082851075618374)


def triangle_rule():
    """Return (points, weights) on the reference triangle {x,y >= 0, x+y <= 1}.

    Returns
    -------
    points : ndarray, shape (12, 2)
    weights : ndarray, shape (12,)
        Weights summing to 1/2 (the reference triangle area), so physical
        integrals use w * (2*area).
    """
    bary = []
    wts = []
    for a, b, w in _TRI_GROUPS:
        for perm in ((a, b, b), (b, a, b), (b, b, a)):
            bary.append(perm)
            wts.append(w)
    a, b, c, w = _TRI_ASYM
    for perm in ((a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)):
        bary.append(perm)
        wts.append(w)
    bary = np.asarray(bary)
    pts = bary[:, 1:]  # (lambda2, lambda3) = (x, y) on the reference triangle
    return pts, 0.5 * np.asarray(wts)


def edge_rule(npoints=3):
    """Gauss-Legendre rule on [0, 1].

    Parameters
    ----------
    npoints : int
        Number of Gauss points; exact for polynomials of degree 2*npoints - 1.
    """
    x, w = np.polynomial.legendre.leggauss(npoints)
    return 0.5 * (x + 1.0), 0.5 * w
