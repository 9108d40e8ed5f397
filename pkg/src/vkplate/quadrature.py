"""Symmetric Gauss rules on the reference triangle (0,0), (1,0), (0,1).

Weights are normalized to sum to the reference area 1/2.
"""

from functools import lru_cache

import numpy as np


def _orbit3(a):
    b = (1.0 - a) / 2.0
    return [(a, b, b), (b, a, b), (b, b, a)]


def _orbit6(a, b):
    c = 1.0 - a - b
    return [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]


# (degree of exactness) -> list of (weight, barycentric orbit)
_RULES = {
    1: [(1.0, [(1 / 3, 1 / 3, 1 / 3)])],
    2: [(1 / 3, _orbit3(2 / 3))],
    4: [
        (0.223381589678011, _orbit3(0.108103018168070)),
        (0.109951743655322, _orbit3(0.816847572980459)),
    ],
    6: [
        (0.116786275726379, _orbit3(0.501426509658179)),
        (0.050844906370207, _orbit3(0.873821971016996)),
        (0.082851075618374, _orbit6(0.053145049844817, 0.310352451033784)),
    ],
}


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Points (nq, 2) and weights (nq,) exact for polynomials up to ``degree``."""
    available = sorted(_RULES)
    for d in available:
        if d >= degree:
            break
    else:
        raise ValueError(f"no triangle rule of degree {degree}; max is {available[-1]}")
    pts, wts = [], []
    for w, orbit in _RULES[d]:
        for bary in orbit:
            pts.append((bary[1], bary[2]))
            wts.append(w)
    pts = np.array(pts)
    wts = np.array(wts)
    wts = 0.5 * wts / wts.sum()
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts
