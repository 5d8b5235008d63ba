"""Independent reference implementations used by the tests.

Nothing here imports the package's transforms or wavenumber tables: every
oracle rebuilds what it needs from first principles, so agreement with the
library is evidence rather than tautology.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def signed_integers(n: int) -> np.ndarray:
    """Integer wavenumbers in storage order; the Nyquist entry is reported as +n/2."""
    return np.array([k if k <= n // 2 else k - n for k in range(n)])


def direct_dft(f: np.ndarray) -> np.ndarray:
    """``sum_x f(x) exp(-2 pi i sum_j k_j x_j / n_j)`` by an explicit double sum."""
    n1, n2, n3 = f.shape
    pts = np.array(list(itertools.product(range(n1), range(n2), range(n3))), dtype=float)
    phase = pts / np.array([n1, n2, n3], dtype=float)
    flat = f.reshape(-1)
    out = np.empty(len(pts), dtype=np.complex128)
    for i, k in enumerate(pts):
        out[i] = np.sum(flat * np.exp(-2j * np.pi * (phase @ k)))
    return out.reshape(f.shape)


def nyquist_free(c: np.ndarray) -> np.ndarray:
    """Zero every coefficient sitting on a Nyquist plane."""
    c = c.copy()
    for axis, n in enumerate(c.shape[-3:]):
        idx = [slice(None)] * c.ndim
        idx[c.ndim - 3 + axis] = n // 2
        c[tuple(idx)] = 0.0
    return c


def direct_sobolev(components, lengths, s: float) -> float:
    """Homogeneous Sobolev norm of real samples from the direct DFT, zero mode dropped."""
    total = 0.0
    shape = components[0].shape
    N = float(np.prod(shape))
    vol = float(np.prod(lengths))
    ks = [2 * np.pi * signed_integers(n) / L for n, L in zip(shape, lengths)]
    for f in components:
        c = nyquist_free(direct_dft(f))
        for idx in itertools.product(*(range(n) for n in shape)):
            xi2 = sum(ks[a][idx[a]] ** 2 for a in range(3))
            if xi2 == 0:
                continue
            total += xi2**s * abs(c[idx]) ** 2
    return math.sqrt(total * vol / N**2)


def nested_lebesgue(a: np.ndarray, spacing, p: float, q: float) -> float:
    """``(sum_{x_h} (sum_{x3} |a|^q dx3)^{p/q} dx1 dx2)^{1/p}`` with plain loops."""
    n1, n2, n3 = a.shape
    dx1, dx2, dx3 = spacing
    outer = []
    for i in range(n1):
        for j in range(n2):
            column = [abs(a[i, j, k]) for k in range(n3)]
            if q == math.inf:
                inner = max(column)
            else:
                inner = (sum(v**q for v in column) * dx3) ** (1.0 / q)
            outer.append(inner)
    if p == math.inf:
        return max(outer)
    return (sum(v**p for v in outer) * dx1 * dx2) ** (1.0 / p)


def taylor_green(x1, x2, t: float, amplitude: float = 1.0):
    """Decaying 2D Taylor-Green vortex of unit viscosity and its pressure."""
    decay = amplitude * math.exp(-2.0 * t)
    u1 = decay * np.cos(x1) * np.sin(x2)
    u2 = -decay * np.sin(x1) * np.cos(x2)
    p = -0.25 * decay**2 * (np.cos(2 * x1) + np.cos(2 * x2))
    return u1, u2, p


def fd_divergence_free_check(u1, u2, u3, spacing) -> float:
    """Fourth-order central-difference divergence, a rough independent check."""
    def d(f, axis, h):
        return (-np.roll(f, -2, axis) + 8 * np.roll(f, -1, axis) - 8 * np.roll(f, 1, axis) + np.roll(f, 2, axis)) / (12 * h)

    return float(np.abs(d(u1, 0, spacing[0]) + d(u2, 1, spacing[1]) + d(u3, 2, spacing[2])).max())
