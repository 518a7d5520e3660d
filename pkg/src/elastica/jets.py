"""Truncated Taylor (jet) arithmetic in time.

A jet is a list of numpy arrays [c0, c1, ..., cK] holding Taylor
coefficients c_k = (d/dt)^k f(0) / k!.  Products are truncated Cauchy
convolutions; grid derivative operators act coefficient-wise.  Used to
differentiate the assembled pressure system in time exactly (semi-discretely).
"""

from __future__ import annotations

import numpy as np

Jet = list


def const(c0: np.ndarray, order: int) -> Jet:
    return [c0] + [np.zeros_like(c0) for _ in range(order)]


def lift(coeffs: list[np.ndarray]) -> Jet:
    return list(coeffs)


def add(a: Jet, b: Jet) -> Jet:
    return [x + y for x, y in zip(a, b)]


def sub(a: Jet, b: Jet) -> Jet:
    return [x - y for x, y in zip(a, b)]


def scale(a: Jet, s: float) -> Jet:
    return [s * x for x in a]


def mul(a: Jet, b: Jet) -> Jet:
    K = min(len(a), len(b)) - 1
    out = []
    for k in range(K + 1):
        acc = a[0] * b[k]
        for i in range(1, k + 1):
            acc = acc + a[i] * b[k - i]
        out.append(acc)
    return out


def recip(a: Jet) -> Jet:
    out = [1.0 / a[0]]
    for k in range(1, len(a)):
        acc = a[1] * out[k - 1]
        for i in range(2, k + 1):
            acc = acc + a[i] * out[k - i]
        out.append(-acc / a[0])
    return out


def sqrt(a: Jet) -> Jet:
    out = [np.sqrt(a[0])]
    for k in range(1, len(a)):
        acc = a[k].copy()
        for i in range(1, k):
            acc = acc - out[i] * out[k - i]
        out.append(acc / (2.0 * out[0]))
    return out


def apply_linear(op, a: Jet) -> Jet:
    """Apply a linear operator (e.g. a grid derivative) coefficient-wise."""
    return [op(c) for c in a]


def derivative(a: Jet, k: int):
    """k-th time derivative at t = 0: k! * c_k."""
    from math import factorial

    return factorial(k) * a[k]
