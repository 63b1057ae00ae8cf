"""Independent reference computations used to freeze expected values.

Nothing here imports the package under test.
"""
import math
from fractions import Fraction

import mpmath

mpmath.mp.prec = 300
PI = math.pi


def rmul(a, b):
    return float(Fraction(a) * Fraction(b))


def rsub(a, b):
    return float(Fraction(a) - Fraction(b))


def radd(a, b):
    return float(Fraction(a) + Fraction(b))


def rdiv(a, b):
    return float(Fraction(a) / Fraction(b))


def logistic_step(mu, x):
    return rmul(rmul(mu, x), rsub(1.0, x))


def sine_step(sigma, x):
    return rmul(sigma, float(mpmath.sin(mpmath.mpf(rmul(PI, x)))))


def chebyshev_step(theta, x):
    return float(mpmath.cos(mpmath.mpf(rmul(theta, float(mpmath.acos(mpmath.mpf(x)))))))


def quantize(x, shift=False):
    if shift:
        x = rdiv(radd(x, 1.0), 2.0)
    return math.floor(Fraction(rmul(x, 1e14))) % 256


def reference_keystream(step, control, seed, n, burn_in=1000, shift=False):
    x = seed
    for _ in range(burn_in):
        x = step(control, x)
    out = []
    for _ in range(n):
        x = step(control, x)
        out.append(quantize(x, shift))
    return out


def chebyshev_t5(x):
    # T5(x) = 16x^5 - 20x^3 + 5x, evaluated exactly
    x = Fraction(x)
    return float(16 * x ** 5 - 20 * x ** 3 + 5 * x)


def pearson_hand(o, p):
    n = len(o)
    eo, ep = Fraction(sum(o), n), Fraction(sum(p), n)
    num = sum((Fraction(a) - eo) * (Fraction(b) - ep) for a, b in zip(o, p))
    so = sum((Fraction(a) - eo) ** 2 for a in o)
    sp = sum((Fraction(b) - ep) ** 2 for b in p)
    return float(num) / math.sqrt(float(so * sp))
