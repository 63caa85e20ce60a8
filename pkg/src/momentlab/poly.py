"""Exact univariate polynomials over the rationals and Gaussian moment integrals.

Coefficients are stored lowest power first as :class:`fractions.Fraction`, so
``Polynomial([1, 0, 3])`` is ``1 + 3x**2``.  Evaluation at a float is allowed
and is approximate; everything else is exact.
"""
from __future__ import annotations

import math
from fractions import Fraction
from numbers import Rational
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Polynomial",
    "as_rational",
    "double_factorial",
    "gaussian_raw_moment",
    "gaussian_expectation",
    "gaussian_expectation_var",
    "poly_arith",
    "X",
]


def as_rational(value) -> Fraction:
    """Coerce ``value`` to an exact Fraction.

    Floats go through their shortest repr, so ``0.1`` becomes ``1/10`` rather
    than the binary expansion.  Strings accept ``"p/q"`` and decimals.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, Rational)):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError(f"cannot make a rational from {value!r}")
        return Fraction(repr(value))
    if isinstance(value, str):
        return Fraction(value.strip())
    if isinstance(value, np.floating):
        return as_rational(float(value))
    if isinstance(value, np.integer):
        return Fraction(int(value))
    raise TypeError(f"cannot make a rational from {type(value).__name__}")


def double_factorial(n: int) -> int:
    """n!! with the convention (-1)!! = 0!! = 1."""
    if n < -1:
        raise ValueError("double factorial defined for n >= -1")
    out = 1
    while n > 1:
        out *= n
        n -= 2
    return out


class Polynomial:
    """Immutable polynomial in x with Fraction coefficients."""

    __slots__ = ("_c",)

    def __init__(self, coeffs: Iterable = ()):
        c = [as_rational(v) for v in coeffs]
        while c and c[-1] == 0:
            c.pop()
        self._c: tuple[Fraction, ...] = tuple(c)

    @classmethod
    def constant(cls, c) -> "Polynomial":
        return cls([c])

    @classmethod
    def monomial(cls, power: int, c=1) -> "Polynomial":
        if power < 0:
            raise ValueError("negative power")
        return cls([0] * power + [c])

    @property
    def coeffs(self) -> tuple[Fraction, ...]:
        return self._c

    @property
    def degree(self) -> int:
        """len(coeffs) - 1, so the zero polynomial has degree -1."""
        return len(self._c) - 1

    def is_zero(self) -> bool:
        return not self._c

    def __getitem__(self, i: int) -> Fraction:
        if i < 0:
            raise IndexError("negative power")
        return self._c[i] if i < len(self._c) else Fraction(0)

    def __len__(self) -> int:
        return len(self._c)

    def __iter__(self):
        return iter(self._c)

    def __eq__(self, other) -> bool:
        if isinstance(other, Polynomial):
            return self._c == other._c
        if isinstance(other, (int, Fraction)):
            return self._c == Polynomial([other])._c
        return NotImplemented

    def __hash__(self) -> int:
        return hash(self._c)

    def __repr__(self) -> str:
        return f"Polynomial([{', '.join(str(c) for c in self._c)}])"

    def __str__(self) -> str:
        if not self._c:
            return "0"
        parts = []
        for i, c in enumerate(self._c):
            if c == 0:
                continue
            mono = "" if i == 0 else ("x" if i == 1 else f"x^{i}")
            if mono and c == 1:
                parts.append(mono)
            elif mono:
                parts.append(f"({c})*{mono}")
            else:
                parts.append(str(c))
        return " + ".join(parts)

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            return other
        return Polynomial([other])

    def __add__(self, other) -> "Polynomial":
        try:
            o = self._coerce(other)
        except TypeError:
            return NotImplemented
        n = max(len(self._c), len(o._c))
        return Polynomial(self[i] + o[i] for i in range(n))

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial(-c for c in self._c)

    def __sub__(self, other) -> "Polynomial":
        try:
            return self + (-self._coerce(other))
        except TypeError:
            return NotImplemented

    def __rsub__(self, other) -> "Polynomial":
        return self._coerce(other) - self

    def __mul__(self, other) -> "Polynomial":
        if not isinstance(other, Polynomial):
            try:
                s = as_rational(other)
            except TypeError:
                return NotImplemented
            return self.scale(s)
        if not self._c or not other._c:
            return Polynomial()
        out = [Fraction(0)] * (len(self._c) + len(other._c) - 1)
        for i, a in enumerate(self._c):
            if a == 0:
                continue
            for j, b in enumerate(other._c):
                out[i + j] += a * b
        return Polynomial(out)

    __rmul__ = __mul__

    def scale(self, s) -> "Polynomial":
        s = as_rational(s)
        return Polynomial(s * c for c in self._c)

    def __pow__(self, n: int) -> "Polynomial":
        if not isinstance(n, int) or n < 0:
            raise ValueError("polynomial power must be a nonnegative integer")
        result = Polynomial([1])
        base = self
        while n:
            if n & 1:
                result = result * base
            n >>= 1
            if n:
                base = base * base
        return result

    def __call__(self, x):
        return self.eval(x)

    def eval(self, x):
        """Horner evaluation.  Exact for int/Fraction x, float otherwise.

        numpy arrays are evaluated elementwise in float64.
        """
        if isinstance(x, np.ndarray):
            acc = np.zeros_like(x, dtype=float)
            for c in reversed(self._c):
                acc = acc * x + float(c)
            return acc
        if isinstance(x, float):
            acc = 0.0
            for c in reversed(self._c):
                acc = acc * x + float(c)
            return acc
        acc = Fraction(0)
        for c in reversed(self._c):
            acc = acc * x + c
        return acc

    def derivative(self) -> "Polynomial":
        return Polynomial(i * c for i, c in enumerate(self._c) if i > 0)

    def compose(self, inner: "Polynomial") -> "Polynomial":
        """self(inner(x))."""
        acc = Polynomial()
        for c in reversed(self._c):
            acc = acc * inner + c
        return acc

    def is_even(self) -> bool:
        return all(c == 0 for c in self._c[1::2])

    def is_odd(self) -> bool:
        return all(c == 0 for c in self._c[0::2])

    def to_numpy(self) -> np.ndarray:
        """float64 coefficients, lowest power first (at least length 1)."""
        if not self._c:
            return np.zeros(1)
        return np.array([float(c) for c in self._c])


X = Polynomial([0, 1])


def poly_arith(kind: str, *operands):
    """Dispatch form of the polynomial ring operations.

    ``kind`` is one of add, mul, scale, pow, eval.
    """
    if kind == "add":
        out = Polynomial()
        for p in operands:
            out = out + _as_poly(p)
        return out
    if kind == "mul":
        out = Polynomial([1])
        for p in operands:
            out = out * _as_poly(p)
        return out
    if kind == "scale":
        p, s = operands
        return _as_poly(p).scale(s)
    if kind == "pow":
        p, n = operands
        return _as_poly(p) ** n
    if kind == "eval":
        p, x = operands
        return _as_poly(p).eval(x)
    raise ValueError(f"unknown polynomial operation {kind!r}")


def _as_poly(p) -> Polynomial:
    return p if isinstance(p, Polynomial) else Polynomial(p)


def _is_exact(v) -> bool:
    return isinstance(v, (int, Fraction, Polynomial))


def _raw_moment_var(n: int, a, var):
    # E[(a + Z*s)^n] with s^2 = var; only even j contribute
    if n < 0:
        raise ValueError("moment order must be nonnegative")
    total = 0
    var_pow = 1
    for j in range(0, n + 1, 2):
        total = total + math.comb(n, j) * double_factorial(j - 1) * var_pow * a ** (n - j)
        var_pow = var_pow * var
    return total


def gaussian_raw_moment(n: int, a, s):
    """E[U**n] for U ~ Normal(a, s).

    Uses sum_j C(n, j) a**(n-j) s**j (j-1)!! over even j.  With int/Fraction
    inputs the result is an exact Fraction; ``a`` may also be a Polynomial,
    which gives the moment as a polynomial in the mean.
    """
    if not isinstance(s, Polynomial) and s < 0:
        raise ValueError(f"standard deviation must be nonnegative, got {s}")
    if _is_exact(s):
        s = as_rational(s) if not isinstance(s, Polynomial) else s
    if isinstance(a, (int,)):
        a = Fraction(a)
    out = _raw_moment_var(n, a, s * s)
    if isinstance(out, int):
        out = Fraction(out)
    return out


def gaussian_expectation(p, a, s):
    """E[p(U)] for U ~ Normal(a, s) and polynomial p."""
    if not isinstance(s, Polynomial) and s < 0:
        raise ValueError(f"standard deviation must be nonnegative, got {s}")
    return _expectation_var(_as_poly(p), a, s * s)


def _expectation_var(p: Polynomial, a, var):
    if isinstance(a, int):
        a = Fraction(a)
    total = Fraction(0)
    for i, c in enumerate(p.coeffs):
        if c == 0:
            continue
        total = total + c * _raw_moment_var(i, a, var)
    return total


def gaussian_expectation_var(p: Sequence, a, var):
    """Like :func:`gaussian_expectation` but parametrised by the variance.

    Lets callers keep sigma**2 exact when sigma itself is irrational.
    """
    if not isinstance(var, Polynomial) and var < 0:
        raise ValueError(f"variance must be nonnegative, got {var}")
    return _expectation_var(_as_poly(p), a, var)
