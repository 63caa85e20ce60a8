"""Itô systems dx = F(x) dt + G(x) dW with polynomial F and G**2."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .poly import Polynomial, X, _expectation_var, as_rational

__all__ = [
    "ItoSystem",
    "make_system",
    "langevin_to_ito",
    "cubic_attractor",
    "ornstein_uhlenbeck",
    "em_transition_params",
    "POSITIVITY_SAMPLES",
]

POSITIVITY_SAMPLES = 1024


@dataclass(frozen=True)
class ItoSystem:
    drift: Polynomial
    noise_sq: Polynomial
    label: str = ""
    domain_halfwidth: float = 10.0
    sigma: Fraction | None = None

    @property
    def symmetric(self) -> bool:
        """Odd drift and even squared noise: the equilibrium is symmetric."""
        return self.drift.is_odd() and self.noise_sq.is_even()

    def F(self, x):
        return self.drift.eval(x)

    def G2(self, x):
        return self.noise_sq.eval(x)


def _check_nonnegative(g2: Polynomial, halfwidth: float) -> None:
    xs = np.linspace(-halfwidth, halfwidth, POSITIVITY_SAMPLES)
    vals = g2.eval(xs)
    # rounding slack relative to the size of the individual terms
    scale = np.zeros_like(xs)
    for i, c in enumerate(g2.coeffs):
        scale += abs(float(c)) * np.abs(xs) ** i
    bad = vals < -1e-12 * np.maximum(scale, 1.0)
    if bad.any():
        i = int(np.argmax(bad))
        raise ValueError(
            f"squared noise is negative at x={xs[i]:.6g} (G2={vals[i]:.6g}); "
            f"checked {POSITIVITY_SAMPLES} points on [-{halfwidth}, {halfwidth}]"
        )


def make_system(F, G2, domain_halfwidth: float = 10.0, label: str = "",
                sigma=None) -> ItoSystem:
    """Build a validated system.

    G2 is sampled at 1024 evenly spaced points on the analysis domain and the
    system is rejected if it goes negative anywhere there.
    """
    F = F if isinstance(F, Polynomial) else Polynomial(F)
    G2 = G2 if isinstance(G2, Polynomial) else Polynomial(G2)
    if domain_halfwidth <= 0:
        raise ValueError("domain_halfwidth must be positive")
    _check_nonnegative(G2, float(domain_halfwidth))
    return ItoSystem(F, G2, label, float(domain_halfwidth),
                     None if sigma is None else as_rational(sigma))


def _resolve_variance(sigma, variance) -> tuple[Fraction, Fraction | None]:
    if (sigma is None) == (variance is None):
        raise ValueError("give exactly one of sigma or variance")
    if variance is not None:
        var = as_rational(variance)
        if var < 0:
            raise ValueError("variance must be nonnegative")
        return var, None
    s = as_rational(sigma)
    if s < 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    return s * s, s


def langevin_to_ito(v, sigma=None, *, variance=None, label: str = "",
                    domain_halfwidth: float | None = None) -> ItoSystem:
    """Itô form of dx/dt = v(X), X ~ Normal(x, sigma).

    Drift is the mean and squared noise the variance of v(X), both expanded
    exactly as polynomials in x.  ``variance`` may be passed instead of
    ``sigma`` to keep sigma**2 exact when sigma is irrational.
    """
    v = v if isinstance(v, Polynomial) else Polynomial(v)
    var, s = _resolve_variance(sigma, variance)
    F = _expectation_var(v, X, var)
    F = F if isinstance(F, Polynomial) else Polynomial([F])
    second = _expectation_var(v * v, X, var)
    second = second if isinstance(second, Polynomial) else Polynomial([second])
    G2 = second - F * F
    if domain_halfwidth is None:
        domain_halfwidth = 10.0 * max(1.0, math.sqrt(float(var)))
    return make_system(F, G2, domain_halfwidth, label, sigma=s)


def cubic_attractor(sigma=None, *, variance=None) -> ItoSystem:
    """dx/dt = -X**3 with X ~ Normal(x, sigma), in Itô form."""
    return langevin_to_ito(Polynomial([0, 0, 0, -1]), sigma, variance=variance,
                           label="cubic")


def ornstein_uhlenbeck(theta=1, noise_sq=1, domain_halfwidth: float = 10.0) -> ItoSystem:
    """dx = -theta x dt + sqrt(noise_sq) dW."""
    return make_system(Polynomial([0, -as_rational(theta)]),
                       Polynomial([noise_sq]), domain_halfwidth, label="ou")


def em_transition_params(system: ItoSystem, x, dt) -> tuple[float, float]:
    """Mean and standard deviation of one Euler-Maruyama step from x."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    g2 = system.noise_sq.eval(x)
    if g2 < 0:
        raise ValueError(f"squared noise negative at x={x}: {g2}")
    mean = x + system.drift.eval(x) * dt
    return mean, math.sqrt(g2 * dt)
