"""Equilibrium moment relations from the Euler-Maruyama fixed point.

If rho* is invariant under one Euler-Maruyama step, then for every k

    mu_2k = E_rho*[ E[xi**2k | x] ],   xi ~ Normal(x + F dt, G sqrt(dt)),

and expanding the inner Gaussian moment in powers of dt turns this into a
linear constraint among raw moments whenever F and G**2 are polynomials.
A :class:`MomentRelation` stores that constraint with exact coefficients,
keeping track of which power of dt each piece carries.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Mapping

from .estimates import EquilibriumEstimate
from .poly import Polynomial, X, as_rational, double_factorial
from .systems import ItoSystem, cubic_attractor

__all__ = [
    "MomentRelation",
    "RelationClassification",
    "ClosureInfeasible",
    "derive_relation",
    "paper_general_relation",
    "classify_relation",
    "critical_sigma_cubic",
    "find_verdict_flip",
    "gaussian_closure_mu2",
    "closure_estimate",
    "relation_residual",
]

VARIANTS = ("expansion", "paper_general", "full_dt")


class ClosureInfeasible(ValueError):
    """The closed moment equation has no nonnegative real root."""


def _clean(terms: Mapping) -> dict[int, dict[int, Fraction]]:
    out: dict[int, dict[int, Fraction]] = {}
    for order, block in terms.items():
        kept = {int(p): c for p, c in block.items() if c != 0}
        if kept:
            out[int(order)] = dict(sorted(kept.items()))
    return dict(sorted(out.items()))


def _fmt_coeff(block: Mapping[int, Fraction]) -> str:
    parts = []
    for p, c in sorted(block.items()):
        if p == 0:
            parts.append(str(c))
        elif p == 1:
            parts.append(f"{c}·dt")
        else:
            parts.append(f"{c}·dt^{p}")
    return " + ".join(parts)


@dataclass(frozen=True)
class MomentRelation:
    """0 = sum over (order, p) of coeff * dt**p * mu_order, with mu_0 = 1.

    ``terms`` maps moment order -> {dt power -> coefficient}.  Coefficients
    are Fractions except for ``full_dt`` relations built from a float dt.
    """

    terms: Mapping[int, Mapping[int, Fraction]]
    k: int
    variant: str = "expansion"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown relation variant {self.variant!r}")
        object.__setattr__(self, "terms", _clean(self.terms))

    @property
    def orders(self) -> list[int]:
        return list(self.terms)

    @property
    def dt_powers(self) -> list[int]:
        return sorted({p for block in self.terms.values() for p in block})

    def block(self, power: int) -> dict[int, Fraction]:
        """Coefficients multiplying dt**power, keyed by moment order."""
        return {o: b[power] for o, b in self.terms.items() if power in b}

    def coefficient(self, order: int, dt=None):
        """Coefficient of mu_order, summed over dt powers.

        dt may be omitted only when a single dt power is present.
        """
        block = self.terms.get(order, {})
        if dt is None:
            if len(self.dt_powers) > 1:
                raise ValueError("relation carries several dt powers; pass dt")
            return sum(block.values(), Fraction(0))
        return sum((c * dt ** p for p, c in block.items()), Fraction(0))

    def reduced(self) -> "MomentRelation":
        """Divide out the common factor dt**min_power."""
        powers = self.dt_powers
        if not powers or powers[0] == 0:
            return self
        lo = powers[0]
        return MomentRelation(
            {o: {p - lo: c for p, c in b.items()} for o, b in self.terms.items()},
            self.k, self.variant)

    def truncated(self, max_power: int) -> "MomentRelation":
        return MomentRelation(
            {o: {p: c for p, c in b.items() if p <= max_power} for o, b in self.terms.items()},
            self.k, self.variant)

    def leading(self) -> "MomentRelation":
        powers = self.dt_powers
        return self if not powers else self.truncated(powers[0])

    def at_dt(self, dt) -> "MomentRelation":
        """Substitute a numeric dt after dividing out the common dt factor."""
        red = self.reduced()
        return MomentRelation(
            {o: {0: sum((c * dt ** p for p, c in b.items()), Fraction(0))}
             for o, b in red.terms.items()},
            self.k, "full_dt")

    def to_text(self) -> str:
        red = self.reduced()
        parts = []
        for order, block in red.terms.items():
            coeff = _fmt_coeff(block)
            if order == 0:
                parts.append(coeff if list(block) == [0] else f"({coeff})")
            else:
                parts.append(f"({coeff})·m{order}")
        return "0 = " + (" + ".join(parts) if parts else "0")

    def __str__(self) -> str:
        return self.to_text()

    @classmethod
    def from_text(cls, text: str, k: int = 1, variant: str = "expansion") -> "MomentRelation":
        """Inverse of :meth:`to_text` (recovers the reduced relation)."""
        text = text.strip()
        if not text.startswith("0 = "):
            raise ValueError(f"relation text must start with '0 = ': {text!r}")
        body = text[4:]
        terms: dict[int, dict[int, Fraction]] = {}
        if body == "0":
            return cls({}, k, variant)
        for piece in _split_top(body):
            m = re.fullmatch(r"\((.*)\)·m(\d+)", piece)
            if m:
                order, coeff = int(m.group(2)), m.group(1)
            else:
                order, coeff = 0, piece[1:-1] if piece.startswith("(") else piece
            block = terms.setdefault(order, {})
            for atom in coeff.split(" + "):
                cm = re.fullmatch(r"(-?\d+(?:/\d+)?)(?:·dt(?:\^(\d+))?)?", atom.strip())
                if cm is None:
                    raise ValueError(f"cannot parse coefficient {atom!r}")
                power = 0 if "dt" not in atom else int(cm.group(2) or 1)
                block[power] = block.get(power, Fraction(0)) + Fraction(cm.group(1))
        return cls(terms, k, variant)


def _split_top(body: str) -> list[str]:
    pieces, depth, start, i = [], 0, 0, 0
    while i < len(body):
        ch = body[i]
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif depth == 0 and body.startswith(" + ", i):
            pieces.append(body[start:i])
            i += 3
            start = i
            continue
        i += 1
    pieces.append(body[start:])
    return pieces


def _poly_to_orders(p: Polynomial) -> dict[int, Fraction]:
    return {m: c for m, c in enumerate(p.coeffs) if c != 0}


def _expansion_blocks(system: ItoSystem, k: int) -> dict[int, Polynomial]:
    """E[xi**2k | x] - x**2k as {dt power: polynomial in x}."""
    n = 2 * k
    F, G2 = system.drift, system.noise_sq
    f_pow = [Polynomial([1])]
    for _ in range(n):
        f_pow.append(f_pow[-1] * F)
    g_pow = [Polynomial([1])]
    for _ in range(k):
        g_pow.append(g_pow[-1] * G2)
    blocks: dict[int, Polynomial] = {}
    for i in range(k + 1):
        weight = Fraction(math.factorial(n), double_factorial(2 * i) * math.factorial(n - 2 * i))
        m = n - 2 * i
        for j in range(m + 1):
            power = i + m - j
            term = (g_pow[i] * f_pow[m - j] * X ** j).scale(weight * math.comb(m, j))
            blocks[power] = blocks.get(power, Polynomial()) + term
    # the (i=0, j=2k) term is mu_2k itself and cancels against the left side
    blocks[0] = blocks.get(0, Polynomial()) - X ** n
    if not blocks[0].is_zero():
        raise AssertionError("dt**0 block failed to cancel")
    del blocks[0]
    return blocks


def derive_relation(system: ItoSystem, k: int, dt_mode: str = "leading",
                    dt=None) -> MomentRelation:
    """Moment relation obtained from invariance of mu_2k under one step.

    dt_mode:
      ``leading``  keep only the dt**1 block,
      ``symbolic`` keep every dt power,
      ``full``     substitute ``dt`` and collapse powers (variant full_dt).
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    blocks = _expansion_blocks(system, k)
    if dt_mode == "leading":
        blocks = {1: blocks.get(1, Polynomial())}
    elif dt_mode not in ("symbolic", "full", "full_at"):
        raise ValueError(f"unknown dt_mode {dt_mode!r}")
    terms: dict[int, dict[int, Fraction]] = {}
    for power, poly in blocks.items():
        for order, c in _poly_to_orders(poly).items():
            terms.setdefault(order, {})[power] = c
    rel = MomentRelation(terms, k, "expansion")
    if dt_mode in ("full", "full_at"):
        if dt is None:
            raise ValueError("dt_mode 'full' needs a dt value")
        if dt <= 0:
            raise ValueError("dt must be positive")
        rel = rel.at_dt(dt)
    return rel


def paper_general_relation(system: ItoSystem, k: int) -> MomentRelation:
    """The general-k form 0 = dt * E[2k x**(2k-1) F + G**2] taken as written.

    For k >= 2 this differs from :func:`derive_relation`, whose expansion
    weights the G**2 term by k(2k-1) x**(2k-2).  Both are kept so that
    numerical equilibria can arbitrate.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    poly = (X ** (2 * k - 1) * system.drift).scale(2 * k) + system.noise_sq
    return MomentRelation({o: {1: c} for o, c in _poly_to_orders(poly).items()},
                          k, "paper_general")


@dataclass(frozen=True)
class RelationClassification:
    verdict: str
    reason: str

    @property
    def contradictory(self) -> bool:
        return self.verdict == "contradictory"


def classify_relation(rel: MomentRelation) -> RelationClassification:
    """Decide whether any distribution with finite moments can satisfy rel.

    Uses the lowest dt block.  The relation is contradictory when the
    constant term is strictly positive and every even-moment coefficient is
    nonnegative (or the mirror image): even moments are nonnegative, so the
    right side can never reach zero.
    """
    red = rel.reduced()
    block = red.block(0)
    odd = sorted(o for o, c in block.items() if o % 2 == 1 and c != 0)
    if odd:
        return RelationClassification(
            "consistent", f"odd moments {odd} are sign-indefinite")
    c0 = block.get(0, Fraction(0))
    coeffs = [c for o, c in block.items() if o > 0]
    if c0 > 0 and all(c >= 0 for c in coeffs):
        return RelationClassification(
            "contradictory",
            f"constant {c0} > 0 and all moment coefficients >= 0")
    if c0 < 0 and all(c <= 0 for c in coeffs):
        return RelationClassification(
            "contradictory",
            f"constant {c0} < 0 and all moment coefficients <= 0")
    return RelationClassification("consistent", "coefficients have mixed signs")


def critical_sigma_cubic() -> float:
    """Noise level above which the cubic attractor's k=1 relation is impossible."""
    return math.sqrt(2) / 3


def find_verdict_flip(family: Callable[[Fraction], ItoSystem] = None,
                      lo: float = 0.1, hi: float = 1.0, tol: float = 1e-12,
                      k: int = 1) -> float:
    """Bisect on the parameter where classify_relation turns contradictory.

    ``family`` maps an exact parameter value to a system; the cubic
    attractor is the default.  Requires lo consistent and hi contradictory.
    """
    if family is None:
        family = cubic_attractor

    def bad(s: float) -> bool:
        return classify_relation(derive_relation(family(Fraction(s)), k)).contradictory

    if bad(lo) or not bad(hi):
        raise ValueError("verdict does not flip between lo and hi")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if bad(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def gaussian_closure_mu2(rel_k1: MomentRelation) -> float:
    """Close a k=1 relation with mu4 = 3 mu2**2 and solve for mu2.

    Returns the smallest nonnegative real root; raises ClosureInfeasible when
    there is none.
    """
    red = rel_k1.reduced()
    if len(red.dt_powers) > 1:
        red = red.leading()
    block = red.block(0)
    extra = set(block) - {0, 2, 4}
    if extra:
        raise ValueError(f"closure needs orders within {{0, 2, 4}}, got {sorted(block)}")
    c0 = as_rational(block.get(0, 0))
    c2 = as_rational(block.get(2, 0))
    a = 3 * as_rational(block.get(4, 0))
    if a == 0:
        if c2 == 0:
            if c0 == 0:
                return 0.0
            raise ClosureInfeasible("closure equation reduces to a nonzero constant")
        root = -c0 / c2
        if root < 0:
            raise ClosureInfeasible(f"linear closure root {float(root):.6g} is negative")
        return float(root)
    disc = c2 * c2 - 4 * a * c0
    if disc < 0:
        raise ClosureInfeasible("closure quadratic has no real roots")
    sq = math.sqrt(disc)
    b, c, af = float(c2), float(c0), float(a)
    # cancellation-free pair of roots
    q = -0.5 * (b + math.copysign(sq, b)) if b != 0 else 0.5 * sq
    roots = [q / af]
    roots.append(c / q if q != 0 else -q / af)
    nonneg = sorted(r for r in roots if r >= 0)
    if not nonneg:
        raise ClosureInfeasible(f"closure roots {roots} are all negative")
    return nonneg[0]


def closure_estimate(rel_k1: MomentRelation) -> EquilibriumEstimate:
    """Gaussian moments (mu2, 3 mu2**2, 15 mu2**3) from the closure root."""
    m2 = gaussian_closure_mu2(rel_k1)
    return EquilibriumEstimate.from_values({2: m2, 4: 3 * m2 ** 2, 6: 15 * m2 ** 3},
                                           "closure")


def relation_residual(rel: MomentRelation, moments, dt=None) -> tuple[float, float]:
    """Evaluate the relation at a set of moments.

    Returns (raw, normalized) where raw is the right-hand side and
    normalized = |raw| / sum |individual terms|, in [0, 1].  ``moments`` is an
    EquilibriumEstimate or a plain {order: value} mapping.
    """
    red = rel.reduced()
    if dt is None and any(p > 0 for p in red.dt_powers):
        raise ValueError("relation has dt-dependent coefficients; pass dt")
    terms = []
    for order in red.orders:
        if order == 0:
            mu = 1.0
        elif isinstance(moments, EquilibriumEstimate):
            try:
                mu = moments.mu(order)
            except KeyError:
                raise KeyError(f"moment of order {order} missing from estimate") from None
        else:
            if order not in moments:
                raise KeyError(f"moment of order {order} missing from estimate")
            mu = float(moments[order])
        coeff = red.coefficient(order, 0 if dt is None else dt)
        terms.append(float(coeff) * mu)
    raw = math.fsum(terms)
    scale = math.fsum(abs(t) for t in terms)
    return raw, (abs(raw) / scale if scale > 0 else 0.0)
