"""Container for equilibrium moment estimates shared by every oracle."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

__all__ = ["EquilibriumEstimate", "HEAVY_TAILS", "NOT_CONVERGED"]

HEAVY_TAILS = "unreliable: heavy tails"
NOT_CONVERGED = "not converged"


@dataclass
class EquilibriumEstimate:
    """Raw moments of an equilibrium density.

    ``moments`` maps order -> (estimate, standard_error).  Order 0 is always
    present and equal to 1.  ``flags`` collects anything a caller must not
    ignore (clipping, divergence, non-convergence).
    """

    moments: dict[int, tuple[float, float]]
    method: str
    provenance: dict = field(default_factory=dict)
    exceedance_count: int = 0
    truncation: dict[int, float] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.method not in ("mc", "fpe", "closure"):
            raise ValueError(f"unknown estimate method {self.method!r}")
        self.moments = {int(k): (float(v[0]), float(v[1])) for k, v in self.moments.items()}
        self.moments[0] = (1.0, 0.0)
        for order, (est, se) in self.moments.items():
            if se < 0 or math.isnan(se):
                raise ValueError(f"standard error for order {order} must be >= 0")
            if order % 2 == 0 and est < 0:
                raise ValueError(f"even moment of order {order} is negative: {est}")

    def mu(self, order: int) -> float:
        try:
            return self.moments[order][0]
        except KeyError:
            raise KeyError(f"no estimate for moment order {order}") from None

    def se(self, order: int) -> float:
        try:
            return self.moments[order][1]
        except KeyError:
            raise KeyError(f"no estimate for moment order {order}") from None

    @property
    def reliable(self) -> bool:
        return not self.flags

    @classmethod
    def from_values(cls, values: dict[int, float], method: str, **kw) -> "EquilibriumEstimate":
        return cls({k: (v, 0.0) for k, v in values.items()}, method, **kw)
