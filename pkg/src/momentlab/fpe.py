"""Fokker-Planck evolution on a truncated uniform grid.

Solves d(rho)/dt = -d/dx J with J = F rho - d/dx(D rho), D = G**2 / 2, in
finite-volume form on a vertex grid.  Each node owns the trapezoid weight of
its control volume, fluxes live on the midpoints between nodes, and both ends
are no-flux walls, so sum(w * rho) is conserved by construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .estimates import NOT_CONVERGED, EquilibriumEstimate
from .systems import ItoSystem

__all__ = [
    "Grid",
    "GridDensity",
    "FpeInstabilityError",
    "build_grid",
    "fpe_operator",
    "fpe_evolve",
    "density_moments",
    "width_sweep",
    "WidthRow",
    "mu2_scale_guess",
    "fpe_equilibrium",
    "MIN_POINTS",
]

MIN_POINTS = 64
NEG_TOL = 1e-12


class FpeInstabilityError(RuntimeError):
    """Density went non-finite or significantly negative."""


@dataclass(frozen=True)
class Grid:
    x_min: float
    x_max: float
    n: int

    def __post_init__(self):
        if self.n < MIN_POINTS:
            raise ValueError(f"grid needs at least {MIN_POINTS} points, got {self.n}")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")

    @property
    def spacing(self) -> float:
        return (self.x_max - self.x_min) / (self.n - 1)

    @property
    def halfwidth(self) -> float:
        return 0.5 * (self.x_max - self.x_min)

    @property
    def center(self) -> float:
        return 0.5 * (self.x_max + self.x_min)

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n)

    @property
    def weights(self) -> np.ndarray:
        w = np.full(self.n, self.spacing)
        w[0] = w[-1] = 0.5 * self.spacing
        return w


@dataclass
class GridDensity:
    grid: Grid
    values: np.ndarray
    info: dict = field(default_factory=dict)

    def mass(self) -> float:
        return float(self.grid.weights @ self.values)

    def integrate(self, f: np.ndarray) -> float:
        return float(self.grid.weights @ (f * self.values))

    def to_text(self) -> str:
        """Two columns, x and rho, one point per line."""
        return "".join(f"{x:.17g} {r:.17g}\n" for x, r in zip(self.grid.points, self.values))


def build_grid(system: ItoSystem, width_stds: float, n: int, mu2_guess: float) -> Grid:
    """Symmetric grid spanning ``width_stds`` equilibrium standard deviations.

    The half-width is (width_stds / 2) * sqrt(mu2_guess).
    """
    if not mu2_guess > 0:
        raise ValueError(f"mu2_guess must be positive, got {mu2_guess}")
    if not width_stds > 0:
        raise ValueError(f"width must be positive, got {width_stds}")
    hw = 0.5 * width_stds * math.sqrt(mu2_guess)
    return Grid(-hw, hw, int(n))


def fpe_operator(system: ItoSystem, grid: Grid) -> sp.csr_matrix:
    """Tridiagonal A with  w * d(rho)/dt = A rho.

    Column sums of A vanish, which is the discrete statement of mass
    conservation.
    """
    x = grid.points
    h = grid.spacing
    xm = 0.5 * (x[:-1] + x[1:])
    Fm = system.drift.eval(xm)
    D = 0.5 * system.noise_sq.eval(x)
    # J_{i+1/2} = cl * rho_i + cr * rho_{i+1}
    cl = 0.5 * Fm + D[:-1] / h
    cr = 0.5 * Fm - D[1:] / h
    n = grid.n
    main = np.zeros(n)
    main[:-1] -= cl
    main[1:] += cr
    upper = -cr
    lower = cl
    return sp.diags([lower, main, upper], [-1, 0, 1], shape=(n, n), format="csr")


def cell_peclet(system: ItoSystem, grid: Grid) -> float:
    """max h|F| / (2D) over faces; above 1 the central scheme may lose positivity."""
    x = grid.points
    xm = 0.5 * (x[:-1] + x[1:])
    Fm = np.abs(system.drift.eval(xm))
    D = 0.5 * system.noise_sq.eval(x)
    Dm = np.minimum(D[:-1], D[1:])
    with np.errstate(divide="ignore", invalid="ignore"):
        pe = np.where(Fm > 0, grid.spacing * Fm / (2 * Dm), 0.0)
    return float(np.max(pe))


def _initial(grid: Grid, init) -> np.ndarray:
    x = grid.points
    if isinstance(init, str):
        if init == "gaussian":
            s = grid.halfwidth / 6
            rho = np.exp(-0.5 * ((x - grid.center) / s) ** 2)
        elif init == "uniform":
            rho = np.ones(grid.n)
        else:
            raise ValueError(f"unknown initial condition {init!r}")
    else:
        rho = np.asarray(init, dtype=float).copy()
        if rho.shape != (grid.n,):
            raise ValueError("initial density has the wrong length")
        if (rho < 0).any():
            raise ValueError("initial density must be nonnegative")
    return rho / (grid.weights @ rho)


def fpe_evolve(system: ItoSystem, grid: Grid, dt: float | None = None, T: float = 100.0,
               conv_eps: float = 1e-6, init="gaussian",
               theta: float = 1.0) -> tuple[GridDensity, bool]:
    """Evolve a density to time T.

    The default theta = 1 is backward Euler: unconditionally stable and,
    with the central-flux operator below cell Peclet 2, positivity
    preserving.  Its fixed point is the steady state of the spatial operator
    for any dt.  theta = 0.5 gives Crank-Nicolson.

    ``converged`` is true when mu2 and mu4 each change by less than conv_eps
    (relative, per unit time) over the last 10% of the run.
    """
    if dt is None:
        dt = T / 4000
    if not dt > 0 or not T > 0:
        raise ValueError("dt and T must be positive")
    if not 0.5 <= theta <= 1:
        raise ValueError("theta must lie in [0.5, 1]")
    n_steps = max(1, math.ceil(T / dt - 1e-9))
    dt = T / n_steps

    w = grid.weights
    A = fpe_operator(system, grid).tocsc()
    W = sp.diags(w, format="csc")
    lhs = splu((W - theta * dt * A).tocsc())
    rhs = (W + (1 - theta) * dt * A).tocsr()

    x = grid.points
    x2 = x * x
    x4 = x2 * x2
    rho = _initial(grid, init)

    window_start = n_steps - max(1, n_steps // 10)
    n_checks = 10
    check_every = max(1, (n_steps - window_start) // n_checks)
    checks: list[tuple[float, float, float]] = []
    mass_drift = 0.0
    clamped = 0
    for step in range(1, n_steps + 1):
        rho = lhs.solve(rhs @ rho)
        lo = rho.min()
        if not np.isfinite(rho).all() or lo < -NEG_TOL:
            bad = int(np.argmin(np.where(np.isfinite(rho), rho, -np.inf)))
            raise FpeInstabilityError(
                f"density unstable at step {step} (t={step * dt:.6g}): "
                f"min {lo:.3e} at x={x[bad]:.6g}; dt={dt:.3g}, h={grid.spacing:.3g}, "
                f"cell Peclet {cell_peclet(system, grid):.3g}")
        mass = w @ rho
        mass_drift = max(mass_drift, abs(mass - 1.0))
        if lo < 0:
            clamped += 1
            rho = np.maximum(rho, 0.0)
            rho /= w @ rho
        if step >= window_start and ((step - window_start) % check_every == 0 or step == n_steps):
            checks.append((step * dt, w @ (x2 * rho), w @ (x4 * rho)))

    converged = _converged(checks, conv_eps)
    info = dict(T=T, dt=dt, steps=n_steps, theta=theta, mass_drift=mass_drift,
                clamped_steps=clamped, converged=converged,
                peclet=cell_peclet(system, grid))
    return GridDensity(grid, rho, info), converged


def _converged(checks, conv_eps: float) -> bool:
    if len(checks) < 2:
        return False
    for (t0, a0, b0), (t1, a1, b1) in zip(checks, checks[1:]):
        span = t1 - t0
        if span <= 0:
            continue
        for u, v in ((a0, a1), (b0, b1)):
            scale = max(abs(u), abs(v))
            if scale > 0 and abs(v - u) / scale / span >= conv_eps:
                return False
    return True


def density_moments(rho: GridDensity, orders: Sequence[int] = (2, 4, 6)) -> EquilibriumEstimate:
    """Trapezoid-rule raw moments.

    The truncation indicator for order m is the share of |x|**m rho held in the
    outer 5% of the domain (|x - center| > 0.95 halfwidth); values near zero
    mean the tails are resolved.
    """
    g = rho.grid
    x = g.points
    outer = np.abs(x - g.center) > 0.95 * g.halfwidth
    moments = {}
    trunc = {}
    for m in orders:
        xm = x ** m
        moments[m] = (rho.integrate(xm), 0.0)
        ax = np.abs(xm) * rho.values
        total = g.weights @ ax
        trunc[m] = float((g.weights * outer) @ ax / total) if total > 0 else 0.0
    prov = dict(n=g.n, x_min=g.x_min, x_max=g.x_max)
    prov.update({k: v for k, v in rho.info.items() if k in ("T", "dt", "steps", "converged")})
    flags = [] if rho.info.get("converged", True) else [NOT_CONVERGED]
    return EquilibriumEstimate(moments, "fpe", prov, truncation=trunc, flags=flags)


def mu2_scale_guess(system: ItoSystem, T: float = 100.0) -> float:
    """Rough equilibrium mu2 used to size grids.

    Gaussian closure when it applies and is feasible; otherwise a pilot
    evolution on the system's default analysis domain.
    """
    from .relations import ClosureInfeasible, derive_relation, gaussian_closure_mu2

    try:
        m2 = gaussian_closure_mu2(derive_relation(system, 1))
        if m2 > 0:
            return m2
    except (ClosureInfeasible, ValueError):
        pass
    hw = system.domain_halfwidth
    rho, _ = fpe_evolve(system, Grid(-hw, hw, 2001), T=T)
    return density_moments(rho, (2,)).mu(2)


def fpe_equilibrium(system: ItoSystem, width_stds: float = 20.0, T: float = 100.0,
                    n_per_std: int = 50, dt: float | None = None,
                    mu2_guess: float | None = None, conv_eps: float = 1e-6,
                    orders: Sequence[int] = (2, 4, 6), init="gaussian") -> EquilibriumEstimate:
    """Grid sized in equilibrium standard deviations, evolved, and integrated."""
    if mu2_guess is None:
        mu2_guess = mu2_scale_guess(system, T)
    n = max(MIN_POINTS, int(round(width_stds * n_per_std)) + 1)
    grid = build_grid(system, width_stds, n, mu2_guess)
    rho, _ = fpe_evolve(system, grid, dt, T, conv_eps, init=init)
    est = density_moments(rho, orders)
    est.provenance.update(W=width_stds, mu2_guess=mu2_guess)
    return est


class WidthRow(NamedTuple):
    W: float
    mu2: float
    mu4: float
    truncation: float
    converged: bool
    error: str | None = None


def width_sweep(system: ItoSystem, widths: Sequence[float], n_per_std: int = 50,
                dt: float | None = None, T: float = 100.0,
                mu2_guess: float | None = None, conv_eps: float = 1e-6) -> list[WidthRow]:
    """Re-solve the equilibrium on successively wider domains.

    A finite fourth moment shows up as mu4 settling as W grows; a divergent
    one keeps climbing.  Solver failures are recorded per row and the sweep
    carries on.
    """
    widths = list(widths)
    if any(b <= a for a, b in zip(widths, widths[1:])):
        raise ValueError("widths must be strictly increasing")
    if mu2_guess is None:
        mu2_guess = mu2_scale_guess(system, T)
    rows = []
    for W in widths:
        try:
            est = fpe_equilibrium(system, W, T, n_per_std, dt, mu2_guess, conv_eps, (2, 4))
        except FpeInstabilityError as exc:
            rows.append(WidthRow(W, math.nan, math.nan, math.nan, False, str(exc)))
            continue
        rows.append(WidthRow(W, est.mu(2), est.mu(4), est.truncation[4],
                             bool(est.provenance.get("converged"))))
    return rows
