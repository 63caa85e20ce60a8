"""Euler-Maruyama ensemble simulation of an Itô system.

Each trajectory owns a PCG64 stream keyed by (seed, trajectory index), so the
result does not depend on how trajectories are split across workers.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict

import numba
import numpy as np

from .estimates import HEAVY_TAILS, EquilibriumEstimate
from .systems import ItoSystem

__all__ = ["SimConfig", "em_step", "run_ensemble", "N_BATCHES", "MAX_POWER"]

N_BATCHES = 32
MAX_POWER = 6
# samples are drawn in chunks to bound memory for long runs
_CHUNK = 1 << 16


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    total_time: float = 200.0
    burn_in: float | None = None
    ensemble_n: int = 10_000
    seed: int = 0
    x0: float = 0.0
    clip_halfwidth: float | None = None

    def __post_init__(self):
        if self.burn_in is None:
            object.__setattr__(self, "burn_in", 0.2 * self.total_time)
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.total_time > self.burn_in >= 0:
            raise ValueError("need total_time > burn_in >= 0")
        if self.ensemble_n < 1:
            raise ValueError("ensemble_n must be >= 1")
        if self.clip_halfwidth is not None and not self.clip_halfwidth > 0:
            raise ValueError("clip_halfwidth must be positive")

    @property
    def n_burn(self) -> int:
        return int(round(self.burn_in / self.dt))

    @property
    def batch_len(self) -> int:
        n_keep = int(round(self.total_time / self.dt)) - self.n_burn
        return n_keep // N_BATCHES

    def validate_steps(self) -> None:
        if self.batch_len < 1:
            raise ValueError(
                f"post burn-in run has fewer than {N_BATCHES} steps; increase total_time")


def em_step(system: ItoSystem, x: float, dt: float, eta: float) -> float:
    """x + F(x) dt + G(x) eta sqrt(dt)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    g2 = system.noise_sq.eval(float(x))
    if g2 < 0:
        raise ValueError(f"squared noise negative at x={x}")
    return x + system.drift.eval(float(x)) * dt + math.sqrt(g2) * eta * math.sqrt(dt)


@numba.njit(cache=True, nogil=True)
def _horner(c, x):
    acc = 0.0
    for i in range(c.shape[0] - 1, -1, -1):
        acc = acc * x + c[i]
    return acc


@numba.njit(cache=True, nogil=True)
def _advance(x, f, g2, dt, sqdt, eta, clip, start, n_burn, batch_len, sums, state):
    # state: [exceedances, diverged flag, step of divergence]
    n_batches = sums.shape[0]
    for s in range(eta.shape[0]):
        step = start + s
        g = _horner(g2, x)
        if g < 0.0:
            g = 0.0
        x = x + _horner(f, x) * dt + math.sqrt(g) * sqdt * eta[s]
        if not math.isfinite(x):
            state[1] = 1
            state[2] = step
            return x
        if clip > 0.0 and abs(x) > clip:
            state[0] += 1
            x = clip if x > 0 else -clip
        if step >= n_burn:
            b = (step - n_burn) // batch_len
            if b < n_batches:
                p = 1.0
                for k in range(sums.shape[1]):
                    p *= x
                    sums[b, k] += p
    return x


def _run_trajectory(i: int, system_arrays, cfg: SimConfig):
    f, g2 = system_arrays
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed, spawn_key=(i,))))
    n_total = cfg.n_burn + cfg.batch_len * N_BATCHES
    sums = np.zeros((N_BATCHES, MAX_POWER))
    state = np.zeros(3, dtype=np.int64)
    clip = -1.0 if cfg.clip_halfwidth is None else float(cfg.clip_halfwidth)
    x = float(cfg.x0)
    sqdt = math.sqrt(cfg.dt)
    done = 0
    while done < n_total:
        m = min(_CHUNK, n_total - done)
        eta = rng.standard_normal(m)
        x = _advance(x, f, g2, cfg.dt, sqdt, eta, clip, done, cfg.n_burn,
                     cfg.batch_len, sums, state)
        done += m
        if state[1]:
            break
    lost = 0
    if state[1]:
        # every remaining post-burn-in sample of a diverged path is an exceedance
        lost = n_total - max(int(state[2]), cfg.n_burn)
    return sums / cfg.batch_len, int(state[0]) + lost, bool(state[1])


def _threads() -> int:
    env = os.environ.get("MOMENTLAB_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_ensemble(system: ItoSystem, cfg: SimConfig, threads: int | None = None) -> EquilibriumEstimate:
    """Time-and-ensemble averages of x**p, p = 1..6, after burn-in.

    The post burn-in series of each trajectory is split into 32 batches.
    Standard errors come from the spread of per-trajectory averages of those
    batch means, which stays honest when successive batches are correlated.  Diverged trajectories (non-finite
    state) are excluded from the averages and their remaining samples counted
    as exceedances; more than 1% exceedances, or a k=1 moment relation that
    no finite-moment equilibrium can satisfy, flags the estimate.
    """
    from .relations import classify_relation, derive_relation

    cfg.validate_steps()
    arrays = (system.drift.to_numpy(), system.noise_sq.to_numpy())
    threads = threads or _threads()
    idx = range(cfg.ensemble_n)
    if threads > 1 and cfg.ensemble_n > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(lambda i: _run_trajectory(i, arrays, cfg), idx))
    else:
        results = [_run_trajectory(i, arrays, cfg) for i in idx]

    kept = [r[0] for r in results if not r[2]]
    exceed = sum(r[1] for r in results)
    n_diverged = sum(r[2] for r in results)
    n_samples = cfg.ensemble_n * cfg.batch_len * N_BATCHES

    moments: dict[int, tuple[float, float]] = {}
    if kept:
        means = np.stack(kept)  # (n_kept, N_BATCHES, MAX_POWER)
        n_kept = means.shape[0]
        # Batches of one trajectory stay correlated when the relaxation time
        # is comparable to the batch length, so the error comes from the
        # spread of whole-trajectory averages; a lone trajectory falls back
        # to treating its batches as independent.
        spread = means.mean(axis=1) if n_kept > 1 else means[0]
        for p in range(1, MAX_POWER + 1):
            est = float(means[:, :, p - 1].mean())
            col = spread[:, p - 1]
            se = float(col.std(ddof=1) / math.sqrt(col.size))
            if p % 2 == 0:
                est = max(est, 0.0)
            moments[p] = (est, se)
    else:
        for p in range(1, MAX_POWER + 1):
            moments[p] = (float("nan") if p % 2 else float("inf"), float("inf"))

    flags = []
    if exceed > 0.01 * n_samples:
        flags.append(HEAVY_TAILS)
    else:
        try:
            verdict = classify_relation(derive_relation(system, 1))
        except ValueError:
            verdict = None
        if verdict is not None and verdict.contradictory:
            flags.append(HEAVY_TAILS)
    if n_diverged:
        flags.append(f"{n_diverged} trajectories diverged")

    prov = asdict(cfg)
    prov.update(n_batches=N_BATCHES, batch_len=cfg.batch_len, n_samples=n_samples,
                n_diverged=n_diverged)
    return EquilibriumEstimate(moments, "mc", prov, exceedance_count=exceed, flags=flags)
