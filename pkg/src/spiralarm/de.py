"""Differential evolution (DE/rand/1/bin) with deterministic seeding.

Candidate generation is sequential and seeded, so results are reproducible
bit for bit; objective evaluations within a generation may run on threads
(selection is generation-synchronous, so evaluation order cannot affect
the outcome).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class DEConfig:
    population: int | None = None   # None -> 10 * dim
    F: float = 0.6                  # mutation factor
    CR: float = 0.9                 # crossover rate
    max_gens: int = 150
    seed: int = 0
    parallel_evals: int = 1

    def validate(self):
        if not (0.0 < self.F <= 2.0):
            raise ValueError(f"F must be in (0, 2], got {self.F}")
        if not (0.0 <= self.CR <= 1.0):
            raise ValueError(f"CR must be in [0, 1], got {self.CR}")
        if self.population is not None and self.population < 4:
            raise ValueError(f"population must be >= 4, got {self.population}")
        if self.max_gens < 1:
            raise ValueError("max_gens must be >= 1")
        return self


@dataclass
class DEResult:
    x: np.ndarray
    fun: float
    trace: np.ndarray        # best loss after init and after each generation
    n_evals: int
    n_nonfinite: int


def de_minimize(objective, bounds, cfg: DEConfig, x0=None) -> DEResult:
    """Minimize objective over a box with DE/rand/1/bin.

    ``bounds`` is a (dim, 2) array of [lo, hi]; optional ``x0`` rows seed
    the initial population (clipped to bounds).  Non-finite objective
    values are treated as +inf and counted.
    """
    cfg.validate()
    bounds = np.asarray(bounds, dtype=float)
    if bounds.ndim != 2 or bounds.shape[1] != 2:
        raise ValueError(f"bounds must be (dim, 2), got {bounds.shape}")
    if np.any(~np.isfinite(bounds)) or np.any(bounds[:, 0] >= bounds[:, 1]):
        raise ValueError("bounds must be finite with lo < hi")
    dim = bounds.shape[0]
    lo, hi = bounds[:, 0], bounds[:, 1]

    npop = cfg.population if cfg.population is not None else max(10 * dim, 4)
    rng = np.random.default_rng(cfg.seed)

    pop = lo + rng.uniform(size=(npop, dim)) * (hi - lo)
    if x0 is not None:
        x0 = np.atleast_2d(np.asarray(x0, dtype=float))
        if x0.shape[1] != dim:
            raise ValueError(
                f"x0 dimension {x0.shape[1]} does not match bounds {dim}"
            )
        k = min(len(x0), npop)
        pop[:k] = np.clip(x0[:k], lo, hi)

    state = {"nonfinite": 0}

    def safe(x):
        v = objective(x)
        v = float(v)
        if not np.isfinite(v):
            state["nonfinite"] += 1
            return np.inf
        return v

    def eval_batch(xs):
        if cfg.parallel_evals > 1:
            with ThreadPoolExecutor(max_workers=cfg.parallel_evals) as ex:
                return list(ex.map(safe, xs))
        return [safe(x) for x in xs]

    fit = np.array(eval_batch(list(pop)))
    n_evals = npop
    trace = [float(np.min(fit))]

    for _ in range(cfg.max_gens):
        trials = np.empty_like(pop)
        for i in range(npop):
            idx = rng.choice(npop - 1, size=3, replace=False)
            idx[idx >= i] += 1
            a, b, c = pop[idx[0]], pop[idx[1]], pop[idx[2]]
            v = np.clip(a + cfg.F * (b - c), lo, hi)
            cross = rng.uniform(size=dim) < cfg.CR
            cross[rng.integers(dim)] = True    # at least one mutated gene
            trials[i] = np.where(cross, v, pop[i])
        tfit = np.array(eval_batch(list(trials)))
        n_evals += npop
        better = tfit <= fit
        pop[better] = trials[better]
        fit[better] = tfit[better]
        trace.append(float(np.min(fit)))

    best = int(np.argmin(fit))
    return DEResult(
        x=pop[best].copy(),
        fun=float(fit[best]),
        trace=np.array(trace),
        n_evals=n_evals,
        n_nonfinite=state["nonfinite"],
    )
