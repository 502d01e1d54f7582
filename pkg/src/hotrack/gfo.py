"""Gradient-free random optimizer driven by a fixed bank of Gaussian particles.

A bank of ``M x d`` standard-normal samples is drawn once. Each iteration
rescales it by a per-dimension search step around the current estimate,
scores every candidate, and moves to the weighted mean of the elite
candidates (or the best candidate when the mean is worse). The step grows
when the best candidate improves on both the incumbent and the mean, and
shrinks otherwise.
"""

from __future__ import annotations

import csv
import functools
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteEnergy

log = logging.getLogger(__name__)


@dataclass
class OptConfig:
    particles: int = 1024
    iterations: int = 24
    initial_step: float | np.ndarray = 1.0
    grow: float = 1.2
    shrink: float = 0.6
    elite_fraction: float = 0.1
    tolerance: float = 1e-3  # relative to the initial step
    step_min_ratio: float = 1e-6
    step_max_ratio: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.particles < 8:
            raise ValueError("need at least 8 particles")
        if not 0 < self.elite_fraction <= 0.5:
            raise ValueError("elite_fraction must be in (0, 0.5]")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if np.any(np.asarray(self.initial_step) <= 0):
            raise ValueError("initial_step must be strictly positive")

    def replace(self, **changes):
        d = dict(self.__dict__)
        d.update(changes)
        return OptConfig(**d)


@dataclass
class OptProblem:
    """``energy`` maps a d-vector to a float; ``batch_energy`` (optional)
    maps an ``(M, d)`` array to ``M`` floats and is preferred when given."""

    energy: callable
    x0: np.ndarray
    batch_energy: callable | None = None

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float).reshape(-1)

    @property
    def dimension(self):
        return self.x0.shape[0]


@dataclass
class OptResult:
    x: np.ndarray
    energy: float
    trace: list = field(default_factory=list)
    evaluations: int = 0
    initial_energy: float = float("nan")

    def trace_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "best_energy"])
            for i, e in enumerate(self.trace):
                w.writerow([i, repr(float(e))])


@functools.lru_cache(maxsize=64)
def particle_bank(m, d, seed):
    """The pre-sampled ``N(0, 1)`` particles for ``(M, d, seed)``; read-only."""
    bank = np.random.default_rng(seed).standard_normal((m, d))
    bank.flags.writeable = False
    return bank


def evaluate_batch(energy, candidates, batched=False):
    """Score candidate rows in order; non-finite energies become ``+inf``."""
    candidates = np.asarray(candidates, dtype=float)
    if batched:
        values = np.asarray(energy(candidates), dtype=float).reshape(-1)
    else:
        values = np.array([energy(c) for c in candidates], dtype=float)
    values[~np.isfinite(values)] = np.inf
    return values


def _elite_weights(elite_energies):
    lo, hi = elite_energies[0], elite_energies[-1]
    span = hi - lo
    if not np.isfinite(span) or span <= 0:
        return np.full(len(elite_energies), 1.0 / len(elite_energies))
    w = (hi - elite_energies) / span
    return w / w.sum()


class ParticleOptimizer:
    """Reusable optimizer holding its particle bank."""

    def __init__(self, config=None, dimension=None):
        self.config = config or OptConfig()
        self.dimension = dimension

    def particles(self, d):
        return particle_bank(self.config.particles, d, self.config.seed)

    def optimize(self, problem):
        cfg = self.config
        d = problem.dimension
        bank = self.particles(d)
        x = problem.x0.copy()

        def score(rows):
            if problem.batch_energy is not None:
                return evaluate_batch(problem.batch_energy, rows, batched=True)
            return evaluate_batch(problem.energy, rows)

        e = float(score(x[None, :])[0])
        if not np.isfinite(e):
            raise NonFiniteEnergy(f"energy at the initial point is {e}")
        e0 = e
        step0 = np.broadcast_to(np.asarray(cfg.initial_step, dtype=float), (d,)).copy()
        step = step0.copy()
        smin, smax = step0 * cfg.step_min_ratio, step0 * cfg.step_max_ratio
        n_elite = max(2, int(np.ceil(cfg.elite_fraction * cfg.particles)))
        trace = []
        evaluations = 1
        for _ in range(cfg.iterations):
            cand = x + bank * step
            energies = score(cand)
            evaluations += len(cand)
            order = np.argsort(energies, kind="stable")[:n_elite]
            elite_e = energies[order]
            improved = False
            if np.isfinite(elite_e[0]):
                finite = np.isfinite(elite_e)
                w = _elite_weights(elite_e[finite])
                x_mean = w @ cand[order[finite]]
                e_mean = float(score(x_mean[None, :])[0])
                evaluations += 1
                # grow only when the best particle beats both the incumbent and
                # the recombined mean; a mean better than every particle means
                # the cloud overshoots and the step shrinks
                improved = elite_e[0] < e and e_mean > elite_e[0]
                if e_mean < e and e_mean <= elite_e[0]:
                    x, e = x_mean, e_mean
                elif elite_e[0] < e:
                    x, e = cand[order[0]].copy(), float(elite_e[0])
            step = np.clip(step * (cfg.grow if improved else cfg.shrink), smin, smax)
            trace.append(e)
            if np.all(step < cfg.tolerance * step0):
                break
        return OptResult(x=x, energy=e, trace=trace, evaluations=evaluations, initial_energy=e0)


def optimize(problem, config=None):
    """Minimize ``problem`` and return an :class:`OptResult` (``energy <= energy(x0)``)."""
    return ParticleOptimizer(config).optimize(problem)
