"""Two-point bandit feedback and zeroth-order estimators.

The learner never sees problem parameters, only function values at its
consensus point x and at the probe x + delta * u. The estimators turn those
two values into a gradient estimate (losses) or a rank-1 Jacobian estimate
(constraints). The RNG contract lives here too: every random draw in a run
comes from a stream derived by a counter-based split of the master seed on
(agent, round, purpose), so results never depend on evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Purpose tags for stream derivation. Values are stable identifiers; changing
# them changes every sampled trajectory.
PURPOSE_DIRECTION = 0
PURPOSE_PROBLEM = 1
PURPOSE_EDGES = 2
PURPOSE_INIT = 3


class StreamFactory:
    """Derives independent numpy Generators from (master seed, integer key)."""

    def __init__(self, master_seed: int):
        if master_seed < 0:
            raise ValueError("master seed must be nonnegative")
        self.master_seed = int(master_seed)

    def stream(self, *key: int) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.master_seed, spawn_key=tuple(int(k) for k in key))
        return np.random.Generator(np.random.PCG64(seq))

    def agent_round(self, agent: int, t: int, purpose: int) -> np.random.Generator:
        return self.stream(agent, t, purpose)


@dataclass(frozen=True)
class TwoPointSample:
    """Probe direction u on the unit sphere and probe radius delta > 0."""

    direction: np.ndarray
    radius: float

    def __post_init__(self):
        u = np.asarray(self.direction, dtype=np.float64)
        if abs(float(np.linalg.norm(u)) - 1.0) > 1e-12:
            raise ValueError("direction must have unit norm")
        object.__setattr__(self, "direction", u)
        if not self.radius > 0:
            raise ValueError("radius must be positive")


@dataclass(frozen=True)
class FeedbackValues:
    """Loss and constraint values observed at x and at the probe x + delta*u."""

    f_at_x: float
    f_at_probe: float
    g_at_x: np.ndarray
    g_at_probe: np.ndarray

    def __post_init__(self):
        gx = np.asarray(self.g_at_x, dtype=np.float64)
        gp = np.asarray(self.g_at_probe, dtype=np.float64)
        if gx.shape != gp.shape:
            raise ValueError("constraint value vectors must have equal length")
        vals = [self.f_at_x, self.f_at_probe]
        if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(gx)) and np.all(np.isfinite(gp))):
            raise ValueError("feedback values must be finite")
        object.__setattr__(self, "g_at_x", gx)
        object.__setattr__(self, "g_at_probe", gp)


@dataclass(frozen=True)
class ProblemBounds:
    """Uniform loss bound F and Lipschitz bounds G1 (loss), G2 (constraints)."""

    F: float
    G1: float
    G2: float

    def __post_init__(self):
        if not (self.F > 0 and self.G1 > 0 and self.G2 > 0):
            raise ValueError("bounds must be positive")


def sample_unit_sphere(rng: np.random.Generator, p: int) -> np.ndarray:
    """Uniform draw from the unit sphere in R^p via Gaussian normalization."""
    if p < 1:
        raise ValueError("p must be >= 1")
    while True:
        g = rng.standard_normal(p)
        norm = float(np.linalg.norm(g))
        if norm > 0.0:  # the all-zeros draw has measure zero, resample
            return g / norm


def sample_unit_ball(rng: np.random.Generator, p: int) -> np.ndarray:
    """Uniform draw from the unit ball: sphere draw scaled by U^(1/p)."""
    u = sample_unit_sphere(rng, p)
    return u * rng.uniform() ** (1.0 / p)


def estimate_loss_grad(fb: FeedbackValues, sample: TwoPointSample, p: int) -> np.ndarray:
    """Two-point gradient estimate (p/delta) * (f(x + delta u) - f(x)) * u."""
    if sample.radius <= 0:
        raise ValueError("probe radius must be positive")
    scale = (p / sample.radius) * (fb.f_at_probe - fb.f_at_x)
    return scale * sample.direction


def estimate_constraint_jacobian(fb: FeedbackValues, sample: TwoPointSample, p: int) -> np.ndarray:
    """Rank-1 Jacobian estimate outer(u, d) with d = (p/delta) * (g(probe) - g(x)).

    Column k equals the loss-gradient estimator applied to constraint
    component k, so the result has shape (p, m).
    """
    if sample.radius <= 0:
        raise ValueError("probe radius must be positive")
    d = (p / sample.radius) * (fb.g_at_probe - fb.g_at_x)
    return np.outer(sample.direction, d)


def smoothed_value_mc(f, x, delta: float, n_samples: int, rng: np.random.Generator) -> float:
    """Monte Carlo average of f over the delta-ball around x.

    With delta = 0 the ball degenerates to {x} and the exact value f(x) is
    returned without consuming randomness.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    if delta == 0.0:
        return float(f(x))
    p = x.size
    total = 0.0
    for _ in range(n_samples):
        total += float(f(x + delta * sample_unit_ball(rng, p)))
    return total / n_samples
