"""Desk-scale fitness backends: a native cart-pole and synthetic benchmarks.

Two families sit behind one evaluator contract (a callable charging a step
budget and returning a scalar to maximize): episodic control environments
executed with the greedy policy, and synthetic high-dimensional functions
whose value depends only on a low-dimensional effective subspace.
"""

from __future__ import annotations

import functools
import math
import threading

import numpy as np

from .errors import BudgetExhaustedError, EnvProtocolError, InputError
from .policy import PolicyVector, forward
from .seeding import STREAM_EPISODES, STREAM_TEST, stream_rng


class FitnessBudget:
    """Shared counter of environment interactions (or benchmark calls)."""

    def __init__(self, max_steps: int):
        self.max_steps = int(max_steps)
        self.steps_used = 0
        self.n_evaluations = 0
        self._lock = threading.Lock()

    @property
    def exhausted(self) -> bool:
        return self.steps_used >= self.max_steps

    @property
    def overshoot(self) -> int:
        return max(0, self.steps_used - self.max_steps)

    def charge(self, steps: int, evaluations: int = 0) -> None:
        with self._lock:
            self.steps_used += int(steps)
            self.n_evaluations += evaluations


class CartPole:
    """Classic cart-pole balancing with Euler dynamics.

    Constants: gravity 9.8, cart mass 1.0, pole mass 0.1, pole half-length
    0.5, force magnitude 10, timestep 0.02.  Reward is 1.0 per step; an
    episode ends when |x| > 2.4, |theta| > 12 degrees, or after 500 steps.
    Initial state components are uniform in [-0.05, 0.05] from the episode
    seed; dynamics themselves are deterministic.
    """

    GRAVITY = 9.8
    CART_MASS = 1.0
    POLE_MASS = 0.1
    HALF_LENGTH = 0.5
    FORCE_MAG = 10.0
    DT = 0.02
    X_LIMIT = 2.4
    THETA_LIMIT = 12.0 * math.pi / 180.0

    observation_shape = (4,)
    action_count = 2
    max_episode_steps = 500

    def __init__(self):
        self.state: np.ndarray | None = None
        self._terminal = True
        self._steps = 0

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        self.state = rng.uniform(-0.05, 0.05, size=4)
        self._terminal = False
        self._steps = 0
        return self.state.copy()

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        if self.state is None or self._terminal:
            raise EnvProtocolError("step() called on a terminal or unreset environment")
        if action not in (0, 1):
            raise InputError(f"cart-pole action must be 0 or 1, got {action}")
        x, x_dot, theta, theta_dot = self.state
        force = self.FORCE_MAG if action == 1 else -self.FORCE_MAG
        total_mass = self.CART_MASS + self.POLE_MASS
        pml = self.POLE_MASS * self.HALF_LENGTH
        sin_t, cos_t = math.sin(theta), math.cos(theta)
        temp = (force + pml * theta_dot * theta_dot * sin_t) / total_mass
        theta_acc = (self.GRAVITY * sin_t - cos_t * temp) / (
            self.HALF_LENGTH * (4.0 / 3.0 - self.POLE_MASS * cos_t * cos_t / total_mass)
        )
        x_acc = temp - pml * theta_acc * cos_t / total_mass
        x += self.DT * x_dot
        x_dot += self.DT * x_acc
        theta += self.DT * theta_dot
        theta_dot += self.DT * theta_acc
        self.state = np.array([x, x_dot, theta, theta_dot])
        self._steps += 1
        self._terminal = (
            abs(x) > self.X_LIMIT
            or abs(theta) > self.THETA_LIMIT
            or self._steps >= self.max_episode_steps
        )
        return self.state.copy(), 1.0, self._terminal


ENV_FACTORIES = {"cartpole": CartPole}


def run_episode(policy: PolicyVector, env, seed: int) -> tuple[float, int]:
    """One greedy episode; returns (return, steps taken)."""
    obs = env.reset(seed)
    total = 0.0
    steps = 0
    terminal = False
    while not terminal:
        obs, reward, terminal = env.step(forward(policy, obs))
        total += reward
        steps += 1
    return total, steps


def evaluate_episodes(policy: PolicyVector, env, episodes: int,
                      budget: FitnessBudget, rng: np.random.Generator,
                      strict: bool = True) -> list[float]:
    """Run full episodes with seeds drawn from ``rng``; returns per-episode returns.

    Charges every environment step to ``budget``.  With ``strict`` the call
    refuses to start on an exhausted budget; the search engine relaxes this
    inside a generation so that a generation always completes (overshoot is
    bounded and logged by the budget itself).
    """
    if strict and budget.exhausted:
        raise BudgetExhaustedError(
            f"budget exhausted ({budget.steps_used}/{budget.max_steps} steps)"
        )
    returns = []
    for _ in range(episodes):
        ep_return, steps = run_episode(policy, env, int(rng.integers(2 ** 63)))
        budget.charge(steps)
        returns.append(ep_return)
    budget.charge(0, evaluations=1)
    return returns


def evaluate(policy: PolicyVector, env, episodes: int,
             budget: FitnessBudget, rng: np.random.Generator) -> float:
    """Mean episodic return of the greedy policy over ``episodes`` episodes."""
    returns = evaluate_episodes(policy, env, episodes, budget, rng)
    return float(np.mean(returns))


class EffectiveSphere:
    """Squared norm of the projection onto a hidden rotated subspace.

    f(x) = || B x ||^2 where the rows of B form a seeded orthonormal basis
    of a random ``effective_dim``-dimensional subspace of R^D.  Coordinates
    orthogonal to that subspace do not affect the value at all, which is
    exactly the low-effective-dimension regime the embedding stage assumes.
    """

    def __init__(self, dim: int, effective_dim: int, rotation_seed: int = 0):
        if dim < effective_dim:
            raise InputError(f"need dim >= effective_dim, got {dim} < {effective_dim}")
        self.dim = dim
        self.effective_dim = effective_dim
        self.rotation_seed = rotation_seed
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(rotation_seed)))
        g = rng.standard_normal((dim, effective_dim))
        q, r = np.linalg.qr(g)
        q *= np.sign(np.diag(r))  # fix QR sign ambiguity for portability
        self.basis = q.T  # (effective_dim, dim), orthonormal rows

    def __call__(self, x: np.ndarray) -> float:
        z = self.basis @ np.asarray(x, dtype=np.float64)
        return float(z @ z)


@functools.lru_cache(maxsize=16)
def _sphere_instance(dim: int, effective_dim: int, rotation_seed: int) -> EffectiveSphere:
    return EffectiveSphere(dim, effective_dim, rotation_seed)


def effective_sphere(x: np.ndarray, effective_dim: int, rotation_seed: int = 0) -> float:
    """Functional form of :class:`EffectiveSphere`; basis cached per shape."""
    x = np.asarray(x, dtype=np.float64)
    return _sphere_instance(len(x), effective_dim, rotation_seed)(x)


class BenchmarkEvaluator:
    """Evaluator over a synthetic function: fitness = -f(x), 1 step per call."""

    def __init__(self, fn, budget: FitnessBudget, negate: bool = True):
        self.fn = fn
        self.budget = budget
        self.negate = negate
        self.calls = 0

    def __call__(self, x: np.ndarray, generation: int = 0, process_id: int = 0,
                 strict: bool = True) -> float:
        if strict and self.budget.exhausted:
            raise BudgetExhaustedError(
                f"budget exhausted ({self.budget.steps_used}/{self.budget.max_steps} steps)"
            )
        self.calls += 1
        self.budget.charge(1, evaluations=1)
        value = self.fn(x)
        return -value if self.negate else value

    def test_score(self, x: np.ndarray, episodes: int) -> tuple[float, list[float]]:
        """Deterministic functions need no repeats; returns the plain fitness."""
        value = self.fn(x)
        fitness = -value if self.negate else value
        return fitness, [fitness]


class EpisodicEvaluator:
    """Evaluator over an episodic environment: fitness = mean episodic return.

    Episode seeds come from the (STREAM_EPISODES, generation, process_id)
    stream, so fitness is a pure function of (master seed, generation,
    process id, weights) independent of call order.
    """

    def __init__(self, env_factory, spec, budget: FitnessBudget,
                 master_seed: int, episodes: int = 1):
        self.env_factory = env_factory
        self.spec = spec
        self.budget = budget
        self.master_seed = master_seed
        self.episodes = episodes
        self.calls = 0

    def __call__(self, x: np.ndarray, generation: int = 0, process_id: int = 0,
                 strict: bool = True) -> float:
        self.calls += 1
        policy = PolicyVector(x, self.spec)
        rng = stream_rng(self.master_seed, STREAM_EPISODES, generation, process_id)
        returns = evaluate_episodes(policy, self.env_factory(), self.episodes,
                                    self.budget, rng, strict=strict)
        return float(np.mean(returns))

    def test_score(self, x: np.ndarray, episodes: int) -> tuple[float, list[float]]:
        """Post-run scoring over independent test episodes; not budgeted."""
        policy = PolicyVector(x, self.spec)
        scratch = FitnessBudget(max_steps=2 ** 62)
        returns = []
        for ep in range(episodes):
            rng = stream_rng(self.master_seed, STREAM_TEST, ep)
            returns.extend(evaluate_episodes(policy, self.env_factory(), 1, scratch, rng))
        return float(np.mean(returns)), returns
