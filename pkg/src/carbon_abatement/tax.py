"""Finite-state Markov tax process and deterministic benchmark schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.integrate import solve_ivp

__all__ = [
    "TaxChain",
    "ChainPath",
    "JumpRepresentation",
    "LinearIncreasing",
    "Constant",
    "BenchmarkSpec",
    "TaxError",
    "to_jump_representation",
    "simulate_chain",
    "simulate_jump_representation",
    "occupation_probabilities",
    "expected_tax_integral",
    "expected_tax_integral_two_state",
    "benchmark_from_chain",
    "generator_apply",
]


class TaxError(ValueError):
    """Invalid tax-process specification."""


@dataclass(frozen=True)
class TaxChain:
    """Continuous-time Markov chain on sorted tax levels.

    Parameters
    ----------
    states : tuple of float
        Strictly increasing, nonnegative tax levels.
    generator : tuple of tuple of float
        Intensity matrix; off-diagonal entries >= 0, rows sum to zero.  The
        diagonal is recomputed from the off-diagonal entries.
    initial_state : int
        Index of the state at t = 0.
    """

    states: tuple
    generator: tuple
    initial_state: int = 0

    def __post_init__(self):
        states = tuple(float(s) for s in self.states)
        G = np.array(self.generator, dtype=float)
        K = len(states)
        if K == 0:
            raise TaxError("need at least one tax state")
        if G.shape != (K, K):
            raise TaxError(f"generator must be {K}x{K}, got {G.shape}")
        if any(s < 0 for s in states) or any(b <= a for a, b in zip(states, states[1:])):
            raise TaxError("tax states must be nonnegative and strictly increasing")
        off = G - np.diag(np.diag(G))
        if np.any(off < 0):
            raise TaxError("off-diagonal intensities must be >= 0")
        if not 0 <= self.initial_state < K:
            raise TaxError("initial_state out of range")
        np.fill_diagonal(G, 0.0)
        np.fill_diagonal(G, -G.sum(axis=1))
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "generator", tuple(tuple(row) for row in G.tolist()))

    @classmethod
    def two_state(cls, tau_low, tau_high, g12, g21, start_high=False):
        return cls((tau_low, tau_high), ((-g12, g12), (g21, -g21)), int(start_high))

    @property
    def G(self) -> np.ndarray:
        return np.array(self.generator, dtype=float)

    @property
    def levels(self) -> np.ndarray:
        return np.array(self.states, dtype=float)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def tau_max(self) -> float:
        return self.states[-1]

    @property
    def max_exit_rate(self) -> float:
        return float(np.max(-np.diag(self.G)))


@dataclass(frozen=True)
class LinearIncreasing:
    """Deterministic tax ``b t``."""

    b: float

    def __post_init__(self):
        if self.b < 0:
            raise TaxError("b must be >= 0")

    def tax_at(self, t):
        return self.b * np.asarray(t, dtype=float)

    def tau_max(self, T: float) -> float:
        return self.b * T


@dataclass(frozen=True)
class Constant:
    """Deterministic constant tax."""

    tau_bar: float

    def __post_init__(self):
        if self.tau_bar < 0:
            raise TaxError("tau_bar must be >= 0")

    def tax_at(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.tau_bar)

    def tau_max(self, T: float) -> float:
        return self.tau_bar


BenchmarkSpec = Union[LinearIncreasing, Constant]


@dataclass(frozen=True)
class JumpRepresentation:
    """Pure-jump representation: one mark per ordered state pair ``(i, j)``.

    The jump size is ``tau_j - tau_i`` from state ``i`` and zero elsewhere, so
    ``tau + gamma(tau, mark)`` stays on the state set.
    """

    chain: TaxChain
    marks: tuple
    weights: tuple

    @property
    def total_intensity(self) -> float:
        return float(sum(self.weights))

    def gamma(self, tau: float, mark) -> float:
        i, j = mark
        s = self.chain.states
        return s[j] - s[i] if math.isclose(tau, s[i], rel_tol=0, abs_tol=1e-12) else 0.0


def to_jump_representation(chain: TaxChain) -> JumpRepresentation:
    G = chain.G
    marks, weights = [], []
    for i in range(chain.n_states):
        for j in range(chain.n_states):
            if i != j and G[i, j] > 0:
                marks.append((i, j))
                weights.append(float(G[i, j]))
    return JumpRepresentation(chain, tuple(marks), tuple(weights))


def generator_apply(chain: TaxChain, f) -> np.ndarray:
    """``(L f)(tau_i) = sum_j g_ij (f(tau_j) - f(tau_i))`` for ``f`` given on the states."""
    f = np.asarray(f, dtype=float)
    G = chain.G
    return G @ f - G.sum(axis=1) * f


@dataclass(frozen=True)
class ChainPath:
    """Right-continuous piecewise-constant path: ``states[k]`` holds on ``[times[k], times[k+1])``."""

    times: np.ndarray
    states: np.ndarray
    horizon: float

    def state_at(self, t):
        idx = np.searchsorted(self.times, t, side="right") - 1
        return self.states[np.clip(idx, 0, len(self.states) - 1)]

    @property
    def jump_times(self) -> np.ndarray:
        return self.times[1:]


def simulate_chain(chain: TaxChain, T: float, rng: np.random.Generator, start: int | None = None) -> ChainPath:
    """Exact simulation: exponential holding times and embedded-chain jumps."""
    G = chain.G
    k = chain.initial_state if start is None else start
    times, states = [0.0], [k]
    t = 0.0
    while True:
        rate = -G[k, k]
        if rate <= 0:
            break
        t += rng.exponential(1.0 / rate)
        if t >= T:
            break
        probs = np.clip(G[k], 0.0, None)
        probs[k] = 0.0
        k = int(rng.choice(chain.n_states, p=probs / rate))
        times.append(t)
        states.append(k)
    return ChainPath(np.array(times), np.array(states, dtype=int), T)


def simulate_jump_representation(rep: JumpRepresentation, T: float, rng: np.random.Generator) -> ChainPath:
    """Simulate via the Poisson random measure with total intensity ``M``.

    Events arrive at rate ``M`` whatever the current state; a mark is drawn in
    proportion to its weight and applied through ``gamma`` (often a zero jump).
    """
    chain = rep.chain
    k = chain.initial_state
    times, states = [0.0], [k]
    M = rep.total_intensity
    if M <= 0:
        return ChainPath(np.array(times), np.array(states, dtype=int), T)
    p = np.array(rep.weights) / M
    levels = chain.states
    t = 0.0
    while True:
        t += rng.exponential(1.0 / M)
        if t >= T:
            break
        mark = rep.marks[rng.choice(len(rep.marks), p=p)]
        jump = rep.gamma(levels[k], mark)
        if jump != 0.0:
            k = int(np.argmin(np.abs(np.array(levels) - (levels[k] + jump))))
            times.append(t)
            states.append(k)
    return ChainPath(np.array(times), np.array(states, dtype=int), T)


def _forward_rhs(G, levels):
    def rhs(_, z):
        pi = z[:-1]
        return np.concatenate([pi @ G, [pi @ levels]])

    return rhs


def occupation_probabilities(chain: TaxChain, times) -> np.ndarray:
    """State distribution ``pi(t)`` solving ``pi' = pi G`` from the initial state."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    z0 = np.zeros(chain.n_states + 1)
    z0[chain.initial_state] = 1.0
    if np.all(times == 0):
        return np.tile(z0[:-1], (len(times), 1))
    sol = solve_ivp(
        _forward_rhs(chain.G, chain.levels),
        (0.0, float(times.max())),
        z0,
        method="RK45",
        t_eval=np.sort(times),
        rtol=1e-10,
        atol=1e-13,
    )
    order = np.argsort(np.argsort(times))
    return sol.y[:-1].T[order]


def expected_tax_integral(chain: TaxChain, T: float) -> float:
    """``E[int_0^T tau_t dt]`` by integrating the forward equation (rtol 1e-10)."""
    if T <= 0:
        raise TaxError("T must be > 0")
    z0 = np.zeros(chain.n_states + 1)
    z0[chain.initial_state] = 1.0
    sol = solve_ivp(_forward_rhs(chain.G, chain.levels), (0.0, T), z0, method="RK45", rtol=1e-10, atol=1e-13)
    return float(sol.y[-1, -1])


def expected_tax_integral_two_state(chain: TaxChain, T: float) -> float:
    """Closed form of the expected tax integral for a two-state chain."""
    if chain.n_states != 2:
        raise TaxError("closed form needs exactly two states")
    (t1, t2), G = chain.states, chain.G
    a, b = G[0, 1], G[1, 0]
    s = a + b
    p0 = float(chain.initial_state == 1)
    if s == 0:
        occ = p0 * T
    else:
        occ = (a / s) * T + (p0 - a / s) * (-math.expm1(-s * T)) / s
    return t1 * T + (t2 - t1) * occ


def benchmark_from_chain(chain: TaxChain, T: float, kind: str = "linear") -> BenchmarkSpec:
    """Deterministic schedule with the same expected cumulative tax as ``chain``."""
    if T <= 0:
        raise TaxError("T must be > 0")
    integral = expected_tax_integral(chain, T)
    if kind == "linear":
        return LinearIncreasing(2.0 * integral / T**2)
    if kind == "constant":
        return Constant(integral / T)
    raise TaxError(f"unknown benchmark kind {kind!r}")
