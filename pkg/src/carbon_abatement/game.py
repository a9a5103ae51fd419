"""Producer-versus-opponent game under tax uncertainty.

The opponent picks the tax inside a band ``[tau_min, tau_max]`` and pays a
penalty ``nu1 (tau - tau_bar)^2`` for implausible choices.  Pointwise, the
running reward ``g(q, tau) = Pi(q, tau) + nu1 (tau - tau_bar)^2`` is concave in
``q`` and convex in ``tau``, and its saddle value ``G(x, y)`` replaces the
optimal profit in the Bellman-Isaacs equation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .hjb import GridSpec, HJBSolution, PolicyGrid, SolverPreconditionError, ValueGrid, backward_sweep, default_grid, lipschitz_budget
from .model import (
    ModelSpec,
    _bisect_decreasing,
    cost_components,
    instantaneous_profit,
    marginal_profit,
    optimal_output,
    output_bounds,
    rebate,
)

__all__ = [
    "UncertaintySpec",
    "SaddleField",
    "GameError",
    "tau_best_response",
    "q_best_response",
    "saddle_point",
    "saddle_field",
    "game_reward",
    "solve_isaacs",
    "write_saddle_csv",
]

# A schedule is a constant or a tuple of (t, value) knots, linear in between.
Schedule = Union[float, tuple]


class GameError(ValueError):
    """Saddle-point construction failed."""


def _eval(schedule: Schedule, t) -> np.ndarray:
    if isinstance(schedule, (int, float)):
        return np.full_like(np.asarray(t, dtype=float), float(schedule))
    ts, vs = zip(*schedule)
    return np.interp(t, ts, vs)


def _is_constant(schedule: Schedule) -> bool:
    return isinstance(schedule, (int, float)) or len({v for _, v in schedule}) == 1


@dataclass(frozen=True)
class UncertaintySpec:
    """Tax band, reference plan and penalty strength.

    Each of ``tau_min``, ``tau_max`` and ``tau_bar`` is a constant or a tuple of
    ``(t, value)`` knots interpolated linearly.
    """

    tau_min: Schedule
    tau_max: Schedule
    tau_bar: Schedule
    nu1: float

    def __post_init__(self):
        for name in ("tau_min", "tau_max", "tau_bar"):
            s = getattr(self, name)
            if not isinstance(s, (int, float)):
                knots = tuple((float(t), float(v)) for t, v in s)
                if len(knots) < 1 or any(b[0] <= a[0] for a, b in zip(knots, knots[1:])):
                    raise GameError(f"{name} knots must have increasing times")
                object.__setattr__(self, name, knots)
        if not self.nu1 > 0:
            raise GameError("nu1 must be > 0")
        ts = np.unique(np.concatenate([self._knot_times(s) for s in (self.tau_min, self.tau_max, self.tau_bar)]))
        lo, hi, bar = self.at(ts)
        if np.any(lo < 0) or np.any(lo > bar + 1e-12) or np.any(bar > hi + 1e-12):
            raise GameError("need 0 <= tau_min <= tau_bar <= tau_max")

    @staticmethod
    def _knot_times(s):
        return np.array([0.0]) if isinstance(s, (int, float)) else np.array([t for t, _ in s])

    def at(self, t=0.0):
        """``(tau_min, tau_max, tau_bar)`` at time ``t``."""
        return _eval(self.tau_min, t), _eval(self.tau_max, t), _eval(self.tau_bar, t)

    @property
    def is_static(self) -> bool:
        return all(_is_constant(s) for s in (self.tau_min, self.tau_max, self.tau_bar))

    def band_max(self, T: float) -> float:
        ts = np.concatenate([[0.0, T], self._knot_times(self.tau_max)])
        return float(np.max(_eval(self.tau_max, ts[(ts >= 0) & (ts <= T)])))


@dataclass
class SaddleField:
    """Saddle point on an ``(x, y)`` grid."""

    xs: np.ndarray
    ys: np.ndarray
    q_hat: np.ndarray
    tau_hat: np.ndarray
    G_value: np.ndarray


def tau_best_response(model: ModelSpec, q, x, y, u: UncertaintySpec, t: float = 0.0):
    """Penalised worst-case tax against output ``q``, clipped to the band."""
    lo, hi, bar = u.at(t)
    _, C1 = cost_components(model, q, x, y)
    return np.clip(bar + (C1 - rebate(model, q)) / (2.0 * u.nu1), lo, hi)


def q_best_response(model: ModelSpec, tau, x, y):
    """Profit-maximising output on ``[q_min, q_max]`` for a given tax."""
    return optimal_output(model, x, y, tau)[0]


def game_reward(model: ModelSpec, q, tau, x, y, u: UncertaintySpec, t: float = 0.0):
    """``g(q, tau; x, y) = Pi(q, x, y, tau) + nu1 (tau - tau_bar)^2``."""
    bar = u.at(t)[2]
    return instantaneous_profit(model, q, x, y, tau) + u.nu1 * (np.asarray(tau) - bar) ** 2


def _phi(model, q, x, y, u, t):
    return marginal_profit(model, q, x, y, tau_best_response(model, q, x, y, u, t))


def saddle_point(model: ModelSpec, x, y, u: UncertaintySpec, t: float = 0.0, n_check: int = 64):
    """Saddle point ``(q_hat, tau_hat, G)`` at each ``(x, y)`` (vectorised).

    ``phi(q)``, the marginal profit against the opponent's best response, is
    checked on ``n_check`` points to change sign at most once (from positive to
    negative); the root is then found by bisection.

    Raises
    ------
    GameError
        If ``phi`` turns positive again after being negative somewhere.
    """
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    q_min, q_max = output_bounds(model)
    if n_check > 1 and q_max > q_min:
        qs = np.linspace(q_min, q_max, n_check).reshape((-1,) + (1,) * x.ndim)
        ph = _phi(model, qs, x[None], y[None], u, t)
        seen_neg = np.maximum.accumulate(ph < 0, axis=0)
        bad = seen_neg & (ph > 1e-9)
        if np.any(bad):
            idx = np.argwhere(bad)[0]
            raise GameError(
                f"phi is not single-crossing at x={x[tuple(idx[1:])]}, y={y[tuple(idx[1:])]}: the rebate "
                "breaks the concavity needed for a unique saddle point"
            )
    lo = np.full(x.shape, q_min)
    hi = np.full(x.shape, q_max)
    f_lo = _phi(model, lo, x, y, u, t)
    f_hi = _phi(model, hi, x, y, u, t)
    root = _bisect_decreasing(lambda q: _phi(model, q, x, y, u, t), lo, hi)
    q_hat = np.where(f_lo <= 0, lo, np.where(f_hi >= 0, hi, root))
    tau_hat = tau_best_response(model, q_hat, x, y, u, t)
    return q_hat, tau_hat, game_reward(model, q_hat, tau_hat, x, y, u, t)


def saddle_field(model: ModelSpec, xs, ys, u: UncertaintySpec, t: float = 0.0) -> SaddleField:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    q, tau, G = saddle_point(model, X, Y, u, t)
    return SaddleField(xs, ys, q, tau, G)


def solve_isaacs(model: ModelSpec, u: UncertaintySpec, grid: GridSpec | None = None, gamma_bar: float | None = None) -> HJBSolution:
    """Solve the Bellman-Isaacs equation with running reward ``G(x, y)``.

    The returned policy carries the producer's investment and output and the
    opponent's equilibrium tax.
    """
    e = model.econ
    if e.sigma <= 0:
        raise SolverPreconditionError("sigma = 0 is not supported (degenerate diffusion)")
    grid = grid or default_grid(model, game=True)
    budget = lipschitz_budget(model, u.band_max(e.T), grid.x_min)
    if gamma_bar is not None:
        budget = type(budget)(budget.L_pi, budget.L_h, budget.L_V, float(gamma_bar))
    xs, ys = grid.xs, grid.ys

    def reward(t):
        sf = saddle_field(model, xs, ys, u, t)
        return sf.G_value[..., None], sf.q_hat[..., None], sf.tau_hat[..., None]

    times, values, gammas, qs, taus = backward_sweep(
        model=model,
        grid=grid,
        reward=reward,
        static_reward=u.is_static,
        coupling=np.zeros((1, 1)),
        gamma_bar=budget.gamma_bar,
    )
    vg = ValueGrid(values, times, xs, ys, grid, model.hash(), np.array([float(u.at(0.0)[2])]))
    return HJBSolution(vg, PolicyGrid(gammas, qs, budget.gamma_bar, taus), budget)


def write_saddle_csv(path, sf: SaddleField) -> Path:
    """CSV with columns ``x,y,q_hat,tau_hat,G``."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "q_hat", "tau_hat", "G"])
        for i, x in enumerate(sf.xs):
            for j, y in enumerate(sf.ys):
                w.writerow([repr(float(x)), repr(float(y))] + [repr(float(a[i, j])) for a in (sf.q_hat, sf.tau_hat, sf.G_value)])
    return path
