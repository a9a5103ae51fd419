"""Finite-difference solver for the regime-switching HJB equation.

The value function solves, backward from ``v(T, x, y, k) = h(x)``,

    v_t + Pi*(x, y, tau_k) + sum_j g_kj (v_j - v_k) + L^Y v + sigma^2/2 v_xx
        + sup_{0 <= gamma <= gamma_bar} {gamma v_x - gamma - kappa gamma^2}
        - delta x v_x = r v

Each time step lags the control by one step (computed from the known slice
with a forward difference) and then solves a linear, upwinded, implicit
system, one direction at a time.  All rows of one direction go through a
single banded solve.  The inflow from other tax regimes is refreshed by a
few fixed-point passes per step, which makes the coupling effectively
implicit.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.linalg import solve_banded

from .model import (
    Filter,
    ModelSpec,
    OULogPrice,
    _emission_factor_dx,
    _dq32,
    optimal_output,
    output_bounds,
    residual_lipschitz,
    residual_value,
)
from .tax import BenchmarkSpec, Constant, LinearIncreasing, TaxChain

__all__ = [
    "GridSpec",
    "ValueGrid",
    "PolicyGrid",
    "LipschitzBudget",
    "HJBSolution",
    "SolverPreconditionError",
    "lipschitz_profit_bound",
    "lipschitz_budget",
    "control_cap",
    "hamiltonian_sup",
    "solve_hjb",
    "backward_sweep",
    "value_gradient_x",
    "default_grid",
    "interpolate",
    "write_grid_binary",
    "read_grid_binary",
    "write_grid_csv",
]


class SolverPreconditionError(ValueError):
    """The requested solve violates a precondition of the scheme."""


@dataclass(frozen=True)
class GridSpec:
    x_min: float
    x_max: float
    n_x: int = 201
    n_t: int = 600
    y_min: float | None = None
    y_max: float | None = None
    n_y: int | None = None
    theta_scheme: float = 1.0
    save_every: int = 1

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise SolverPreconditionError("grid needs x_min < x_max")
        if self.n_x < 3 or self.n_t < 1:
            raise SolverPreconditionError("grid needs n_x >= 3 and n_t >= 1")
        if not 0.0 <= self.theta_scheme <= 1.0:
            raise SolverPreconditionError("theta_scheme must lie in [0, 1]")
        if self.save_every < 1:
            raise SolverPreconditionError("save_every must be >= 1")
        if self.n_y is not None:
            if self.y_min is None or self.y_max is None or not self.y_min < self.y_max or self.n_y < 3:
                raise SolverPreconditionError("y grid needs y_min < y_max and n_y >= 3")

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_x)

    @property
    def ys(self) -> np.ndarray:
        if self.n_y is None:
            return np.zeros(1)
        return np.linspace(self.y_min, self.y_max, self.n_y)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_x - 1)

    def refined(self, factor: float = 2.0) -> "GridSpec":
        """Same domain with ``factor`` times finer steps in every direction."""
        ny = None if self.n_y is None else int(round((self.n_y - 1) * factor)) + 1
        return replace(
            self,
            n_x=int(round((self.n_x - 1) * factor)) + 1,
            n_y=ny,
            n_t=int(round(self.n_t * factor)),
            save_every=max(1, int(round(self.save_every * factor))),
        )


def default_grid(
    model: ModelSpec, n_x: int | None = None, n_y: int = 101, n_t: int | None = None, game: bool = False
) -> GridSpec:
    """Default tensor grid for the two technologies used in the experiments.

    The two-technology domain is wide and the investment noise small, so it
    gets a finer x grid: upwinding adds numerical diffusion of order
    ``|drift| * dx / 2``, which must stay small next to ``sigma^2 / 2``.
    The game (``game=True``) has a single regime and values that can sit
    close to zero, so it is refined further.
    """
    e = model.econ
    if isinstance(model.tech, Filter):
        x_min, x_max = -1.0, 2.0 * model.tech.e0 / max(model.tech.e1, 1e-12) + 6.0
        n_x = n_x or 201
    else:
        x_min, x_max = 0.0, 100.0
        n_x = n_x or (12801 if game else 1601)
    n_t = n_t or max(600, int(math.ceil(40 * e.T)))
    save_every = max(1, n_t // 150)
    if isinstance(model.price, OULogPrice):
        sd = model.price.stationary_std
        mu = model.price.mu
        return GridSpec(x_min, x_max, n_x, n_t, mu - 4 * sd, mu + 4 * sd, n_y, save_every=save_every)
    return GridSpec(x_min, x_max, n_x, n_t, save_every=save_every if n_x > 401 else 1)


@dataclass
class ValueGrid:
    """Value function on stored time levels; shape ``(n_times, n_x, n_y, n_states)``."""

    values: np.ndarray
    times: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    grid: GridSpec
    model_hash: str
    tau_levels: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def at(self, t, x, y=None, k=0):
        """Multilinear interpolation of the value at ``(t, x, y)`` in regime ``k``."""
        y = self.ys[0] if y is None else y
        return interpolate(self.values, self.times, self.xs, self.ys, t, x, y, k)


@dataclass
class PolicyGrid:
    """Feedback controls on the stored time levels of the matching ValueGrid.

    ``tau`` is only present for the game, where it holds the opponent's
    equilibrium tax.
    """

    gamma: np.ndarray
    q: np.ndarray
    gamma_bar: float
    tau: np.ndarray | None = None


@dataclass(frozen=True)
class LipschitzBudget:
    L_pi: float
    L_h: float
    L_V: float
    gamma_bar: float


class HJBSolution(NamedTuple):
    value: ValueGrid
    policy: PolicyGrid
    budget: LipschitzBudget


def lipschitz_profit_bound(model: ModelSpec, tau_max: float, x_min: float | None = None) -> float:
    """Upper bound on the x-Lipschitz constant of the optimal instantaneous profit.

    For the filter the emission factor slope is at most ``e1`` on ``x >= 0``;
    passing a negative ``x_min`` widens the bound to cover ``[x_min, 0)``.
    """
    tech = model.tech
    _, q_hi = output_bounds(model)
    if isinstance(tech, Filter):
        slope = tech.e1
        if x_min is not None and x_min < 0:
            slope = float(-_emission_factor_dx(x_min, tech))
        return tech.a * q_hi**1.5 * tau_max * slope
    return float((tech.c_b + tech.e_b * tau_max) * _dq32(tech.a_b, q_hi) * tech.p_g + tech.c_g1)


def control_cap(L_V: float, kappa: float) -> float:
    """Investment cap safely above the level where it can bind."""
    return 1.1 * max(max(L_V - 1.0, 0.0) / (2.0 * kappa), 1e-6)


def lipschitz_budget(model: ModelSpec, tau_max: float, x_min: float | None = None) -> LipschitzBudget:
    e = model.econ
    L_pi = lipschitz_profit_bound(model, tau_max, x_min)
    L_h = residual_lipschitz(model)
    rd = e.r + e.delta
    factor = e.T if rd == 0 else (1.0 - math.exp(-rd * e.T)) / rd
    L_V = L_pi * factor + L_h
    return LipschitzBudget(L_pi, L_h, L_V, control_cap(L_V, e.kappa))


def hamiltonian_sup(p, kappa: float, gamma_bar: float):
    """``sup_{0 <= g <= gamma_bar} (p g - g - kappa g^2)`` and its maximiser."""
    p = np.asarray(p, dtype=float)
    g = np.clip((p - 1.0) / (2.0 * kappa), 0.0, gamma_bar)
    return g * (p - 1.0) - kappa * g * g, g


# -- banded solves -------------------------------------------------------------


def _solve_rows(lower, diag, upper, rhs):
    """Solve independent tridiagonal systems stored row-wise, shape ``(m, n)``.

    ``lower[:, i]`` multiplies unknown ``i-1`` and ``upper[:, i]`` unknown ``i+1``;
    the first lower and last upper entry of each row are ignored.
    """
    m, n = diag.shape
    lo = lower.copy()
    up = upper.copy()
    lo[:, 0] = 0.0
    up[:, -1] = 0.0
    N = m * n
    ab = np.zeros((3, N))
    ab[0, 1:] = up.ravel()[:-1]
    ab[1] = diag.ravel()
    ab[2, :-1] = lo.ravel()[1:]
    return solve_banded((1, 1), ab, rhs.ravel(), check_finite=False).reshape(m, n)


def _apply_rows(lower, diag, upper, v):
    out = diag * v
    out[:, 1:] += lower[:, 1:] * v[:, :-1]
    out[:, :-1] += upper[:, :-1] * v[:, 1:]
    return out


def _x_coefficients(b, sigma, dx, decay):
    """Generator coefficients along x for drift ``b`` (shape ``(n_x, ...)``)."""
    diff = 0.5 * sigma**2 / dx**2
    up = np.maximum(b, 0.0) / dx + diff
    dn = np.maximum(-b, 0.0) / dx + diff
    up[0] = np.maximum(b[0], 0.0) / dx
    dn[0] = 0.0
    up[-1] = 0.0
    dn[-1] = np.maximum(-b[-1], 0.0) / dx
    return dn, -(up + dn) - decay, up


def _y_coefficients(ys, ou: OULogPrice):
    dy = ys[1] - ys[0]
    c = ou.theta * (ou.mu - ys)
    diff = 0.5 * ou.alpha_vol**2 / dy**2
    up = np.maximum(c, 0.0) / dy + diff
    dn = np.maximum(-c, 0.0) / dy + diff
    up[0], dn[0] = np.maximum(c[0], 0.0) / dy, 0.0
    up[-1], dn[-1] = 0.0, np.maximum(-c[-1], 0.0) / dy
    return dn, -(up + dn), up


def _rows(a, axis):
    """Move ``axis`` last and flatten the rest: ``(m, n)`` row layout."""
    moved = np.moveaxis(a, axis, -1)
    return moved.reshape(-1, moved.shape[-1]), moved.shape


def _unrows(a, shape, axis):
    return np.moveaxis(a.reshape(shape), -1, axis)


RewardFn = Callable[[float], tuple]


def backward_sweep(
    *,
    model: ModelSpec,
    grid: GridSpec,
    reward: RewardFn,
    static_reward: bool,
    coupling: np.ndarray,
    gamma_bar: float,
    coupling_passes: int = 3,
):
    """Generic backward sweep shared by the control and the game solver.

    Parameters
    ----------
    reward : callable
        ``reward(t) -> (running_reward, q, tau_or_None)``, arrays of shape
        ``(n_x, n_y, K)``.
    static_reward : bool
        When true ``reward`` is evaluated once.
    coupling : ndarray
        ``K x K`` generator of the regime chain (zeros for a single regime).
    coupling_passes : int
        Fixed-point passes for the regime inflow term within a time step.

    Returns
    -------
    times, values, gamma, q, tau
        Arrays on the stored time levels (``tau`` may be None).
    """
    e = model.econ
    xs, ys = grid.xs, grid.ys
    dx = grid.dx
    K = coupling.shape[0]
    n_t = grid.n_t
    dt = e.T / n_t
    theta = grid.theta_scheme
    ou = model.price if (isinstance(model.price, OULogPrice) and grid.n_y is not None) else None

    exit_rate = float(np.max(-np.diag(coupling))) if K > 1 else 0.0
    if dt * exit_rate >= 1.0:
        raise SolverPreconditionError(
            f"regime coupling needs dt * max exit rate < 1; use n_t > {math.ceil(e.T * exit_rate)}"
        )
    if theta < 1.0:
        b_max = gamma_bar + e.delta * max(abs(grid.x_min), abs(grid.x_max))
        rate = e.sigma**2 / dx**2 + b_max / dx + e.r + exit_rate
        if ou is not None:
            dy = ys[1] - ys[0]
            c_max = ou.theta * max(abs(ou.mu - ys[0]), abs(ou.mu - ys[-1]))
            rate = max(rate, ou.alpha_vol**2 / dy**2 + c_max / dy)
        if (1.0 - theta) * dt * rate > 1.0:
            need = math.ceil((1.0 - theta) * e.T * rate)
            raise SolverPreconditionError(
                f"explicit part of the theta-scheme is not monotone (CFL); use n_t >= {need} or theta_scheme=1"
            )

    decay = e.r - np.diag(coupling)  # shape (K,)
    off = coupling - np.diag(np.diag(coupling))
    shape = (grid.n_x, len(ys), K)
    x3 = xs[:, None, None]

    v = np.broadcast_to(residual_value(model, xs)[:, None, None], shape).copy()

    stored = sorted(set(range(0, n_t + 1, grid.save_every)) | {n_t})
    slot = {n: i for i, n in enumerate(stored)}
    n_s = len(stored)
    values = np.empty((n_s,) + shape)
    gammas = np.empty((n_s,) + shape)
    qs = np.empty((n_s,) + shape) if not static_reward else None
    taus = None
    values[-1] = v

    cache = reward(0.0) if static_reward else None
    if cache is not None and cache[2] is not None:
        taus = np.broadcast_to(cache[2], (n_s,) + shape)

    y_coef = _y_coefficients(ys, ou) if ou is not None else None

    for n in range(n_t - 1, -1, -1):
        t = n * dt
        run, q_field, tau_field = cache if static_reward else reward(t)

        grad = np.empty(shape)
        grad[:-1] = (v[1:] - v[:-1]) / dx
        grad[-1] = grad[-2]
        g = np.clip((grad - 1.0) / (2.0 * e.kappa), 0.0, gamma_bar)
        b = g - e.delta * x3

        w = v
        if y_coef is not None:
            lo, di, up = (np.broadcast_to(c[None, :, None], shape) for c in y_coef)
            lo_r, s = _rows(lo, 1)
            di_r, _ = _rows(di, 1)
            up_r, _ = _rows(up, 1)
            v_r, _ = _rows(v, 1)
            rhs = v_r + (1.0 - theta) * dt * _apply_rows(lo_r, di_r, up_r, v_r)
            w = _unrows(
                _solve_rows(-theta * dt * lo_r, 1.0 - theta * dt * di_r, -theta * dt * up_r, rhs), s, 1
            )

        lo, di, up = _x_coefficients(b, e.sigma, dx, decay[None, None, :])
        lo_r, s = _rows(lo, 0)
        di_r, _ = _rows(di, 0)
        up_r, _ = _rows(up, 0)
        w_r, _ = _rows(w, 0)
        base = w_r + (1.0 - theta) * dt * _apply_rows(lo_r, di_r, up_r, w_r)
        base += dt * _rows(run - g - e.kappa * g * g, 0)[0]
        # regime inflow from the other states, refreshed with the newest
        # estimate: each pass shrinks the lag error by dt * g / (1 + dt * (r + g))
        v_est = v
        for _ in range(coupling_passes if K > 1 else 1):
            rhs = base + dt * _rows(v_est @ off.T, 0)[0]
            v_est = _unrows(_solve_rows(-theta * dt * lo_r, 1.0 - theta * dt * di_r, -theta * dt * up_r, rhs), s, 0)
        v = v_est

        if n in slot:
            values[slot[n]] = v
            if not static_reward:
                qs[slot[n]] = q_field
                if tau_field is not None:
                    if taus is None:
                        taus = np.empty((n_s,) + shape)
                    taus[slot[n]] = tau_field

    if not static_reward:
        run, q_field, tau_field = reward(e.T)
        qs[-1] = q_field
        if tau_field is not None:
            taus[-1] = tau_field
    else:
        qs = np.broadcast_to(cache[1], (n_s,) + shape)

    grad = np.gradient(values, dx, axis=1, edge_order=1)
    gammas = np.clip((grad - 1.0) / (2.0 * e.kappa), 0.0, gamma_bar)
    times = np.array(stored, dtype=float) * dt
    return times, values, gammas, qs, taus


def _tax_levels_and_coupling(tax):
    if isinstance(tax, TaxChain):
        return tax.levels, tax.G
    return np.zeros(1), np.zeros((1, 1))


def solve_hjb(
    model: ModelSpec,
    tax: TaxChain | BenchmarkSpec,
    grid: GridSpec | None = None,
    gamma_bar: float | None = None,
) -> HJBSolution:
    """Solve the tax-risk control problem backward in time.

    ``tax`` is either a Markov chain (regime-switching PIDE) or a
    deterministic benchmark schedule (single regime, time-dependent profit).
    ``gamma_bar`` overrides the investment cap derived from the Lipschitz
    budget.

    Raises
    ------
    SolverPreconditionError
        For ``sigma = 0`` (the value function can then have a kink and fail to
        be a classical solution), or a non-monotone explicit step.
    """
    e = model.econ
    if e.sigma <= 0:
        raise SolverPreconditionError(
            "sigma = 0 is not supported: without investment noise the value function "
            "may be a strict viscosity solution with a kink (degenerate case)"
        )
    grid = grid or default_grid(model)
    if model.has_factor and grid.n_y is None:
        raise SolverPreconditionError("stochastic price needs a y grid")
    xs, ys = grid.xs, grid.ys
    levels, coupling = _tax_levels_and_coupling(tax)
    tau_max = tax.tau_max if isinstance(tax, TaxChain) else tax.tau_max(e.T)
    budget = lipschitz_budget(model, tau_max, grid.x_min)
    if gamma_bar is not None:
        budget = replace(budget, gamma_bar=float(gamma_bar))

    X, Y, TAU = np.meshgrid(xs, ys, levels, indexing="ij")

    if isinstance(tax, TaxChain):
        q_star, pi_star = optimal_output(model, X, Y, TAU)

        def reward(t):
            return pi_star, q_star, None

        static = True
    else:
        def reward(t):
            q_t, pi_t = optimal_output(model, X, Y, np.full(X.shape, float(tax.tax_at(t))))
            return pi_t, q_t, None

        static = False

    times, values, gammas, qs, _ = backward_sweep(
        model=model, grid=grid, reward=reward, static_reward=static, coupling=coupling, gamma_bar=budget.gamma_bar
    )
    vg = ValueGrid(values, times, xs, ys, grid, model.hash(), levels)
    return HJBSolution(vg, PolicyGrid(gammas, qs, budget.gamma_bar), budget)


# -- interpolation and derivatives ----------------------------------------------


def _locate(axis: np.ndarray, v):
    """Index of the left node and weight for linear interpolation (clamped)."""
    v = np.asarray(v, dtype=float)
    if len(axis) == 1:
        return np.zeros(v.shape, dtype=int), np.zeros(v.shape)
    h = (axis[-1] - axis[0]) / (len(axis) - 1)
    s = np.clip((v - axis[0]) / h, 0.0, len(axis) - 1)
    i = np.minimum(s.astype(int), len(axis) - 2)
    return i, s - i


def _locate_times(times, t):
    t = np.asarray(t, dtype=float)
    if len(times) == 1:
        return np.zeros(t.shape, dtype=int), np.zeros(t.shape)
    i = np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 2)
    w = np.clip((t - times[i]) / (times[i + 1] - times[i]), 0.0, 1.0)
    return i, w


def interpolate(field, times, xs, ys, t, x, y, k):
    """Multilinear interpolation of ``field[t, x, y, k]`` (vectorised, clamped at the edges)."""
    t, x, y, k = np.broadcast_arrays(
        np.asarray(t, dtype=float), np.asarray(x, dtype=float), np.asarray(y, dtype=float), np.asarray(k)
    )
    it, wt = _locate_times(times, t)
    ix, wx = _locate(xs, x)
    iy, wy = _locate(ys, y)
    k = k.astype(int)
    jt = np.minimum(it + 1, len(times) - 1)
    jx = np.minimum(ix + 1, len(xs) - 1)
    jy = np.minimum(iy + 1, len(ys) - 1)
    out = 0.0
    for ta, wta in ((it, 1 - wt), (jt, wt)):
        for xa, wxa in ((ix, 1 - wx), (jx, wx)):
            for ya, wya in ((iy, 1 - wy), (jy, wy)):
                out = out + wta * wxa * wya * field[ta, xa, ya, k]
    return out


def value_gradient_x(vg: ValueGrid, t, x, y=None, tau_state: int = 0):
    """``v_x`` at ``(t, x, y)``: central differences inside, one-sided at the edges.

    Raises
    ------
    ValueError
        If the point lies outside the grid.
    """
    y = vg.ys[0] if y is None else y
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr < vg.xs[0] - 1e-12) or np.any(x_arr > vg.xs[-1] + 1e-12):
        raise ValueError("x outside the solved domain")
    if len(vg.ys) > 1 and (np.any(np.asarray(y) < vg.ys[0] - 1e-12) or np.any(np.asarray(y) > vg.ys[-1] + 1e-12)):
        raise ValueError("y outside the solved domain")
    if np.any(np.asarray(t) < vg.times[0] - 1e-12) or np.any(np.asarray(t) > vg.times[-1] + 1e-12):
        raise ValueError("t outside the solved horizon")
    grad = np.gradient(vg.values, vg.xs, axis=1, edge_order=1)
    return interpolate(grad, vg.times, vg.xs, vg.ys, t, x, y, tau_state)


# -- serialisation ---------------------------------------------------------------

_MAGIC = b"CAGRID01"


def write_grid_binary(path, vg: ValueGrid, policy: PolicyGrid | None = None) -> Path:
    """Write the solved grid as a little-endian binary artifact.

    Layout: 8-byte magic, int64 ``ndim`` (4), int64 shape ``(n_t, n_x, n_y, K)``,
    int64 number of fields, float64 bounds ``(t0, T, x_min, x_max, y_min, y_max)``,
    then each field (value, gamma, q[, tau]) as row-major float64.
    """
    path = Path(path)
    fields = [vg.values]
    if policy is not None:
        fields += [np.asarray(policy.gamma), np.asarray(policy.q)]
        if policy.tau is not None:
            fields.append(np.asarray(policy.tau))
    shape = vg.values.shape
    bounds = (vg.times[0], vg.times[-1], vg.xs[0], vg.xs[-1], vg.ys[0], vg.ys[-1])
    with path.open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<q", len(shape)))
        fh.write(struct.pack("<4q", *shape))
        fh.write(struct.pack("<q", len(fields)))
        fh.write(struct.pack("<6d", *bounds))
        for f in fields:
            fh.write(np.ascontiguousarray(f, dtype="<f8").tobytes())
    return path


def read_grid_binary(path) -> dict:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError("not a grid artifact")
    off = 8
    (ndim,) = struct.unpack_from("<q", data, off)
    off += 8
    shape = struct.unpack_from(f"<{ndim}q", data, off)
    off += 8 * ndim
    (n_fields,) = struct.unpack_from("<q", data, off)
    off += 8
    bounds = struct.unpack_from("<6d", data, off)
    off += 48
    size = int(np.prod(shape))
    names = ["value", "gamma", "q", "tau"][:n_fields]
    out = {"shape": tuple(shape), "bounds": bounds}
    for name in names:
        out[name] = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape)
        off += 8 * size
    return out


def write_grid_csv(path, vg: ValueGrid, policy: PolicyGrid, time_indices: Sequence[int] | None = None) -> Path:
    """One row per node: ``t,x,y,tau_state,value,gamma,q`` (and ``tau`` for the game)."""
    path = Path(path)
    idx = range(len(vg.times)) if time_indices is None else time_indices
    has_tau = policy.tau is not None
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "y", "tau_state", "value", "gamma", "q"] + (["tau"] if has_tau else []))
        K = vg.values.shape[3]
        for n in idx:
            for i, x in enumerate(vg.xs):
                for j, y in enumerate(vg.ys):
                    for k in range(K):
                        row = [
                            repr(float(vg.times[n])),
                            repr(float(x)),
                            repr(float(y)),
                            k,
                            repr(float(vg.values[n, i, j, k])),
                            repr(float(policy.gamma[n, i, j, k])),
                            repr(float(policy.q[n, i, j, k])),
                        ]
                        if has_tau:
                            row.append(repr(float(policy.tau[n, i, j, k])))
                        w.writerow(row)
    return path
