"""Monte Carlo simulation of investment, output and emissions under a feedback policy.

Each path owns independent random streams derived from ``(seed, path index)``
so ensembles are reproducible and common random numbers are shared between
runs that differ only in the policy (for example wrong-belief experiments).

Between grid times the investment rate is frozen and ``X`` follows its drift
exactly (``dX = (gamma - delta X) dt``); the Gaussian increment of the
step is added with the exact Ornstein-Uhlenbeck variance.  Tax switches
split the step at the jump time and the policy is re-read after the switch.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .game import UncertaintySpec, game_reward
from .hjb import HJBSolution, interpolate
from .model import ModelSpec, OULogPrice, cost_components, instantaneous_profit, optimal_output, raw_material, residual_value
from .tax import BenchmarkSpec, TaxChain, simulate_chain

__all__ = [
    "SimConfig",
    "PathEnsemble",
    "StatTable",
    "SimulationError",
    "path_generator",
    "simulate_paths",
    "cross_belief_simulate",
    "statistics",
    "policy_evaluation",
    "write_ensemble_csv",
    "write_stat_csv",
]

STREAM_CHAIN, STREAM_W, STREAM_B = 0, 1, 2


class SimulationError(ValueError):
    """Inconsistent simulation request."""


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo settings.

    ``x0`` and ``y0`` are the initial investment level and log-price (``y0=None``
    uses ``ln p0`` for a stochastic price).  ``checkpoints`` are added to the
    time grid so statistics are read at exact times.
    """

    n_paths: int = 10_000
    n_steps: int = 150
    seed: int = 0
    checkpoints: tuple = (10.0, 15.0)
    x0: float = 0.0
    y0: float | None = None

    def __post_init__(self):
        if self.n_paths < 1 or self.n_steps < 1:
            raise SimulationError("n_paths and n_steps must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise SimulationError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "checkpoints", tuple(float(c) for c in self.checkpoints))


@dataclass
class PathEnsemble:
    """Simulated paths on the time grid ``times``; path arrays have shape ``(n_paths, n_times)``.

    ``tau`` holds the tax level, ``regime`` the chain state (0 without a
    chain).  ``gamma`` and ``q`` are the controls applied from each grid time
    onwards.  ``cum_emissions`` integrates ``C1`` and ``cum_intensity``
    integrates ``C1 / Q(q)``, the emission factor per unit of raw material.
    ``cum_profit`` is the discounted running objective; ``J`` adds the
    discounted residual value.
    """

    times: np.ndarray
    checkpoints: tuple
    X: np.ndarray
    Y: np.ndarray
    tau: np.ndarray
    regime: np.ndarray
    gamma: np.ndarray
    q: np.ndarray
    cum_emissions: np.ndarray
    cum_intensity: np.ndarray
    cum_profit: np.ndarray
    J: np.ndarray
    first_jump: np.ndarray
    gamma_before_jump: np.ndarray
    gamma_after_jump: np.ndarray
    n_clamped: int
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.X.shape[0]

    def time_index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if not math.isclose(self.times[i], t, abs_tol=1e-9):
            raise SimulationError(f"time {t} is not on the simulation grid")
        return i

    def metric(self, name: str) -> np.ndarray:
        arrays = {
            "emissions": self.cum_emissions,
            "intensity": self.cum_intensity,
            "investment": self.X,
            "gamma": self.gamma,
            "q": self.q,
            "profit": self.cum_profit,
        }
        if name not in arrays:
            raise SimulationError(f"unknown metric {name!r}; choose from {sorted(arrays)}")
        return arrays[name]


@dataclass(frozen=True)
class StatTable:
    """Quantiles and mean of one metric at each checkpoint, plus a benchmark column."""

    metric: str
    checkpoints: tuple
    q05: tuple
    mean: tuple
    q95: tuple
    benchmark: tuple

    def row(self) -> list:
        out = []
        for i in range(len(self.checkpoints)):
            out += [self.q05[i], self.mean[i], self.q95[i], self.benchmark[i]]
        return out


def path_generator(seed: int, path: int, stream: int) -> np.random.Generator:
    """Counter-based generator for one (path, stream) pair."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(path, stream))))


def _time_grid(T: float, cfg: SimConfig) -> np.ndarray:
    for c in cfg.checkpoints:
        if not 0.0 <= c <= T + 1e-12:
            raise SimulationError(f"checkpoint {c} outside [0, {T}]")
    grid = np.concatenate([np.linspace(0.0, T, cfg.n_steps + 1), np.minimum(cfg.checkpoints, T)])
    grid = np.unique(np.round(grid, 12))
    return grid


def _chain_jumps(chain: TaxChain, T: float, cfg: SimConfig):
    """Padded arrays of jump times and post-jump states, one row per path."""
    paths = [simulate_chain(chain, T, path_generator(cfg.seed, i, STREAM_CHAIN)) for i in range(cfg.n_paths)]
    width = max(1, max(len(p.times) - 1 for p in paths))
    jt = np.full((cfg.n_paths, width + 1), np.inf)
    js = np.zeros((cfg.n_paths, width + 1), dtype=int)
    for i, p in enumerate(paths):
        n = len(p.times) - 1
        jt[i, :n] = p.times[1:]
        js[i, :n] = p.states[1:]
    return jt, js


def simulate_paths(
    model: ModelSpec,
    solution: HJBSolution,
    tax: TaxChain | BenchmarkSpec | UncertaintySpec,
    cfg: SimConfig = SimConfig(),
    exact_output: bool = True,
) -> PathEnsemble:
    """Simulate the closed loop of ``solution``'s investment policy.

    ``tax`` is the true tax model: a chain (simulated exactly), a deterministic
    schedule, or the game's uncertainty band (the opponent's equilibrium tax
    is read from the policy).  With ``exact_output`` the output is recomputed
    at the simulated state; otherwise it is interpolated from the policy grid.

    Raises
    ------
    SimulationError
        If the solution was computed for a different model or tax-state set.
    """
    vg, pol = solution.value, solution.policy
    if vg.model_hash != model.hash():
        raise SimulationError("policy was solved for a different model")
    e = model.econ
    T = e.T
    times = _time_grid(T, cfg)
    n_p, n_t = cfg.n_paths, len(times)
    is_chain = isinstance(tax, TaxChain)
    is_game = isinstance(tax, UncertaintySpec)
    if is_chain:
        if vg.values.shape[3] != tax.n_states or not np.allclose(vg.tau_levels, tax.levels):
            raise SimulationError("policy tax states differ from the simulated chain")
        levels = tax.levels
        jt, js = _chain_jumps(tax, T, cfg)
        k = np.full(n_p, tax.initial_state, dtype=int)
    else:
        if vg.values.shape[3] != 1:
            raise SimulationError("a deterministic or game tax needs a single-regime policy")
        jt = np.full((n_p, 1), np.inf)
        js = np.zeros((n_p, 1), dtype=int)
        k = np.zeros(n_p, dtype=int)
    ptr = np.zeros(n_p, dtype=int)
    rows = np.arange(n_p)

    ou = model.price if isinstance(model.price, OULogPrice) else None
    y_init = cfg.y0 if cfg.y0 is not None else (math.log(ou.p0) if ou is not None else 0.0)
    dW = np.stack([path_generator(cfg.seed, i, STREAM_W).standard_normal(n_t - 1) for i in range(n_p)])
    dB = (
        np.stack([path_generator(cfg.seed, i, STREAM_B).standard_normal(n_t - 1) for i in range(n_p)])
        if ou is not None
        else None
    )

    X = np.full(n_p, float(cfg.x0))
    Y = np.full(n_p, float(y_init))
    shape = (n_p, n_t)
    rec = {name: np.empty(shape) for name in ("X", "Y", "tau", "gamma", "q", "em", "inten", "prof")}
    rec_k = np.empty(shape, dtype=np.int8)
    em = np.zeros(n_p)
    inten = np.zeros(n_p)
    prof = np.zeros(n_p)
    first_jump = jt[:, 0].copy()
    g_before = np.full(n_p, np.nan)
    g_after = np.full(n_p, np.nan)
    clamped = 0
    xs, ys = vg.xs, vg.ys
    grid_has_y = len(ys) > 1

    def read_gamma(s, Xv, Yv, kv):
        return interpolate(pol.gamma, vg.times, xs, ys, s, Xv, Yv if grid_has_y else ys[0], kv)

    def outputs(s, Xv, Yv, kv):
        yq = Yv if grid_has_y else ys[0]
        if is_game:
            q = interpolate(pol.q, vg.times, xs, ys, s, Xv, yq, kv)
            tau = interpolate(pol.tau, vg.times, xs, ys, s, Xv, yq, kv)
        else:
            tau = levels[kv] if is_chain else tax.tax_at(s)
            if exact_output:
                q = optimal_output(model, Xv, Yv, tau)[0]
            else:
                q = interpolate(pol.q, vg.times, xs, ys, s, Xv, yq, kv)
        return q, np.broadcast_to(np.asarray(tau, dtype=float), Xv.shape)

    def controls(s, Xv, Yv, kv):
        nonlocal clamped
        out = (Xv < xs[0]) | (Xv > xs[-1])
        if grid_has_y:
            out |= (Yv < ys[0]) | (Yv > ys[-1])
        clamped += int(np.count_nonzero(out))
        return (read_gamma(s, Xv, Yv, kv), *outputs(s, Xv, Yv, kv))

    def drift(Xv, Yv, g, h):
        """Deterministic part of the state after ``h`` (the noise enters once per grid step)."""
        if e.delta > 0:
            decay = np.exp(-e.delta * h)
            Xn = Xv * decay + g * (1.0 - decay) / e.delta
        else:
            Xn = Xv + g * h
        Yn = Yv if ou is None else ou.mu + (Yv - ou.mu) * np.exp(-ou.theta * h)
        return Xn, Yn

    def record(n, g, q, tau):
        rec["X"][:, n], rec["Y"][:, n], rec["tau"][:, n] = X, Y, tau
        rec["gamma"][:, n], rec["q"][:, n] = g, q
        rec["em"][:, n], rec["inten"][:, n], rec["prof"][:, n] = em, inten, prof
        rec_k[:, n] = k

    for n in range(n_t - 1):
        t0, t1 = times[n], times[n + 1]
        s = np.full(n_p, t0)
        first = True
        while True:
            nxt = jt[rows, ptr]
            end = np.minimum(nxt, t1)
            h = end - s
            g, q, tau = controls(s, X, Y, k)
            if first:
                record(n, g, q, tau)
                first = False
            # running terms at the midpoint of the sub-step (second order in h);
            # the investment rate stays the one read at the start of the step
            Xm, Ym = drift(X, Y, g, 0.5 * h)
            q, tau = outputs(s + 0.5 * h, Xm, Ym, k)
            _, C1 = cost_components(model, q, Xm, Ym)
            raw = raw_material(q, model)
            if is_game:
                rate = game_reward(model, q, tau, Xm, Ym, tax, s + 0.5 * h)
            else:
                rate = instantaneous_profit(model, q, Xm, Ym, tau)
            rate = rate - g - e.kappa * g * g
            weight = h if e.r == 0 else -np.expm1(-e.r * h) / e.r
            prof += np.exp(-e.r * s) * rate * weight
            em += C1 * h
            inten += np.where(raw > 0, C1 / np.where(raw > 0, raw, 1.0), 0.0) * h
            X, _ = drift(X, Y, g, h)
            jumped = nxt < t1
            if not np.any(jumped):
                break
            idx = np.flatnonzero(jumped)
            new_k = js[idx, ptr[idx]]
            firsts = idx[ptr[idx] == 0]
            if firsts.size:
                g_before[firsts] = read_gamma(end[firsts], X[firsts], Y[firsts], k[firsts])
                g_after[firsts] = read_gamma(end[firsts], X[firsts], Y[firsts], js[firsts, 0])
            k[idx] = new_k
            ptr[idx] += 1
            s = end
        dt = t1 - t0
        sd = e.sigma * (math.sqrt((1.0 - math.exp(-2.0 * e.delta * dt)) / (2.0 * e.delta)) if e.delta > 0 else math.sqrt(dt))
        X = X + sd * dW[:, n]
        if ou is not None:
            a = math.exp(-ou.theta * dt)
            Y = ou.mu + (Y - ou.mu) * a + ou.alpha_vol * math.sqrt((1.0 - a * a) / (2.0 * ou.theta)) * dB[:, n]

    g, q, tau = controls(np.full(n_p, T), X, Y, k)
    record(n_t - 1, g, q, tau)
    J = prof + math.exp(-e.r * T) * residual_value(model, X)
    return PathEnsemble(
        times=times,
        checkpoints=cfg.checkpoints,
        X=rec["X"],
        Y=rec["Y"],
        tau=rec["tau"],
        regime=rec_k,
        gamma=rec["gamma"],
        q=rec["q"],
        cum_emissions=rec["em"],
        cum_intensity=rec["inten"],
        cum_profit=rec["prof"],
        J=J,
        first_jump=first_jump,
        gamma_before_jump=g_before,
        gamma_after_jump=g_after,
        n_clamped=clamped,
        seed=cfg.seed,
    )


def cross_belief_simulate(model: ModelSpec, belief_solution: HJBSolution, true_chain: TaxChain, cfg: SimConfig = SimConfig()) -> PathEnsemble:
    """Run a policy solved under one generator against taxes from ``true_chain``."""
    levels = belief_solution.value.tau_levels
    if len(levels) != true_chain.n_states or not np.allclose(levels, true_chain.levels):
        raise SimulationError("belief and true chain must share the same tax states")
    return simulate_paths(model, belief_solution, true_chain, cfg)


def statistics(
    ensemble: PathEnsemble,
    metric: str = "emissions",
    checkpoints: Sequence[float] | None = None,
    benchmark: PathEnsemble | None = None,
) -> StatTable:
    """Nearest-rank 5% and 95% quantiles and the mean at each checkpoint.

    The benchmark column is the mean of ``benchmark`` (NaN when absent).
    """
    cps = tuple(ensemble.checkpoints if checkpoints is None else checkpoints)
    data = ensemble.metric(metric)
    q05, mean, q95, bench = [], [], [], []
    for c in cps:
        col = data[:, ensemble.time_index(c)]
        q05.append(float(np.quantile(col, 0.05, method="inverted_cdf")))
        q95.append(float(np.quantile(col, 0.95, method="inverted_cdf")))
        mean.append(float(col.mean()))
        if benchmark is None:
            bench.append(float("nan"))
        else:
            bench.append(float(benchmark.metric(metric)[:, benchmark.time_index(c)].mean()))
    return StatTable(metric, cps, tuple(q05), tuple(mean), tuple(q95), tuple(bench))


def policy_evaluation(ensemble: PathEnsemble) -> tuple[float, float]:
    """Sample mean and standard error of the realised discounted objective."""
    J = ensemble.J
    se = float(J.std(ddof=1) / math.sqrt(len(J))) if len(J) > 1 else float("nan")
    return float(J.mean()), se


def write_ensemble_csv(path, ensemble: PathEnsemble, n_paths: int | None = None, every: int = 1) -> Path:
    """Trajectories as ``path_id,t,X,Y,tau,gamma,q,cum_emissions,cum_profit``."""
    path = Path(path)
    n = ensemble.n_paths if n_paths is None else min(n_paths, ensemble.n_paths)
    cols = range(0, len(ensemble.times), max(1, every))
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path_id", "t", "X", "Y", "tau", "gamma", "q", "cum_emissions", "cum_profit"])
        for i in range(n):
            for j in cols:
                w.writerow(
                    [i]
                    + [
                        repr(float(v))
                        for v in (
                            ensemble.times[j],
                            ensemble.X[i, j],
                            ensemble.Y[i, j],
                            ensemble.tau[i, j],
                            ensemble.gamma[i, j],
                            ensemble.q[i, j],
                            ensemble.cum_emissions[i, j],
                            ensemble.cum_profit[i, j],
                        )
                    ]
                )
    return path


def write_stat_csv(path, tables: dict) -> Path:
    """One row per labelled StatTable, columns ``t=<c>:{q05,mean,q95,benchmark}``."""
    path = Path(path)
    tables = dict(tables)
    first = next(iter(tables.values()))
    header = ["row"]
    for c in first.checkpoints:
        header += [f"t={c:g}:{name}" for name in ("q05", "mean", "q95", "benchmark")]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for label, tab in tables.items():
            w.writerow([label] + [f"{v:.6g}" for v in tab.row()])
    return path
