"""Experiment pipelines: solve, simulate, tables, figures and manifests.

Every ``run_*`` function takes a validated :class:`ScenarioConfig` and an
output directory, writes its artifacts there and returns the manifest
dictionary it also stores as ``manifest.json``.
"""

from __future__ import annotations

import json
import math
import re
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ScenarioConfig
from .game import saddle_field, solve_isaacs, write_saddle_csv
from .hjb import GridSpec, HJBSolution, default_grid, solve_hjb, write_grid_binary, write_grid_csv
from .simulation import (
    PathEnsemble,
    SimConfig,
    cross_belief_simulate,
    policy_evaluation,
    simulate_paths,
    statistics,
    write_ensemble_csv,
    write_stat_csv,
)
from .svg import Band, Figure, Panel, Series, write_figure, write_sidecar
from .tax import TaxChain, benchmark_from_chain, expected_tax_integral

__all__ = [
    "FIGURES",
    "TABLES",
    "solve_scenario",
    "benchmark_schedule",
    "initial_point",
    "derived_constants",
    "run_solve",
    "run_simulate",
    "run_game",
    "run_table",
    "run_figure",
    "run_benchmark",
]

TABLES = ("emissions", "intensity", "investment", "wrong_belief", "wrong_belief_intensity")

FIGURES = {
    "single_traj": "Single investment path per variant under one tax path; grey spans mark the high-tax regime.",
    "single_traj_beliefs": "Single investment path for the correct and the wrong belief about switching intensities, same tax path.",
    "average_inv": "Mean investment with the 5%-95% quantile band under random taxes against the mean under the deterministic benchmark.",
    "optimal_q": "Optimal output along one price and tax path per variant; grey spans mark the high-tax regime.",
    "optimal_I": "Investment along one price and tax path per variant; grey spans mark the high-tax regime.",
    "Istar": "Investment along one tax path per variant for the two-technology producer.",
    "saddle": "Equilibrium output and worst-case tax as functions of the investment level.",
    "Iaverage_2tech_uncertainty": "Mean investment under tax uncertainty per penalty and rebate variant.",
}


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.=-]+", "_", label).strip("_") or "run"


def benchmark_schedule(cfg: ScenarioConfig):
    """Deterministic comparison schedule of a chain scenario (None otherwise)."""
    if cfg.mode != "chain" or cfg.benchmark is None:
        return None
    return benchmark_from_chain(cfg.tax, cfg.model.econ.T, cfg.benchmark)


def solve_scenario(cfg: ScenarioConfig, tax=None, grid: GridSpec | None = None) -> HJBSolution:
    """Solve the control problem (chain or schedule) or the game for ``cfg``."""
    tax = cfg.tax if tax is None else tax
    grid = grid or cfg.grid or default_grid(cfg.model, game=cfg.mode == "game")
    if cfg.mode == "game" and tax is cfg.tax:
        return solve_isaacs(cfg.model, tax, grid)
    return solve_hjb(cfg.model, tax, grid)


def initial_point(cfg: ScenarioConfig):
    """``(x0, y0, regime0)`` used for value read-outs."""
    y0 = cfg.sim.y0
    if y0 is None:
        y0 = math.log(cfg.model.price.p0) if cfg.model.has_factor else 0.0
    k0 = cfg.tax.initial_state if cfg.mode == "chain" else 0
    return cfg.sim.x0, y0, k0


def derived_constants(cfg: ScenarioConfig, sol: HJBSolution) -> dict:
    out = {
        "L_pi": sol.budget.L_pi,
        "L_h": sol.budget.L_h,
        "L_V": sol.budget.L_V,
        "gamma_bar": sol.budget.gamma_bar,
    }
    if cfg.mode == "chain":
        T = cfg.model.econ.T
        integral = expected_tax_integral(cfg.tax, T)
        out["expected_tax_integral"] = integral
        out["b"] = 2.0 * integral / T**2
        out["tau_bar"] = integral / T
    return out


def _coarse(grid: GridSpec) -> GridSpec:
    ny = None if grid.n_y is None else max(3, (grid.n_y - 1) // 2 + 1)
    return replace(grid, n_x=max(3, (grid.n_x - 1) // 2 + 1), n_y=ny, n_t=max(1, grid.n_t // 2), save_every=max(1, grid.save_every // 2))


def _value0(cfg, sol):
    x0, y0, k0 = initial_point(cfg)
    return float(sol.value.at(0.0, x0, y0, k0))


def _slices(sol: HJBSolution, cfg: ScenarioConfig):
    """Stored time indices written to the policy CSV: t=0, checkpoints and T."""
    times = sol.value.times
    wanted = [0.0, *cfg.sim.checkpoints, cfg.model.econ.T]
    return sorted({int(np.argmin(np.abs(times - t))) for t in wanted})


def _write_manifest(out: Path, manifest: dict) -> dict:
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=float) + "\n")
    return manifest


def _manifest(cfg: ScenarioConfig, command: str, started: float, runs: list, extra: dict | None = None) -> dict:
    m = {
        "command": command,
        "scenario": cfg.name,
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "seed": cfg.sim.seed,
        "version": __version__,
        "wall_time_s": time.perf_counter() - started,
        "runs": runs,
    }
    if extra:
        m.update(extra)
    return m


def run_solve(cfg: ScenarioConfig, out_dir, convergence: bool = True) -> dict:
    """Solve every variant; write ``grid.bin``, ``policy.csv`` and the manifest."""
    started = time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs = []
    for label, scen in cfg.expanded():
        sub = out / _slug(label)
        sub.mkdir(exist_ok=True)
        grid = scen.grid or default_grid(scen.model, game=scen.mode == "game")
        sol = solve_scenario(scen, grid=grid)
        entry = {"label": label, "mode": scen.mode, **derived_constants(scen, sol)}
        entry["value_at_origin"] = _value0(scen, sol)
        if convergence:
            coarse = solve_scenario(scen, grid=_coarse(grid))
            v_c = _value0(scen, coarse)
            entry["grid_convergence_rel"] = abs(entry["value_at_origin"] - v_c) / max(abs(entry["value_at_origin"]), 1e-12)
        bench = benchmark_schedule(scen)
        if bench is not None:
            entry["benchmark"] = {"kind": scen.benchmark, **{k: float(v) for k, v in vars(bench).items()}}
        write_grid_binary(sub / "grid.bin", sol.value, sol.policy)
        write_grid_csv(sub / "policy.csv", sol.value, sol.policy, _slices(sol, scen))
        if scen.mode == "game":
            x0, y0, _ = initial_point(scen)
            write_saddle_csv(sub / "saddle.csv", saddle_field(scen.model, sol.value.xs, sol.value.ys, scen.tax))
        entry["artifacts"] = sorted(str(p.relative_to(out)) for p in sub.iterdir())
        runs.append(entry)
    return _write_manifest(out, _manifest(cfg, "solve", started, runs))


def _simulate(scen: ScenarioConfig, sol: HJBSolution, tax=None, n_paths: int | None = None) -> PathEnsemble:
    sim = scen.sim if n_paths is None else replace(scen.sim, n_paths=n_paths)
    return simulate_paths(scen.model, sol, scen.tax if tax is None else tax, sim)


def run_simulate(cfg: ScenarioConfig, out_dir, keep_paths: int = 20) -> dict:
    """Simulate every variant; write trajectories, statistics and policy evaluation."""
    started = time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs = []
    for label, scen in cfg.expanded():
        sub = out / _slug(label)
        sub.mkdir(exist_ok=True)
        sol = solve_scenario(scen)
        ens = _simulate(scen, sol)
        bench_ens = None
        bench = benchmark_schedule(scen)
        if bench is not None:
            bench_ens = _simulate(scen, solve_scenario(scen, tax=bench), tax=bench)
        J, se = policy_evaluation(ens)
        entry = {"label": label, **derived_constants(scen, sol), "value_at_origin": _value0(scen, sol)}
        entry.update(J_hat=J, J_stderr=se, clamped_evaluations=ens.n_clamped)
        write_ensemble_csv(sub / "paths.csv", ens, n_paths=keep_paths)
        if scen.sim.checkpoints:
            tables = {m: statistics(ens, m, benchmark=bench_ens) for m in ("emissions", "intensity", "investment")}
            write_stat_csv(sub / "stats.csv", tables)
        entry["artifacts"] = sorted(str(p.relative_to(out)) for p in sub.iterdir())
        runs.append(entry)
    return _write_manifest(out, _manifest(cfg, "simulate", started, runs))


def run_game(cfg: ScenarioConfig, out_dir) -> dict:
    """Solve the game for every variant; write grids, saddle fields and investment statistics."""
    if cfg.mode != "game":
        raise ConfigError("tax.kind: the game pipeline needs an 'uncertainty' tax section")
    started = time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs = []
    stats = {}
    for label, scen in cfg.expanded():
        sub = out / _slug(label)
        sub.mkdir(exist_ok=True)
        sol = solve_scenario(scen)
        write_grid_binary(sub / "grid.bin", sol.value, sol.policy)
        write_saddle_csv(sub / "saddle.csv", saddle_field(scen.model, sol.value.xs, sol.value.ys, scen.tax))
        ens = _simulate(scen, sol)
        J, se = policy_evaluation(ens)
        if scen.sim.checkpoints:
            stats[label] = statistics(ens, "investment")
        runs.append(
            {
                "label": label,
                **derived_constants(scen, sol),
                "value_at_origin": _value0(scen, sol),
                "J_hat": J,
                "J_stderr": se,
                "artifacts": sorted(str(p.relative_to(out)) for p in sub.iterdir()),
            }
        )
    if stats:
        write_stat_csv(out / "investment.csv", stats)
    return _write_manifest(out, _manifest(cfg, "game", started, runs))


def table_data(cfg: ScenarioConfig, table_id: str) -> dict:
    """Labelled StatTables for a table id (see ``TABLES``)."""
    if table_id not in TABLES:
        raise ConfigError(f"table: unknown table id {table_id!r}; choose from {', '.join(TABLES)}")
    rows = {}
    for label, scen in cfg.expanded():
        sol = solve_scenario(scen)
        ens = _simulate(scen, sol)
        if table_id.startswith("wrong_belief"):
            if scen.belief is None:
                raise ConfigError("tax.belief_generator: wrong-belief tables need a belief generator")
            metric = "intensity" if table_id.endswith("intensity") else "emissions"
            wrong = cross_belief_simulate(scen.model, solve_scenario(scen, tax=scen.belief), scen.tax, scen.sim)
            rows[f"{label}: wrong belief"] = statistics(wrong, metric)
            rows[f"{label}: correct belief"] = statistics(ens, metric)
        else:
            bench = benchmark_schedule(scen)
            bench_ens = None if bench is None else _simulate(scen, solve_scenario(scen, tax=bench), tax=bench)
            rows[label] = statistics(ens, table_id, benchmark=bench_ens)
    return rows


def run_table(cfg: ScenarioConfig, table_id: str, out_dir) -> dict:
    """Quantile table with one row per variant; columns per checkpoint."""
    started = time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not cfg.sim.checkpoints:
        raise ConfigError("sim.checkpoints: a table needs at least one checkpoint")
    rows = table_data(cfg, table_id)
    path = write_stat_csv(out / f"table_{table_id}.csv", rows)
    runs = [{"label": k, "mean": list(v.mean), "q05": list(v.q05), "q95": list(v.q95), "benchmark": list(v.benchmark)} for k, v in rows.items()]
    return _write_manifest(out, _manifest(cfg, "table", started, runs, {"table": table_id, "artifacts": [path.name]}))


# -- figures --------------------------------------------------------------------------


def _high_spans(ens: PathEnsemble, path: int = 0):
    """Time spans where path ``path`` sits in the highest tax state."""
    k = ens.regime[path]
    top = int(k.max()) if k.max() > 0 else None
    if top is None:
        return []
    spans, start = [], None
    times = ens.times
    for i, kk in enumerate(k):
        if kk == top and start is None:
            start = times[i]
        if kk != top and start is not None:
            spans.append((start, times[i]))
            start = None
    if start is not None:
        spans.append((start, times[-1]))
    return spans


def _path_figure(cfg, figure_id, metric, ylabel):
    series, shading = [], []
    for i, (label, scen) in enumerate(cfg.expanded()):
        sol = solve_scenario(scen)
        ens = _simulate(scen, sol, n_paths=1)
        series.append(Series(label, ens.times, ens.metric(metric)[0], "solid" if i == 0 else "dashed"))
        shading = shading or _high_spans(ens)
    return [Panel(cfg.name, "t (years)", ylabel, series, [], shading)]


def _figure_panels(cfg: ScenarioConfig, figure_id: str):
    if figure_id in ("single_traj", "optimal_I", "Istar"):
        return _path_figure(cfg, figure_id, "investment", "X")
    if figure_id == "optimal_q":
        return _path_figure(cfg, figure_id, "q", "q")
    if figure_id == "single_traj_beliefs":
        if cfg.mode != "chain" or cfg.belief is None:
            raise ConfigError("tax.belief_generator: figure needs a chain with a belief generator")
        sol = solve_scenario(cfg)
        right = _simulate(cfg, sol, n_paths=1)
        wrong = cross_belief_simulate(cfg.model, solve_scenario(cfg, tax=cfg.belief), cfg.tax, replace(cfg.sim, n_paths=1))
        return [
            Panel(
                cfg.name,
                "t (years)",
                "X",
                [Series("correct belief", right.times, right.X[0]), Series("wrong belief", wrong.times, wrong.X[0], "dashed")],
                [],
                _high_spans(right),
            )
        ]
    if figure_id == "average_inv":
        if cfg.mode != "chain":
            raise ConfigError("tax.kind: figure 'average_inv' needs a chain scenario")
        sol = solve_scenario(cfg)
        ens = _simulate(cfg, sol)
        q05 = np.quantile(ens.X, 0.05, axis=0, method="inverted_cdf")
        q95 = np.quantile(ens.X, 0.95, axis=0, method="inverted_cdf")
        series = [Series("mean, random tax", ens.times, ens.X.mean(axis=0))]
        bench = benchmark_schedule(cfg)
        if bench is not None:
            b_ens = _simulate(cfg, solve_scenario(cfg, tax=bench), tax=bench)
            series.append(Series("mean, deterministic benchmark", b_ens.times, b_ens.X.mean(axis=0), "dashed"))
        return [Panel(cfg.name, "t (years)", "X", series, [Band("5%-95% quantiles", ens.times, q05, q95)])]
    if figure_id == "saddle":
        if cfg.mode != "game":
            raise ConfigError("tax.kind: figure 'saddle' needs an 'uncertainty' tax section")
        q_series, t_series = [], []
        for i, (label, scen) in enumerate(cfg.expanded()):
            _, y0, _ = initial_point(scen)
            xs = np.linspace(0.0, 60.0, 121)
            sf = saddle_field(scen.model, xs, [y0], scen.tax)
            style = "solid" if i % 2 == 0 else "dashed"
            q_series.append(Series(label, xs, sf.q_hat[:, 0], style))
            t_series.append(Series(label, xs, sf.tau_hat[:, 0], style))
        return [Panel("equilibrium output", "x", "q", q_series), Panel("worst-case tax", "x", "tau", t_series)]
    if figure_id == "Iaverage_2tech_uncertainty":
        if cfg.mode != "game":
            raise ConfigError("tax.kind: figure needs an 'uncertainty' tax section")
        series = []
        for i, (label, scen) in enumerate(cfg.expanded()):
            ens = _simulate(scen, solve_scenario(scen))
            series.append(Series(label, ens.times, ens.X.mean(axis=0), "solid" if i % 2 == 0 else "dashed"))
        return [Panel(cfg.name, "t (years)", "E[X]", series)]
    raise ConfigError(f"figure: unknown figure id {figure_id!r}; choose from {', '.join(FIGURES)}")


def run_figure(cfg: ScenarioConfig, figure_id: str, out_dir) -> dict:
    """Write ``<figure_id>.svg`` and its CSV sidecar (CSV only when no checkpoints are configured)."""
    if figure_id not in FIGURES:
        raise ConfigError(f"figure: unknown figure id {figure_id!r}; choose from {', '.join(FIGURES)}")
    started = time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fig = Figure(figure_id, FIGURES[figure_id], _figure_panels(cfg, figure_id))
    artifacts = [write_sidecar(out / f"{figure_id}.csv", fig).name]
    if cfg.sim.checkpoints:
        artifacts.append(write_figure(out / f"{figure_id}.svg", fig).name)
    extra = {"figure": figure_id, "caption": FIGURES[figure_id], "artifacts": artifacts}
    return _write_manifest(out, _manifest(cfg, "figure", started, [], extra))


def run_benchmark(cfg: ScenarioConfig, out_dir) -> dict:
    """Expected cumulative tax of each chain variant and the matching deterministic schedules."""
    if cfg.mode != "chain":
        raise ConfigError("tax.kind: the benchmark command needs a 'chain' tax section")
    started = time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs = []
    seen = set()
    for label, scen in cfg.expanded():
        key = (scen.tax, scen.model.econ.T)
        if key in seen:
            continue
        seen.add(key)
        T = scen.model.econ.T
        integral = expected_tax_integral(scen.tax, T)
        runs.append({"label": label, "T": T, "expected_tax_integral": integral, "b": 2 * integral / T**2, "tau_bar": integral / T})
    with (out / "benchmark.csv").open("w") as fh:
        fh.write("label,T,expected_tax_integral,b,tau_bar\n")
        for r in runs:
            fh.write(f"{r['label']},{r['T']!r},{r['expected_tax_integral']!r},{r['b']!r},{r['tau_bar']!r}\n")
    return _write_manifest(out, _manifest(cfg, "benchmark", started, runs, {"artifacts": ["benchmark.csv"]}))
