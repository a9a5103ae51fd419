"""JSON scenario files and built-in presets.

A scenario is one JSON object with the sections ``model``, ``tax``,
``grid``, ``sim`` and ``outputs`` plus optional ``variants``: labelled
overrides (dotted paths into the document) that produce the rows of a table
or the lines of a figure.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .game import UncertaintySpec
from .hjb import GridSpec
from .model import (
    ConstantPrice,
    EconomicParams,
    Filter,
    FilterHalf,
    LinearResidual,
    ModelSpec,
    NoRebate,
    OULogPrice,
    TwoTech,
    TwoTechAlpha,
    ZeroResidual,
)
from .simulation import SimConfig
from .tax import Constant, LinearIncreasing, TaxChain

__all__ = [
    "ConfigError",
    "OutputSpec",
    "Variant",
    "ScenarioConfig",
    "PRESETS",
    "preset",
    "load_config",
    "dump_config",
]

SECTIONS = ("name", "model", "tax", "grid", "sim", "outputs", "variants")
_KINDS = {
    "tech": {"Filter": Filter, "TwoTech": TwoTech},
    "rebate": {"NoRebate": NoRebate, "FilterHalf": FilterHalf, "TwoTechAlpha": TwoTechAlpha},
    "price": {"ConstantPrice": ConstantPrice, "OULogPrice": OULogPrice},
    "residual": {"ZeroResidual": ZeroResidual, "LinearResidual": LinearResidual},
}


class ConfigError(ValueError):
    """Invalid scenario document; the message starts with the offending field path."""


@dataclass(frozen=True)
class OutputSpec:
    directory: str = "out"
    artifacts: tuple = ()


@dataclass(frozen=True)
class Variant:
    label: str
    overrides: tuple = ()  # ((dotted.path, value), ...) sorted by path


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated scenario.

    ``tax`` is a TaxChain, a deterministic schedule or an UncertaintySpec.
    For chains, ``benchmark`` names the deterministic comparison schedule
    (``"linear"`` or ``"constant"``) and ``belief`` an alternative generator
    for wrong-belief runs.
    """

    name: str
    model: ModelSpec
    tax: Any
    grid: GridSpec | None = None
    sim: SimConfig = field(default_factory=SimConfig)
    outputs: OutputSpec = field(default_factory=OutputSpec)
    benchmark: str | None = None
    belief: TaxChain | None = None
    variants: tuple = ()

    @property
    def mode(self) -> str:
        if isinstance(self.tax, TaxChain):
            return "chain"
        if isinstance(self.tax, UncertaintySpec):
            return "game"
        return "schedule"

    def to_dict(self) -> dict:
        return _scenario_to_dict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def variant(self, v: Variant) -> "ScenarioConfig":
        """Scenario with the variant's overrides applied (variants list dropped)."""
        doc = self.to_dict()
        doc["variants"] = []
        for path, value in v.overrides:
            _set_path(doc, path, value)
        out = from_dict(doc)
        return out

    def expanded(self) -> list:
        """``(label, scenario)`` for each variant, or the scenario itself."""
        if not self.variants:
            return [(self.name, self)]
        return [(v.label, self.variant(v)) for v in self.variants]


# -- serialisation -----------------------------------------------------------------


def _plain(obj):
    if isinstance(obj, tuple):
        return [_plain(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        raise ConfigError(f"non-finite value {obj} cannot be serialised")
    return obj


def _tagged(obj) -> dict:
    out = {"kind": type(obj).__name__}
    for f in fields(obj):
        out[f.name] = _plain(getattr(obj, f.name))
    return out


def _scenario_to_dict(cfg: ScenarioConfig) -> dict:
    m = cfg.model
    model = {
        "econ": {f.name: getattr(m.econ, f.name) for f in fields(m.econ)},
        "tech": _tagged(m.tech),
        "rebate": _tagged(m.rebate),
        "price": _tagged(m.price),
        "residual": _tagged(m.residual),
    }
    tax = cfg.tax
    if isinstance(tax, TaxChain):
        td = {
            "kind": "chain",
            "states": list(tax.states),
            "generator": [list(r) for r in tax.generator],
            "initial_state": tax.initial_state,
            "benchmark": cfg.benchmark,
            "belief_generator": None if cfg.belief is None else [list(r) for r in cfg.belief.generator],
        }
    elif isinstance(tax, LinearIncreasing):
        td = {"kind": "linear", "b": tax.b}
    elif isinstance(tax, Constant):
        td = {"kind": "constant", "tau_bar": tax.tau_bar}
    else:
        td = {"kind": "uncertainty", **{k: _plain(getattr(tax, k)) for k in ("tau_min", "tau_max", "tau_bar", "nu1")}}
    return {
        "name": cfg.name,
        "model": model,
        "tax": td,
        "grid": None if cfg.grid is None else {f.name: getattr(cfg.grid, f.name) for f in fields(cfg.grid)},
        "sim": {f.name: _plain(getattr(cfg.sim, f.name)) for f in fields(cfg.sim)},
        "outputs": {"directory": cfg.outputs.directory, "artifacts": list(cfg.outputs.artifacts)},
        "variants": [{"label": v.label, "set": {p: _plain(val) for p, val in v.overrides}} for v in cfg.variants],
    }


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}: unknown field")
    try:
        return cls(**{k: _tuplify(v) for k, v in data.items()})
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _tuplify(v):
    if isinstance(v, list):
        return tuple(_tuplify(x) for x in v)
    return v


def _kinded(section, data, path):
    if not isinstance(data, dict) or "kind" not in data:
        raise ConfigError(f"{path}.kind: missing")
    table = _KINDS[section]
    kind = data["kind"]
    if kind not in table:
        raise ConfigError(f"{path}.kind: unknown {section} kind {kind!r}; choose from {sorted(table)}")
    return _build(table[kind], {k: v for k, v in data.items() if k != "kind"}, path)


def _model_from(data) -> ModelSpec:
    if not isinstance(data, dict):
        raise ConfigError("model: missing section")
    for key in data:
        if key not in ("econ", "tech", "rebate", "price", "residual"):
            raise ConfigError(f"model.{key}: unknown field")
    if "econ" not in data:
        raise ConfigError("model.econ: missing section")
    if "tech" not in data:
        raise ConfigError("model.tech: missing section")
    econ = _build(EconomicParams, data["econ"], "model.econ")
    parts = {s: _kinded(s, data[s], f"model.{s}") for s in ("tech", "rebate", "price", "residual") if s in data}
    try:
        return ModelSpec(econ, **parts)
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from None


def _tax_from(data):
    if data is None:
        raise ConfigError("tax: missing section (need one of chain, linear, constant, uncertainty)")
    if not isinstance(data, dict) or "kind" not in data:
        raise ConfigError("tax.kind: missing")
    kind = data["kind"]
    body = {k: v for k, v in data.items() if k != "kind"}
    if kind == "chain":
        bench = body.pop("benchmark", None)
        belief = body.pop("belief_generator", None)
        if bench not in (None, "linear", "constant"):
            raise ConfigError("tax.benchmark: must be 'linear', 'constant' or null")
        chain = _build(TaxChain, body, "tax")
        belief_chain = None
        if belief is not None:
            belief_chain = _build(
                TaxChain,
                {"states": body.get("states"), "generator": belief, "initial_state": body.get("initial_state", 0)},
                "tax.belief_generator",
            )
        return chain, bench, belief_chain
    if kind == "linear":
        return _build(LinearIncreasing, body, "tax"), None, None
    if kind == "constant":
        return _build(Constant, body, "tax"), None, None
    if kind == "uncertainty":
        return _build(UncertaintySpec, body, "tax"), None, None
    raise ConfigError(f"tax.kind: unknown tax mode {kind!r}; choose from chain, linear, constant, uncertainty")


def from_dict(doc: dict) -> ScenarioConfig:
    """Validate a scenario document.

    Raises
    ------
    ConfigError
        Naming the first offending field path.
    """
    if not isinstance(doc, dict):
        raise ConfigError("<root>: expected an object")
    for key in doc:
        if key not in SECTIONS:
            raise ConfigError(f"{key}: unknown section")
    model = _model_from(doc.get("model"))
    tax, bench, belief = _tax_from(doc.get("tax"))
    grid = None if doc.get("grid") is None else _build(GridSpec, doc["grid"], "grid")
    sim = _build(SimConfig, doc.get("sim") or {}, "sim")
    for c in sim.checkpoints:
        if c > model.econ.T + 1e-12:
            raise ConfigError(f"sim.checkpoints: {c} exceeds the horizon T={model.econ.T}")
    out = _build(OutputSpec, doc.get("outputs") or {}, "outputs")
    variants = []
    for i, v in enumerate(doc.get("variants") or []):
        if not isinstance(v, dict) or "label" not in v:
            raise ConfigError(f"variants[{i}].label: missing")
        sets = v.get("set") or {}
        if not isinstance(sets, dict):
            raise ConfigError(f"variants[{i}].set: expected an object")
        variants.append(Variant(str(v["label"]), tuple(sorted((p, _tuplify(val)) for p, val in sets.items()))))
    cfg = ScenarioConfig(
        name=str(doc.get("name", "scenario")),
        model=model,
        tax=tax,
        grid=grid,
        sim=sim,
        outputs=out,
        benchmark=bench,
        belief=belief,
        variants=tuple(variants),
    )
    for i, v in enumerate(cfg.variants):
        try:
            cfg.variant(v)
        except ConfigError as exc:
            raise ConfigError(f"variants[{i}] ({v.label}): {exc}") from None
    return cfg


def _set_path(doc, path: str, value):
    keys = path.split(".")
    node = doc
    for i, key in enumerate(keys[:-1]):
        if not isinstance(node, dict) or key not in node or node[key] is None:
            if isinstance(node, dict) and node.get(key) is None:
                node[key] = {}
            else:
                raise ConfigError(f"{'.'.join(keys[: i + 1])}: no such section")
        node = node[key]
    if not isinstance(node, dict):
        raise ConfigError(f"{path}: parent is not an object")
    node[keys[-1]] = copy.deepcopy(value)


def load_config(path) -> ScenarioConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"<root>: invalid JSON ({exc})") from None
    except OSError as exc:
        raise ConfigError(f"<root>: cannot read {path} ({exc.strerror})") from None
    return from_dict(doc)


def dump_config(cfg: ScenarioConfig, path) -> Path:
    path = Path(path)
    path.write_text(cfg.to_json() + "\n")
    return path


# -- presets --------------------------------------------------------------------------

_FILTER = {"kind": "Filter", "a": 1.25, "c_bar": 1.0, "e0": 1.5, "e1": 0.5}
_TWOTECH = {"kind": "TwoTech", "c_b": 1.0, "e_b": 1.0, "a_b": 1.0, "p_g": 0.2, "x_bar": 20.0}


def _filter_doc(name, chain, bench, belief):
    return {
        "name": name,
        "model": {
            "econ": {"r": 0.02, "delta": 0.05, "sigma": 0.05, "kappa": 0.5, "T": 15.0, "q_max": 4.0, "fixed_output": 4.0},
            "tech": dict(_FILTER),
            "rebate": {"kind": "NoRebate"},
            "price": {"kind": "ConstantPrice", "p": 5.0},
            "residual": {"kind": "ZeroResidual"},
        },
        "tax": {**chain, "benchmark": bench, "belief_generator": belief},
        "grid": None,
        "sim": {"n_paths": 10000, "n_steps": 150, "seed": 2024, "checkpoints": [10.0, 15.0], "x0": 0.0},
        "outputs": {"directory": "out", "artifacts": []},
        "variants": [
            {"label": "kappa=0.2", "set": {"model.econ.kappa": 0.2}},
            {"label": "kappa=0.5", "set": {"model.econ.kappa": 0.5}},
        ],
    }


def _filter_endogenous_doc(name, chain, bench):
    doc = _filter_doc(name, chain, bench, None)
    doc["model"]["econ"].update(fixed_output=None, q_max=10.0)
    doc["model"]["price"] = {"kind": "OULogPrice", "theta": 1.0, "mu": math.log(5.0), "alpha_vol": 0.1, "p0": 5.0}
    doc["variants"] = [
        {"label": "rebate", "set": {"model.rebate": {"kind": "FilterHalf"}}},
        {"label": "no-rebate", "set": {"model.rebate": {"kind": "NoRebate"}}},
    ]
    return doc


def _twotech_doc(name, tax, T=15.0, q_min=0.0):
    doc = {
        "name": name,
        "model": {
            "econ": {"r": 0.04, "delta": 0.02, "sigma": 0.2, "kappa": 0.5, "T": T, "q_max": 10.0, "q_min": q_min},
            "tech": dict(_TWOTECH),
            "rebate": {"kind": "NoRebate"},
            "price": {"kind": "ConstantPrice", "p": 2.1},
            "residual": {"kind": "LinearResidual", "slope": 0.7},
        },
        "tax": tax,
        "grid": None,
        "sim": {"n_paths": 10000, "n_steps": 150, "seed": 2024, "checkpoints": [10.0, 15.0], "x0": 20.0},
        "outputs": {"directory": "out", "artifacts": []},
        "variants": [
            {"label": "rebate", "set": {"model.rebate": {"kind": "TwoTechAlpha", "alpha": 0.5}}},
            {"label": "no-rebate", "set": {"model.rebate": {"kind": "NoRebate"}}},
        ],
    }
    return doc


def _chain(tau_high, g12, g21, start_high):
    return {
        "kind": "chain",
        "states": [0.0, tau_high],
        "generator": [[-g12, g12], [g21, -g21]],
        "initial_state": int(start_high),
    }


def _uncertainty_doc():
    doc = _twotech_doc(
        "twotech_uncertainty", {"kind": "uncertainty", "tau_min": 0.5, "tau_max": 1.5, "tau_bar": 1.0, "nu1": 1.0}, T=10.0, q_min=5.0
    )
    doc["sim"]["checkpoints"] = [5.0, 10.0]
    doc["variants"] = [
        {"label": f"nu1={nu},alpha={a}", "set": {"tax.nu1": float(nu), "model.rebate": reb}}
        for nu in (1, 20)
        for a, reb in ((0, {"kind": "NoRebate"}), (0.5, {"kind": "TwoTechAlpha", "alpha": 0.5}))
    ]
    return doc


PRESETS = {
    "filter_tax_increase": lambda: _filter_doc(
        "filter_tax_increase", _chain(0.2, 0.25, 0.0, False), "linear", [[-0.05, 0.05], [0.0, 0.0]]
    ),
    "filter_tax_reversal": lambda: _filter_doc(
        "filter_tax_reversal", _chain(0.2, 0.25, 0.25, True), "constant", [[-0.25, 0.25], [0.5, -0.5]]
    ),
    "filter_endogenous_increase": lambda: _filter_endogenous_doc(
        "filter_endogenous_increase", _chain(0.2, 0.25, 0.0, False), "linear"
    ),
    "filter_endogenous_reversal": lambda: _filter_endogenous_doc(
        "filter_endogenous_reversal", _chain(0.2, 0.25, 0.25, True), "constant"
    ),
    "twotech_tax_increase": lambda: _twotech_doc(
        "twotech_tax_increase", {**_chain(1.0, 0.25, 0.0, False), "benchmark": "linear", "belief_generator": None}
    ),
    "twotech_tax_reversal": lambda: _twotech_doc(
        "twotech_tax_reversal", {**_chain(1.0, 0.25, 0.25, True), "benchmark": "constant", "belief_generator": None}
    ),
    "twotech_uncertainty": _uncertainty_doc,
}


def preset(name: str) -> ScenarioConfig:
    if name not in PRESETS:
        raise ConfigError(f"preset: unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return from_dict(PRESETS[name]())
