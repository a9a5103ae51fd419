"""Problem instance and instantaneous-profit layer.

A producer sells ``q`` units of electricity per year at price ``p(y)`` and pays
production cost ``C0(q, x, y)`` plus a carbon tax ``tau`` on the emission rate
``C1(q, x, y)``.  An optional rebate ``nu0(q) * tau`` is paid back.  The
investment level ``x`` in abatement technology lowers ``C1`` (filter) or
replaces brown output by green capacity (two technologies).

All functions are vectorised: scalar or array arguments broadcast with numpy
rules.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Union

import numpy as np

__all__ = [
    "EconomicParams",
    "Filter",
    "TwoTech",
    "NoRebate",
    "FilterHalf",
    "TwoTechAlpha",
    "ConstantPrice",
    "OULogPrice",
    "ZeroResidual",
    "LinearResidual",
    "ModelSpec",
    "ModelError",
    "emission_factor_filter",
    "green_capacity",
    "raw_material",
    "cost_components",
    "rebate",
    "price",
    "residual_value",
    "instantaneous_profit",
    "marginal_profit",
    "optimal_output",
    "optimal_profit",
    "output_bounds",
]

BISECTION_TOL = 1e-10


class ModelError(ValueError):
    """Invalid model parameters."""


@dataclass(frozen=True)
class EconomicParams:
    """Economic and investment-dynamics parameters.

    ``fixed_output`` pins production to a constant (long-term delivery
    contracts); the optimiser then works on the degenerate interval
    ``[fixed_output, fixed_output]``.
    """

    r: float
    delta: float
    sigma: float
    kappa: float
    T: float
    q_max: float
    q_min: float = 0.0
    fixed_output: float | None = None

    def __post_init__(self):
        if self.r < 0:
            raise ModelError("r must be >= 0")
        if not 0 <= self.delta < 1:
            raise ModelError("delta must lie in [0, 1)")
        if self.kappa <= 0:
            raise ModelError("kappa must be > 0")
        if self.T <= 0:
            raise ModelError("T must be > 0")
        if self.sigma < 0:
            raise ModelError("sigma must be >= 0")
        if not 0 <= self.q_min < self.q_max:
            raise ModelError("need 0 <= q_min < q_max")
        if self.fixed_output is not None and not self.q_min <= self.fixed_output <= self.q_max:
            raise ModelError("fixed_output must lie in [q_min, q_max]")


@dataclass(frozen=True)
class Filter:
    """Brown plant with a filter; raw material ``Q(q) = a q^{3/2}``."""

    a: float
    c_bar: float
    e0: float
    e1: float

    def __post_init__(self):
        if self.a <= 0 or self.c_bar < 0 or self.e0 <= 0 or self.e1 < 0:
            raise ModelError("Filter needs a > 0, e0 > 0, c_bar >= 0, e1 >= 0")


@dataclass(frozen=True)
class TwoTech:
    """Brown plant plus green capacity ``P_g`` (softplus-smoothed kink).

    Maintenance cost of the green plant is affine, ``c_g0 + c_g1 * x``.
    """

    c_b: float
    e_b: float
    a_b: float
    p_g: float
    x_bar: float
    smooth_width: float = 1.0
    c_g0: float = 0.0
    c_g1: float = 0.0

    def __post_init__(self):
        if self.c_b < 0 or self.e_b < 0 or self.a_b <= 0:
            raise ModelError("TwoTech needs c_b >= 0, e_b >= 0, a_b > 0")
        if not 0 < self.p_g < 1:
            raise ModelError("p_g must lie in (0, 1)")
        if self.smooth_width <= 0:
            raise ModelError("smooth_width must be > 0")
        if self.c_g0 < 0 or self.c_g1 < 0:
            raise ModelError("maintenance coefficients must be >= 0")


@dataclass(frozen=True)
class NoRebate:
    pass


@dataclass(frozen=True)
class FilterHalf:
    """``nu0(q) = Q(q) e0 / 2``: taxes refunded once half the emissions are abated."""


@dataclass(frozen=True)
class TwoTechAlpha:
    """``nu0(q) = e_b Q_b(alpha q)``."""

    alpha: float

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise ModelError("alpha must lie in [0, 1]")


@dataclass(frozen=True)
class ConstantPrice:
    p: float

    def __post_init__(self):
        if self.p <= 0:
            raise ModelError("price must be > 0")


@dataclass(frozen=True)
class OULogPrice:
    """``p = exp(Y)`` with ``dY = theta (mu - Y) dt + alpha_vol dB``."""

    theta: float
    mu: float
    alpha_vol: float
    p0: float

    def __post_init__(self):
        if self.theta <= 0 or self.alpha_vol < 0 or self.p0 <= 0:
            raise ModelError("OULogPrice needs theta > 0, alpha_vol >= 0, p0 > 0")

    @property
    def stationary_std(self) -> float:
        return self.alpha_vol / math.sqrt(2.0 * self.theta)


@dataclass(frozen=True)
class ZeroResidual:
    pass


@dataclass(frozen=True)
class LinearResidual:
    """``h(x) = (slope * x)^+``."""

    slope: float

    def __post_init__(self):
        if self.slope < 0:
            raise ModelError("residual slope must be >= 0")


Technology = Union[Filter, TwoTech]
Rebate = Union[NoRebate, FilterHalf, TwoTechAlpha]
Price = Union[ConstantPrice, OULogPrice]
Residual = Union[ZeroResidual, LinearResidual]


@dataclass(frozen=True)
class ModelSpec:
    econ: EconomicParams
    tech: Technology
    rebate: Rebate = field(default_factory=NoRebate)
    price: Price = field(default_factory=lambda: ConstantPrice(5.0))
    residual: Residual = field(default_factory=ZeroResidual)

    def __post_init__(self):
        if isinstance(self.rebate, FilterHalf) and not isinstance(self.tech, Filter):
            raise ModelError("FilterHalf rebate requires the Filter technology")
        if isinstance(self.rebate, TwoTechAlpha) and not isinstance(self.tech, TwoTech):
            raise ModelError("TwoTechAlpha rebate requires the TwoTech technology")
        check_single_peak(self)

    @property
    def has_factor(self) -> bool:
        """True when the price depends on a stochastic factor."""
        return isinstance(self.price, OULogPrice)

    def hash(self) -> str:
        """Stable digest used to tie solved grids to the model that produced them."""
        payload = json.dumps(_tagged(self), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


def _tagged(obj):
    out = {"kind": type(obj).__name__}
    for k, v in asdict(obj).items():
        sub = getattr(obj, k)
        out[k] = _tagged(sub) if hasattr(sub, "__dataclass_fields__") else v
    return out


# -- technology primitives ---------------------------------------------------


def _q32(a, q):
    return a * np.power(np.maximum(q, 0.0), 1.5)


def _dq32(a, q):
    return 1.5 * a * np.sqrt(np.maximum(q, 0.0))


def emission_factor_filter(x, tech: Filter):
    """Emissions per unit of raw material after abatement, ``e0 [(1 - e1 x / 2 e0)^+]^2``.

    Equal to ``(e0 - e1 x + e1^2 x^2 / (4 e0))^+`` up to the cutoff
    ``x = 2 e0 / e1`` and zero beyond; the square form is C^1 at the cutoff.
    """
    u = np.maximum(1.0 - tech.e1 * np.asarray(x, dtype=float) / (2.0 * tech.e0), 0.0)
    return tech.e0 * u * u


def _emission_factor_dx(x, tech: Filter):
    u = np.maximum(1.0 - tech.e1 * np.asarray(x, dtype=float) / (2.0 * tech.e0), 0.0)
    return -tech.e1 * u


def green_capacity(x, tech: TwoTech):
    """Smoothed green capacity ``p_g * s * softplus((x - x_bar) / s)``."""
    s = tech.smooth_width
    return tech.p_g * s * np.logaddexp(0.0, (np.asarray(x, dtype=float) - tech.x_bar) / s)


def raw_material(q, model: ModelSpec):
    """Raw-material input ``Q(q)`` (filter) or ``Q_b(q)`` (two technologies)."""
    tech = model.tech
    return _q32(tech.a if isinstance(tech, Filter) else tech.a_b, q)


def _maintenance(x, tech: TwoTech):
    return tech.c_g0 + tech.c_g1 * np.asarray(x, dtype=float)


def price(model: ModelSpec, y):
    if isinstance(model.price, ConstantPrice):
        return np.full_like(np.asarray(y, dtype=float), model.price.p)
    return np.exp(y)


def rebate(model: ModelSpec, q):
    """Rebate base ``nu0(q)``; the payment is ``nu0(q) * tau``."""
    reb, tech = model.rebate, model.tech
    q = np.asarray(q, dtype=float)
    if isinstance(reb, FilterHalf):
        return 0.5 * tech.e0 * _q32(tech.a, q)
    if isinstance(reb, TwoTechAlpha):
        return tech.e_b * _q32(tech.a_b, reb.alpha * q)
    return np.zeros_like(q)


def _rebate_dq(model: ModelSpec, q):
    reb, tech = model.rebate, model.tech
    q = np.asarray(q, dtype=float)
    if isinstance(reb, FilterHalf):
        return 0.5 * tech.e0 * _dq32(tech.a, q)
    if isinstance(reb, TwoTechAlpha):
        return tech.e_b * reb.alpha * _dq32(tech.a_b, reb.alpha * q)
    return np.zeros_like(q)


def residual_value(model: ModelSpec, x):
    if isinstance(model.residual, LinearResidual):
        return np.maximum(model.residual.slope * np.asarray(x, dtype=float), 0.0)
    return np.zeros_like(np.asarray(x, dtype=float))


def residual_lipschitz(model: ModelSpec) -> float:
    return model.residual.slope if isinstance(model.residual, LinearResidual) else 0.0


def _check_q(model: ModelSpec, q):
    q = np.asarray(q, dtype=float)
    if np.any(q < -1e-12) or np.any(q > model.econ.q_max + 1e-12):
        raise ModelError(f"output outside [0, q_max={model.econ.q_max}]")
    return q


def cost_components(model: ModelSpec, q, x, y=0.0):
    """Return ``(C0, C1)``: emission-independent cost and emission rate.

    Raises
    ------
    ModelError
        If ``q`` leaves ``[0, q_max]``.
    """
    q = _check_q(model, q)
    tech = model.tech
    if isinstance(tech, Filter):
        Q = _q32(tech.a, q)
        C0 = Q * tech.c_bar + 0.0 * np.asarray(x, dtype=float)
        C1 = Q * emission_factor_filter(x, tech)
        return C0, C1
    Qb = _q32(tech.a_b, np.maximum(q - green_capacity(x, tech), 0.0))
    return _maintenance(x, tech) + tech.c_b * Qb, tech.e_b * Qb


def _cost_derivatives_q(model: ModelSpec, q, x):
    tech = model.tech
    if isinstance(tech, Filter):
        dQ = _dq32(tech.a, q)
        return dQ * tech.c_bar, dQ * emission_factor_filter(x, tech)
    dQb = _dq32(tech.a_b, np.maximum(q - green_capacity(x, tech), 0.0))
    return tech.c_b * dQb, tech.e_b * dQb


def instantaneous_profit(model: ModelSpec, q, x, y, tau):
    """``p(y) q - C0 - C1 tau + nu0(q) tau``."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ModelError("tax must be >= 0")
    C0, C1 = cost_components(model, q, x, y)
    return price(model, y) * q - C0 - C1 * tau + rebate(model, q) * tau


def marginal_profit(model: ModelSpec, q, x, y, tau):
    """Derivative of the instantaneous profit in ``q``."""
    dC0, dC1 = _cost_derivatives_q(model, np.asarray(q, dtype=float), x)
    return price(model, y) - dC0 - (dC1 - _rebate_dq(model, q)) * tau


def output_bounds(model: ModelSpec) -> tuple[float, float]:
    """Feasible output interval, collapsed to a point in fixed-output mode."""
    e = model.econ
    if e.fixed_output is not None:
        return e.fixed_output, e.fixed_output
    return e.q_min, e.q_max


def _bisect_decreasing(f, lo, hi, tol=BISECTION_TOL):
    """Root of a function positive left of the root and negative right of it.

    ``lo``/``hi`` are arrays of brackets; returns the midpoint after the bracket
    width drops below ``tol``.
    """
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    width = float(np.max(hi - lo)) if lo.size else 0.0
    n_iter = max(1, math.ceil(math.log2(max(width, tol) / tol)) + 1)
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        pos = f(mid) > 0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
    return 0.5 * (lo + hi)


def optimal_output(model: ModelSpec, x, y, tau, q_lo=None, q_hi=None, method="auto"):
    """Profit-maximising output and the maximal profit.

    The boundary cases are resolved first: ``q_lo`` if the marginal profit is
    already negative there, ``q_hi`` if it is still positive at ``q_hi``.
    Otherwise the first-order condition is solved by bisection to 1e-10, or
    in closed form for the filter technology when ``method`` allows it.

    Returns
    -------
    q_star, profit_star : ndarray
    """
    d_lo, d_hi = output_bounds(model)
    q_lo = d_lo if q_lo is None else q_lo
    q_hi = d_hi if q_hi is None else q_hi
    x, y, tau = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, y, tau)))
    lo = np.broadcast_to(np.asarray(q_lo, dtype=float), x.shape)
    hi = np.broadcast_to(np.asarray(q_hi, dtype=float), x.shape)

    use_closed = method == "closed" or (
        method == "auto"
        and isinstance(model.tech, Filter)
        and isinstance(model.rebate, (NoRebate, FilterHalf))
    )
    if use_closed:
        q = _closed_form_filter(model, x, y, tau, lo, hi)
    else:
        q = _bisection_output(model, x, y, tau, lo, hi)
    return q, instantaneous_profit(model, q, x, y, tau)


def _closed_form_filter(model, x, y, tau, lo, hi):
    tech = model.tech
    if not isinstance(tech, Filter) or isinstance(model.rebate, TwoTechAlpha):
        raise ModelError("closed form exists only for the filter technology")
    denom = tech.c_bar + tau * emission_factor_filter(x, tech)
    if isinstance(model.rebate, FilterHalf):
        denom = denom - 0.5 * tau * tech.e0
    p = price(model, y)
    with np.errstate(divide="ignore"):
        unconstrained = np.where(denom > 0, (2.0 * p / (3.0 * tech.a * np.where(denom > 0, denom, 1.0))) ** 2, np.inf)
    return np.clip(unconstrained, lo, hi)


def _bisection_output(model, x, y, tau, lo, hi):
    def mp(q):
        return marginal_profit(model, q, x, y, tau)

    mp_lo, mp_hi = mp(lo), mp(hi)
    root = _bisect_decreasing(mp, lo, hi)
    return np.where(mp_lo <= 0, lo, np.where(mp_hi >= 0, hi, root))


def optimal_profit(model: ModelSpec, x, y, tau):
    """Maximal instantaneous profit over the feasible output interval."""
    return optimal_output(model, x, y, tau)[1]


def check_single_peak(model: ModelSpec, tau_max: float = 2.0, n_q: int = 200) -> None:
    """Verify on a sampled box that the marginal profit crosses zero at most once.

    The marginal profit must go from positive to negative as ``q`` grows and
    never back, which makes the maximiser unique.  Strict concavity is not
    required: with two technologies the profit is linear (or convex with the
    rebate) below the green capacity, where the marginal profit is positive.

    Raises
    ------
    ModelError
        With the first offending ``(x, y, tau)`` node.
    """
    e = model.econ
    if isinstance(model.tech, Filter):
        xs = np.linspace(-1.0, 2.0 * model.tech.e0 / max(model.tech.e1, 1e-12) + 1.0, 15)
    else:
        xs = np.linspace(0.0, model.tech.x_bar + 2.0 * e.q_max / model.tech.p_g, 15)
    if isinstance(model.price, OULogPrice):
        sd = model.price.stationary_std
        ys = np.linspace(model.price.mu - 4 * sd, model.price.mu + 4 * sd, 5)
    else:
        ys = np.array([0.0])
    taus = np.linspace(0.0, tau_max, 9)
    qs = np.linspace(e.q_min, e.q_max, n_q)
    X, Y, TAU, Qg = np.meshgrid(xs, ys, taus, qs, indexing="ij")
    mp = marginal_profit(model, Qg, X, Y, TAU)
    neg = mp < 0
    # once negative, must stay non-positive
    seen_neg = np.maximum.accumulate(neg, axis=-1)
    bad = seen_neg & (mp > 1e-9)
    if np.any(bad):
        i = np.argwhere(bad)[0]
        raise ModelError(
            "marginal profit is not single-crossing in q at "
            f"x={xs[i[0]]:.4g}, y={ys[i[1]]:.4g}, tau={taus[i[2]]:.4g}; "
            "the profit-maximising output is not unique"
        )
