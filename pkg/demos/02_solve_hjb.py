"""
Solving the investment problem under tax risk
=============================================

Backward finite-difference solution of the control problem for the filter
producer, and what the feedback policy looks like.
"""

# %%
import numpy as np

from carbon_abatement import GridSpec, TaxChain, solve_hjb
from carbon_abatement.config import preset

scen = dict(preset("filter_tax_increase").expanded())["kappa=0.5"]
model = scen.model
sol = solve_hjb(model, scen.tax, GridSpec(-1.0, 12.0, 201, 600))
print("Lipschitz budget L_V =", round(sol.budget.L_V, 3), " investment cap =", round(sol.budget.gamma_bar, 3))

# %%
# Value and investment at t=0 in both tax regimes.  Investment is larger
# once the tax has jumped, but it is already positive before: the producer
# hedges against the coming tax.
xs = sol.value.xs
for x in (0.0, 2.0, 4.0):
    i = int(np.argmin(np.abs(xs - x)))
    v = sol.value.values[0, i, 0]
    g = sol.policy.gamma[0, i, 0]
    print(f"x={x}: V(low)={v[0]:.3f} V(high)={v[1]:.3f}  gamma(low)={g[0]:.3f} gamma(high)={g[1]:.3f}")

# %%
# Sanity check against a closed form: with no tax the filter is worthless,
# nobody invests, and the value is the discounted revenue annuity.
zero = solve_hjb(model, TaxChain((0.0,), ((0.0,),)), GridSpec(-1.0, 12.0, 201, 600))
annuity = 10.0 * (1 - np.exp(-0.02 * 15.0)) / 0.02
print("annuity", round(annuity, 3), "solver", round(float(zero.value.at(0.0, 4.0)), 3), "max gamma", zero.policy.gamma.max())

# %%
# Investment fades as the horizon approaches because a filter has no
# residual value.
i0 = int(np.argmin(np.abs(xs)))
for k in (0, len(sol.value.times) // 2, len(sol.value.times) - 1):
    print(f"t={sol.value.times[k]:5.2f}: gamma(x=0, high) = {sol.policy.gamma[k, i0, 0, 1]:.4f}")
