"""
Profit model and Markov tax chains
==================================

The producer's costs, the profit-maximising output, and the random tax
paths that drive the investment problem.
"""

# %%
# Emission technology.  A filter lowers the emission factor quadratically
# until it reaches zero; green capacity switches on smoothly past a
# threshold level of investment.
import numpy as np

from carbon_abatement import (
    ConstantPrice,
    EconomicParams,
    Filter,
    ModelSpec,
    NoRebate,
    TaxChain,
    TwoTech,
    benchmark_from_chain,
    emission_factor_filter,
    expected_tax_integral,
    green_capacity,
    occupation_probabilities,
    optimal_output,
    simulate_chain,
)

filt = Filter(a=1.25, c_bar=1.0, e0=1.5, e1=0.5)
xs = np.array([0.0, 2.0, 4.0, 6.0, 8.0])
print("filter emission factor:", np.round(emission_factor_filter(xs, filt), 4))

two = TwoTech(c_b=1.0, e_b=1.0, a_b=1.0, p_g=0.2, x_bar=20.0)
print("green capacity:        ", np.round(green_capacity(np.array([0.0, 20.0, 40.0, 60.0]), two), 4))

# %%
# Optimal output responds to the tax and to the installed filter.
econ = EconomicParams(r=0.02, delta=0.05, sigma=0.05, kappa=0.5, T=15.0, q_max=10.0)
model = ModelSpec(econ, filt, NoRebate(), ConstantPrice(5.0))
for tau in (0.0, 0.2, 1.0):
    q, pi = optimal_output(model, xs, 0.0, tau)
    print(f"tau={tau}: q*={np.round(q, 3)}  profit={np.round(pi, 3)}")

# %%
# A two-state tax chain: zero tax that jumps to 0.2 at rate 0.25 and stays.
# The deterministic benchmark grows linearly with the same expected
# cumulative tax over the horizon.
increase = TaxChain.two_state(0.0, 0.2, 0.25, 0.0)
T = 15.0
print("E[int tau] =", round(expected_tax_integral(increase, T), 4))
print("linear benchmark slope b =", round(benchmark_from_chain(increase, T, "linear").b, 5))

reversal = TaxChain.two_state(0.0, 0.2, 0.25, 0.25, start_high=True)
print("constant benchmark tau_bar =", round(benchmark_from_chain(reversal, T, "constant").tau_bar, 5))

# %%
# Exact path simulation against the forward equation.
rng = np.random.default_rng(0)
paths = [simulate_chain(increase, T, rng) for _ in range(20000)]
high_at_5 = np.mean([p.state_at(5.0) == 1 for p in paths])
print("P(high at t=5): simulated", round(high_at_5, 4), "forward equation", round(occupation_probabilities(increase, [5.0])[0, 1], 4))
