"""
Monte Carlo under the optimal policy
====================================

Simulating investment and emissions, cross-checking the solver, and the
cost of wrong beliefs about the tax process.
"""

# %%
from dataclasses import replace

from carbon_abatement import cross_belief_simulate, policy_evaluation, simulate_paths, statistics
from carbon_abatement.config import preset
from carbon_abatement.reporting import benchmark_schedule, solve_scenario

scen = dict(preset("filter_tax_increase").expanded())["kappa=0.5"]
sim = replace(scen.sim, n_paths=2000)
sol = solve_scenario(scen)
ens = simulate_paths(scen.model, sol, scen.tax, sim)

# %%
# The realised discounted objective agrees with the solver's value.
J, se = policy_evaluation(ens)
print(f"Monte Carlo J = {J:.3f} +- {se:.3f}   solver V = {sol.value.at(0.0, 0.0, k=0):.3f}")

# %%
# Emission quantiles against the deterministic benchmark with the same
# expected cumulative tax.
bench = benchmark_schedule(scen)
bench_ens = simulate_paths(scen.model, solve_scenario(scen, tax=bench), bench, sim)
st = statistics(ens, "intensity", benchmark=bench_ens)
for t, lo, m, hi, b in zip(st.checkpoints, st.q05, st.mean, st.q95, st.benchmark):
    print(f"t={t:g}: 5%={lo:.2f} mean={m:.2f} 95%={hi:.2f}  benchmark={b:.2f}")

# %%
# A producer who believes the tax jump is five times less likely invests
# too little and emits more, on the same tax paths.
wrong = cross_belief_simulate(scen.model, solve_scenario(scen, tax=scen.belief), scen.tax, sim)
print("mean intensity at t=15: correct", round(statistics(ens, "intensity").mean[-1], 3),
      " wrong belief", round(statistics(wrong, "intensity").mean[-1], 3))
