"""
Tax uncertainty as a game
=========================

Without a probability model for the tax, the producer plans against a
penalised worst-case tax.  The instantaneous game has a saddle point, and
the dynamic problem is solved like the control problem with the saddle
value as running reward.
"""

# %%
from dataclasses import replace

import numpy as np

from carbon_abatement import saddle_field, simulate_paths, solve_isaacs, statistics
from carbon_abatement.config import preset

scenarios = dict(preset("twotech_uncertainty").expanded())
scen = scenarios["nu1=1,alpha=0"]

# %%
# Equilibrium output rises and the worst-case tax falls as green capacity
# is built.
sf = saddle_field(scen.model, np.array([0.0, 40.0, 50.0, 60.0, 70.0, 80.0]), [0.0], scen.tax)
print("q_hat:  ", np.round(sf.q_hat[:, 0], 3))
print("tau_hat:", np.round(sf.tau_hat[:, 0], 3))

# %%
# A weaker penalty (smaller nu1) lets the adversary move the tax further,
# which raises investment.  The rebate lowers the worst-case tax and with
# it the incentive to invest.
for label, s in scenarios.items():
    sol = solve_isaacs(s.model, s.tax)
    ens = simulate_paths(s.model, sol, s.tax, replace(s.sim, n_paths=1000))
    st = statistics(ens, "investment")
    print(f"{label:>16}: mean investment t=5 {st.mean[0]:.2f}, t=10 {st.mean[1]:.2f}")
