"""
Checking the conditions behind linear convergence
=================================================

Strong convexity of the ridge loss implies a PL inequality restricted to
the event {loss > t}. The check below conditions a fixed population on that
event at random states and compares both sides, then evaluates the
stepsize window for gamma and the rate bound.
"""

import numpy as np

from cvarsgd import ExperimentConfig, StepSizes
from cvarsgd import experiment as ex
from cvarsgd.diagnostics import (
    estimate_reference, set_restricted_pl_check, stepsize_admissibility, theorem1_bound,
)

cfg = ExperimentConfig()
loss = cfg.build_loss()
pop = ex.population(cfg)

ref = estimate_reference(loss, 0.2, pop)
print("theta* =", np.round(ref.theta_star, 4), "t* =", round(ref.t_star, 5), "G* =", round(ref.g_star, 6))

states = ex.sample_states(loss, pop, ref.theta_star, 10, 0.05, seed=0)
report, points = set_restricted_pl_check(loss, states, 0.2, pop)
print(f"restricted PL: {report.n_violations} violations at {report.n_points} states")
for p in points[:5]:
    print(f"  mass {p.event_mass:.3f}  0.5|grad|^2 {p.lhs:.4f} >= mu*gap {p.rhs:.4f}")

print(stepsize_admissibility(0.2, 0.004, 0.001, 0.2, ref.t_star, 0.0))
print(stepsize_admissibility(0.2, 0.004, 0.0005, 0.2, ref.t_star, 0.0))

T = np.array([0, 1000, 5000, 20_000])
print("bound", theorem1_bound(0.2, 20.0, StepSizes(0.002, 0.001), 0.2, T, 80.0, 700.0))
