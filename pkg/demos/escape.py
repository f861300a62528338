"""Escape from the origin at strong and weak reinforcement.

The probability that the walk reaches the boundary of V_n before returning to
0 is estimated from the walk itself. For V_2 it is also computed from the
random environment, as the mean of 1 / (W_0 R(0, boundary)) under the
joint sampler.
"""
from errwlab.mcmc import McmcParams
from errwlab.walkers import escape_probability_experiment
from errwlab.ward import transience_pipeline_check

for a in (100.0, 0.1):
    r = escape_probability_experiment(3, 3, a, 20_000, seed=1)
    print(f"a = {a:5}: P(escape V_3) = {r.estimate:.4f} +- {r.stderr:.4f}  ({r.censored} censored)")

walk = escape_probability_experiment(3, 2, 100.0, 20_000, seed=2)
env = transience_pipeline_check(3, 2, 100.0, McmcParams(burn_in=1000, sweeps=5000, thin=10), seed=3)
print(f"V_2, a = 100: walk {walk.estimate:.4f} +- {walk.stderr:.4f}, "
      f"environment {env.escape_from_environment.mean:.4f} +- {env.escape_from_environment.stderr:.4f}")
print(f"E[W_0 R] / R_unit = {env.ratio:.3f}")
