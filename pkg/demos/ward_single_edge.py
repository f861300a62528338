"""The Ward identity on a single edge.

On one edge the effective resistance of the c^{xy} network is 1/a, so the
identity <B^m (1 - m D)> = 1 forces <B^m> = a / (a - m). We check this by
quadrature of the mixed density and by Metropolis sampling.
"""
import math

from scipy import integrate

from errwlab.environment import FieldConfig, log_density_us
from errwlab.graph import single_edge
from errwlab.mcmc import McmcParams, sample_field_mcmc
from errwlab.ward import batch_means

a, m = 4.0, 1.0
g = single_edge()


def moment(u):
    f = lambda s: (math.cosh(u) + 0.5 * math.exp(u) * s * s) ** m * math.exp(
        log_density_us([a], FieldConfig(g, [0, u], [0, s])).total)
    return integrate.quad(f, -math.inf, math.inf)[0]


quad = integrate.quad(moment, -30, 30, limit=200)[0]
print(f"quadrature  <B> = {quad:.6f}   (a/(a-m) = {a / (a - m):.6f})")

chain = sample_field_mcmc(a, g, McmcParams(burn_in=5000, sweeps=100_000, thin=5), seed=3)
est = batch_means(chain.b_pair(0, 1) ** m)
print(f"MCMC        <B> = {est.mean:.4f} +- {est.stderr:.4f}  (acceptance {chain.acceptance['u']:.2f})")
