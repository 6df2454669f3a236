"""Three alleles: exact chain against Monte Carlo for the diffusion.

With r = 3 and a small population the chain law is still enumerable, so only
the diffusion side carries sampling noise. The printed band is one standard
error; a cell counts as dominated when the gap minus three bands is below the
bound.
"""
from wfapprox import certify
from wfapprox.diffusion import DiffusionConfig
from wfapprox.model import MutationMatrix, b_star, drift_norm_sup, u_star
from wfapprox.testfuncs import quadratic_r3

N = 4
U = MutationMatrix.from_rates([0.02, 0.03], [0.01, 0.04])
print("u* =", u_star(U), " b* =", b_star(U)[0], " sup|b| =", drift_norm_sup(U)[0])

est, notes = certify.certify_r3([quadratic_r3()], [3 / 8, 3 / 8], U, N, [1, 5, 20],
                                DiffusionConfig(N, U), replicates=2**17, seed=1)
for e in est:
    print(f"n={e.n:>3}: chain {e.chain_value:.5f}, diffusion {e.diffusion_value:.5f} +- {e.diffusion_se:.5f}, "
          f"gap {e.gap:.5f}, bound {e.bound.total:.4f}, {e.status}")
