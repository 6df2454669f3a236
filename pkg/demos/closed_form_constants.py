"""Checking two closed-form suprema that enter the multi-allele constants.

The constants use a closed form for ``sup ||A(y)||_HS`` and for the drift norm
``sup ||b(y)||``. Grid maximisation shows where they hold and where they do
not; the bound can be recomputed with the exact values.
"""
import numpy as np

from wfapprox.bounds import total_bound
from wfapprox.model import MutationMatrix, b_star, covariance_hs_sup_grid, drift_norm_sup, sup_covariance_hs

for r in (3, 4, 5, 6):
    grid, arg = covariance_hs_sup_grid(r, 40)
    print(f"r={r}: closed form {sup_covariance_hs(r):.4f}, grid max {grid:.4f} at {np.round(arg, 3)}")

rng = np.random.default_rng(0)
for k in range(5):
    U = MutationMatrix.random(3, rng)
    closed, i_star = b_star(U)
    exact, vertex = drift_norm_sup(U)
    print(f"matrix {k}: b* {closed:.4f} (vertex e_{i_star}), sup|b| {exact:.4f} at {vertex}")

U = MutationMatrix.random(4, rng)
norms = np.ones(4)
a = total_bound(U, 10, 20, norms).total
b = total_bound(U, 10, 20, norms, hs_sup=covariance_hs_sup_grid(4, 60)[0], drift_sup=drift_norm_sup(U)[0]).total
print(f"r=4 bound at n=20: closed forms {a:.5f}, exact suprema {b:.5f}")
