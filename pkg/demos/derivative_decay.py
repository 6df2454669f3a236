"""Derivatives of the backward semigroup decay at the predicted rates.

For two alleles the m-th derivative of ``x -> E_x f(X(t))`` is bounded by
``sup|f^(m)| exp(-t lambda~_m)``. The backward equation is solved on a fine
grid and the observed sup-norms are compared with that envelope.
"""
from wfapprox import pde1d
from wfapprox.bounds import corollary_rates
from wfapprox.testfuncs import standard_family_r2

N, u12, u21 = 10, 0.05, 0.05
lam = corollary_rates(u12, u21, N)
x, x2, x3, mix = standard_family_r2()

for f, m in ((x, 1), (x3, 1), (x2, 2), (mix, 2)):
    rep = pde1d.derivative_decay_check(f, m, N, u12, u21, 10.0)
    print(f"\nf={f.name}, m={m}, lambda~_m={lam[m - 1]:.4f}, fitted rate {pde1d.decay_rate_fit(rep):.4f}")
    print(f"{'t':>5} {'sup|d^m F|':>12} {'envelope':>12} {'margin':>12}")
    for row in rep[::2]:
        print(f"{row['t']:5.1f} {row['sup_derivative']:12.6f} {row['bound']:12.6f} {row['margin']:12.2e}")
