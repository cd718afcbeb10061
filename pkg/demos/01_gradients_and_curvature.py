"""Tour of the differentiation core: ops, gradients, gradients of gradients.

The engine's second-order meta-updates hinge on one property: a gradient
computed with create_graph=True is itself a graph node, so it can be
differentiated again.  This script demonstrates that on small examples and
cross-checks everything against central finite differences.
"""

import numpy as np

from metacast import autodiff as ad

# --- plain ops record onto an active graph -------------------------------
with ad.Graph():
    x = ad.leaf([1.0, 2.0, 3.0])
    loss = ad.reduce_sum(ad.square(x))          # sum x_i^2
    (g,) = ad.grad(loss, [x])
    print("d/dx sum(x^2)        =", g.data, "(expect 2x = [2 4 6])")

# --- second derivatives ----------------------------------------------------
with ad.Graph():
    x = ad.leaf([2.0])
    y = ad.reduce_sum(ad.mul(ad.mul(x, x), x))  # x^3
    (g1,) = ad.grad(y, [x], create_graph=True)  # 3x^2, still differentiable
    (g2,) = ad.grad(ad.reduce_sum(g1), [x])     # 6x
    print("d2/dx2 x^3 at x=2    =", g2.data, "(expect 12)")

# --- the pattern the meta-learner relies on --------------------------------
# g(t0) = Lq(t0 - a * dLs/dt0): differentiate THROUGH an inner gradient step.
rng = np.random.default_rng(0)
s, q, theta = rng.normal(size=4), rng.normal(size=4), rng.normal(size=4)
alpha = 0.1


def two_step(t0):
    ls = ad.reduce_sum(ad.square(ad.sub(t0, ad.const(s))))
    (gs,) = ad.grad(ls, [t0], create_graph=True)
    t1 = ad.sub(t0, ad.scalar_mul(alpha, gs))
    return ad.reduce_sum(ad.square(ad.sub(t1, ad.const(q))))


with ad.Graph():
    t0 = ad.leaf(theta)
    (meta_grad,) = ad.grad(two_step(t0), [t0])

# central differences as the independent oracle
h = 1e-6
fd = np.zeros(4)
for i in range(4):
    for sign in (+1, -1):
        pert = theta.copy()
        pert[i] += sign * h
        with ad.Graph():
            val = two_step(ad.leaf(pert)).item()
        fd[i] += sign * val / (2 * h)

print("meta-gradient        =", np.round(meta_grad.data, 6))
print("finite differences   =", np.round(fd, 6))
print("max abs difference   =", np.abs(meta_grad.data - fd).max())

# --- first-order mode: create_graph=False drops the curvature term ---------
with ad.Graph():
    t0 = ad.leaf(theta)
    ls = ad.reduce_sum(ad.square(ad.sub(t0, ad.const(s))))
    (gs,) = ad.grad(ls, [t0], create_graph=False)   # constant gradient
    t1 = ad.sub(t0, ad.scalar_mul(alpha, gs))
    lq = ad.reduce_sum(ad.square(ad.sub(t1, ad.const(q))))
    (fo,) = ad.grad(lq, [t0])
print("first-order gradient =", np.round(fo.data, 6),
      "(differs: curvature term dropped)")
