# Checking a hand-written gradient against finite differences.
#
# The whole library stands on analytic backward passes, so the oracle
# that keeps them honest deserves a demo of its own. The recipe: flatten
# everything the loss depends on into one vector, probe each coordinate
# with a centered difference, and compare.

import numpy as np

from dmlbench import (
    EmbeddingBatch,
    ProxyBank,
    Rng,
    fd_gradient,
    l2_normalize_rows,
    proxyanchor_loss,
    run_gradcheck,
)

rng = Rng(7)
labels = np.array([0, 0, 1, 1, 2, 2])
z = rng.normal(6 * 8).reshape(6, 8)
proxies = l2_normalize_rows(rng.normal(3 * 8).reshape(3, 8))
batch = EmbeddingBatch(z, labels, 3)
bank = ProxyBank(proxies, 3, 1)

out = proxyanchor_loss(batch, bank, alpha=8.0, delta=0.1)
print(f"loss value: {out.value:.6f}")

# one flat vector holding embeddings and proxies
x0 = np.concatenate([z.ravel(), proxies.ravel()])
analytic = np.concatenate([out.grad_embeddings.ravel(), out.grad_proxies.ravel()])


def f(flat):
    zz = flat[: z.size].reshape(6, 8)
    pp = flat[z.size :].reshape(3, 8)
    b = ProxyBank(pp, 3, 1)
    return proxyanchor_loss(EmbeddingBatch(zz, labels, 3), b, alpha=8.0, delta=0.1).value


fd = fd_gradient(f, x0, h=1e-5)

# Mixed tolerance: near-zero derivatives are compared absolutely (their
# relative error is meaningless), the rest relatively.
near = np.abs(fd) < 1e-6
abs_err = np.abs(analytic - fd)
rel_err = abs_err[~near] / np.abs(fd[~near])
print(f"coordinates probed:      {x0.size}")
print(f"worst absolute error:    {abs_err[near].max() if near.any() else 0.0:.3e}")
print(f"worst relative error:    {rel_err.max():.3e}")
print()

# The packaged checker runs the same comparison over freshly sampled
# instances for every loss in the library. Kinked losses (the triplet
# hinge, distances hitting zero) resample until the finite-difference
# stencil sits safely on one smooth side.
print("full sweep, 10 instances per loss:")
for r in run_gradcheck(instances=10, seed=17):
    status = "ok" if r.passed else f"FAIL ({r.failures}/{r.instances})"
    print(
        f"  {r.variant:<12} {status:<6} worst_abs={r.worst_abs:.3e} worst_rel={r.worst_rel:.3e}"
    )
