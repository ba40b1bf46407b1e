"""Pure numpy log-domain Sinkhorn-Knopp kernel (fallback for the Cython build)."""
import numpy as np


def _lse(x, axis):
    mx = x.max(axis=axis, keepdims=True)
    return (mx + np.log(np.exp(x - mx).sum(axis=axis, keepdims=True))).squeeze(axis)


def sinkhorn_log(L, log_r, log_c, max_iters, tol):
    """Scale ``exp(L)`` to row marginals ``exp(log_r)`` and column marginals ``exp(log_c)``.

    ``L`` is the similarity matrix already divided by epsilon. Returns
    ``(P, f, g, iterations, violation)`` where ``P = exp(L + f[:, None] + g)``.
    """
    n, m = L.shape
    f = np.zeros(n)
    g = np.zeros(m)
    r = np.exp(log_r)
    used = 0
    for it in range(max_iters):
        lse_r = _lse(L + g, axis=1)
        # columns are exact after the previous column pass
        if it > 0 and np.abs(np.exp(f + lse_r) - r).max() < tol:
            break
        f = log_r - lse_r
        g = log_c - _lse(L + f[:, None], axis=0)
        used = it + 1
    P = np.exp(L + f[:, None] + g)
    viol = max(np.abs(P.sum(axis=1) - r).max(), np.abs(P.sum(axis=0) - np.exp(log_c)).max())
    return P, f, g, used, float(viol)
