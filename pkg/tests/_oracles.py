"""Independent reference computations shared by the test suite.

Everything here is deliberately naive (finite differences, nested loops,
scalar math) so it cannot share a bug with the library's fast paths.
"""

import numpy as np

from seqlab import tensor as T


def finite_diff_grads(make_loss, params, eps):
    """Central-difference gradients of a scalar loss w.r.t. each param.

    ``make_loss`` is called with no arguments and must recompute the loss
    from the current contents of ``params`` (list of Tensors, mutated in
    place between evaluations).
    """
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = make_loss()
            flat[i] = orig - eps
            lo = make_loss()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * eps)
        grads.append(g)
    return grads


def max_rel_error(analytic, numeric, floor=1e-6):
    """Max elementwise |a - n| / max(|a|, |n|, floor)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max())


def check_gradients(build_loss, params, eps=1e-5, tol=1e-5):
    """Run backward once, compare every param grad to finite differences.

    ``build_loss`` returns a scalar Tensor when invoked under a fresh tape.
    The finite-difference evaluation temporarily upcasts the parameters to
    float64 so the oracle itself is noise-free even when the library path
    under test runs in float32. Returns the worst relative error seen
    (asserting it is below tol).
    """
    for p in params:
        p.zero_grad()
    with T.Tape():
        loss = build_loss()
    T.backward_pass(loss)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
                for p in params]

    def loss_value():
        with T.no_grad():
            return float(build_loss().data)

    saved = [p.data for p in params]
    try:
        for p in params:
            p.data = p.data.astype(np.float64)
        numeric = finite_diff_grads(loss_value, params, eps)
    finally:
        for p, s in zip(params, saved):
            p.data = s
    worst = max(max_rel_error(a, n) for a, n in zip(analytic, numeric))
    assert worst < tol, f"gradient check failed: max rel error {worst:.3e} >= {tol}"
    return worst


def softmax_scalar(row):
    """Softmax of one row computed with plain python floats."""
    m = max(row)
    exps = [np.exp(float(v) - m) for v in row]
    s = sum(exps)
    return [e / s for e in exps]


def cross_entropy_scalar(logits, targets, smoothing, pad_id=None):
    """Token cross-entropy re-derived position by position in float64."""
    logits = np.asarray(logits, dtype=np.float64)
    v = logits.shape[-1]
    total, count = 0.0, 0
    for pos, gold in enumerate(targets):
        if pad_id is not None and gold == pad_id:
            continue
        row = logits[pos]
        logp = row - (np.log(np.sum(np.exp(row - row.max()))) + row.max())
        target_dist = np.full(v, smoothing / (v - 1))
        target_dist[gold] = 1.0 - smoothing
        total += float(-(target_dist * logp).sum())
        count += 1
    return total / count


def relative_scores_direct(h_q, h_k, pos_rows, w_q, w_ke, w_kp, u, v, d_model):
    """Four-term relative attention scores by explicit nested loops.

    All arguments are plain per-head numpy arrays: ``w_*`` are
    [d_head, d_model], ``u``/``v`` are [d_head], and ``pos_rows(dist)``
    returns the positional embedding for a signed distance.
    """
    t_q, t_k = h_q.shape[0], h_k.shape[0]
    scores = np.zeros((t_q, t_k), dtype=np.float64)
    for i in range(t_q):
        for j in range(t_k):
            q_i = w_q @ h_q[i]
            k_j = w_ke @ h_k[j]
            p_ij = w_kp @ pos_rows(i - j)
            scores[i, j] = (q_i @ k_j) + (q_i @ p_ij) + (u @ k_j) + (v @ p_ij)
    return scores / np.sqrt(d_model)


def adam_scalar_trace(grads, lr, beta1=0.9, beta2=0.999, eps=1e-8, x0=0.0):
    """Reference Adam trajectory for a single scalar parameter."""
    x, m, v = float(x0), 0.0, 0.0
    xs = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        x -= lr * mhat / (np.sqrt(vhat) + eps)
        xs.append(x)
    return xs
