"""Pure numpy implementations of the hot loops; the reference for ``_ckernels``."""
import numpy as np

BACKEND = "python"


def mlp_forward(weights, biases, x, relu):
    acts = [np.ascontiguousarray(x, dtype=np.float64)]
    last = len(weights) - 1
    for layer, (w, b) in enumerate(zip(weights, biases)):
        z = acts[-1] @ w + b
        if layer < last:
            z = np.maximum(z, 0.0) if relu else np.tanh(z)
        acts.append(z)
    return acts


def mlp_backward(weights, acts, grad_out, relu):
    grad = np.array(grad_out, dtype=np.float64)
    n_layers = len(weights)
    gws = [None] * n_layers
    gbs = [None] * n_layers
    for layer in range(n_layers - 1, -1, -1):
        gbs[layer] = grad.sum(axis=0)
        gws[layer] = acts[layer].T @ grad
        grad = grad @ weights[layer].T
        if layer > 0:
            h = acts[layer]
            grad = grad * (h > 0.0) if relu else grad * (1.0 - h * h)
    return gws, gbs, grad


def mf_sgd_epoch(users, items, rewards, order, P, Q, bu, bi, mu, lr, reg):
    sse = 0.0
    for j in order:
        u = users[j]
        i = items[j]
        pu = P[u].copy()
        qi = Q[i]
        err = rewards[j] - (mu + bu[u] + bi[i] + pu @ qi)
        sse += err * err
        bu[u] += lr * (err - reg * bu[u])
        bi[i] += lr * (err - reg * bi[i])
        P[u] = pu + lr * (err * qi - reg * pu)
        Q[i] = qi + lr * (err * pu - reg * qi)
    return float(sse)
