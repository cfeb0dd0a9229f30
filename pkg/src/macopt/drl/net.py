"""Two-hidden-layer tanh MLPs with hand-written backpropagation, and Adam.

Parameters live in flat ``dict[str, ndarray]`` objects so the optimizer,
gradient checks and checkpoints can walk them in a fixed order.
"""

import numpy as np

LAYERS = ("W1", "b1", "W2", "b2", "W3", "b3")


def mlp_names(prefix):
    return [f"{prefix}_{k}" for k in LAYERS]


def mlp_init(rng, prefix, n_in, n_hidden, n_out, out_scale=1.0):
    """Scaled-normal initialization (variance 1/fan_in), zero biases.

    ``out_scale`` shrinks the last layer; a small actor head keeps the
    initial policy close to a zero-mean action.
    """
    sizes = [(n_in, n_hidden), (n_hidden, n_hidden), (n_hidden, n_out)]
    params = {}
    for i, (a, b) in enumerate(sizes, start=1):
        scale = 1.0 / np.sqrt(a) * (out_scale if i == 3 else 1.0)
        params[f"{prefix}_W{i}"] = rng.standard_normal((a, b)) * scale
        params[f"{prefix}_b{i}"] = np.zeros(b)
    return params


def mlp_forward(params, prefix, x):
    """Returns ``(out, cache)`` for a batch ``x`` of shape (B, n_in)."""
    W1, b1 = params[f"{prefix}_W1"], params[f"{prefix}_b1"]
    W2, b2 = params[f"{prefix}_W2"], params[f"{prefix}_b2"]
    W3, b3 = params[f"{prefix}_W3"], params[f"{prefix}_b3"]
    h1 = np.tanh(x @ W1 + b1)
    h2 = np.tanh(h1 @ W2 + b2)
    return h2 @ W3 + b3, (x, h1, h2)


def mlp_backward(params, prefix, cache, dout):
    """Gradients of a scalar loss w.r.t. the layer parameters, given dL/d(out)."""
    x, h1, h2 = cache
    g = {}
    g[f"{prefix}_W3"] = h2.T @ dout
    g[f"{prefix}_b3"] = dout.sum(axis=0)
    d2 = (dout @ params[f"{prefix}_W3"].T) * (1.0 - h2**2)
    g[f"{prefix}_W2"] = h1.T @ d2
    g[f"{prefix}_b2"] = d2.sum(axis=0)
    d1 = (d2 @ params[f"{prefix}_W2"].T) * (1.0 - h1**2)
    g[f"{prefix}_W1"] = x.T @ d1
    g[f"{prefix}_b1"] = d1.sum(axis=0)
    return g


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads, max_norm):
    norm = global_norm(grads)
    if max_norm is None or norm <= max_norm or norm == 0.0:
        return grads, norm
    s = max_norm / norm
    return {k: g * s for k, g in grads.items()}, norm


class Adam:
    """Adam with bias correction; moments are plain dicts keyed like the parameters."""

    def __init__(self, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps

    def step(self, params, grads, m, v, t):
        """Descend along ``grads``; returns the new step counter. Updates dicts in place."""
        t += 1
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for k, g in grads.items():
            m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g
            v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g
            params[k] = params[k] - self.lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + self.eps)
        return t
