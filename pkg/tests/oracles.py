"""Independent reference computations shared by unit and acceptance tests."""

import numpy as np
from scipy import linalg, stats

from flexsac.nn import Mlp


def random_probe(rng, max_width=64, kink_margin=1e-3):
    """A random (net, input, loss weights) triple away from ReLU kinks."""
    while True:
        depth = int(rng.integers(1, 4))
        sizes = [int(rng.integers(1, max_width + 1)) for _ in range(depth + 1)]
        activation = "relu" if rng.random() < 0.5 else "tanh"
        net = Mlp(sizes, rng, activation)
        net.params += rng.normal(0.0, 0.05, net.n_params)   # non-zero biases too
        x = rng.normal(size=(int(rng.integers(1, 5)), sizes[0]))
        net.forward(x)
        pre = net._cache[1]
        if activation == "relu" and any(np.min(np.abs(z)) < kink_margin for z in pre):
            continue
        g = rng.normal(size=(x.shape[0], sizes[-1]))
        return net, x, g


def fd_gradient_error(net, x, g, h=1e-5):
    """Max relative error between backprop and central differences over all params and inputs."""
    net.forward(x)
    grad_p, grad_x = net.backward(g)
    loss = lambda: float(np.sum(g * net.forward(x, keep_cache=False)))
    num_p = np.empty_like(grad_p)
    for i in range(net.n_params):
        old = net.params[i]
        net.params[i] = old + h
        lp = loss()
        net.params[i] = old - h
        lm = loss()
        net.params[i] = old
        num_p[i] = (lp - lm) / (2 * h)
    num_x = np.empty_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        lp = loss()
        x[idx] = old - h
        lm = loss()
        x[idx] = old
        num_x[idx] = (lp - lm) / (2 * h)
    a = np.concatenate([grad_p, grad_x.ravel()])
    n = np.concatenate([num_p, num_x.ravel()])
    return float(np.max(np.abs(a - n)) / max(np.max(np.abs(a)), np.max(np.abs(n)), 1e-8))


def two_node_free_response(coeffs, t0, t_out, seconds):
    """Air and mass temperatures of the unforced two-node network via eigen-decomposition.

    Solves dx/dt = A (x - x_eq) with x_eq = (T_out, T_out) in closed form.
    """
    a, _ = coeffs.system()
    lam, vec = np.linalg.eig(a)
    c = np.linalg.solve(vec, np.asarray(t0, dtype=float) - t_out)
    t = np.atleast_1d(np.asarray(seconds, dtype=float))
    return t_out + (vec @ (c[:, None] * np.exp(np.outer(lam, t)))).real.T


def uniform_chi2_pvalue(counts):
    counts = np.asarray(counts, dtype=float)
    return float(stats.chisquare(counts).pvalue)
