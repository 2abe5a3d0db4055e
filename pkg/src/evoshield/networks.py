"""Small dense networks with hand-written backprop, in float64 numpy.

Everything here is deliberately explicit: forward passes cache the
activations they need, backward passes return both parameter gradients
and the gradient with respect to the input (the latter feeds the policy
gradient through the critic's action input).
"""

from __future__ import annotations

import numpy as np

__all__ = ["DenseNetwork", "AdamOptimizer", "soft_update"]


class DenseNetwork:
    """Fully connected net with tanh hidden layers.

    ``out_scale=None`` gives a linear output; a float s gives s*tanh(.),
    bounding the output to (-s, s). Hidden weights start uniform in
    +-1/sqrt(fan_in); the output layer starts uniform in +-3e-3 so initial
    outputs sit near zero.
    """

    def __init__(self, layer_sizes, rng, out_scale: float | None = None):
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.layer_sizes = tuple(int(n) for n in layer_sizes)
        self.out_scale = out_scale
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        last = len(self.layer_sizes) - 2
        for i, (n_in, n_out) in enumerate(zip(self.layer_sizes, self.layer_sizes[1:])):
            bound = 3e-3 if i == last else 1.0 / np.sqrt(n_in)
            self.weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
            self.biases.append(rng.uniform(-bound, bound, size=n_out))

    # parameters are exposed as one flat list so optimizers and soft
    # updates can treat both nets uniformly
    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "DenseNetwork":
        clone = object.__new__(DenseNetwork)
        clone.layer_sizes = self.layer_sizes
        clone.out_scale = self.out_scale
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward_cached(x)
        return y

    def forward_cached(self, x: np.ndarray):
        """Returns (output, cache) with x of shape (batch, n_in)."""
        a = np.asarray(x, dtype=float)
        acts = [a]
        n_layers = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            if i < n_layers - 1:
                a = np.tanh(z)
            elif self.out_scale is None:
                a = z
            else:
                a = self.out_scale * np.tanh(z)
            acts.append(a)
        return a, acts

    def backward(self, d_out: np.ndarray, cache):
        """Backprop an upstream gradient through the cached forward pass.

        Returns (grads, d_input) where grads aligns with ``params``.
        """
        acts = cache
        y = acts[-1]
        if self.out_scale is None:
            dz = np.asarray(d_out, dtype=float)
        else:
            # d/dz [s*tanh(z)] = s - y^2/s
            dz = d_out * (self.out_scale - y * y / self.out_scale)
        grad_w: list[np.ndarray] = [None] * len(self.weights)
        grad_b: list[np.ndarray] = [None] * len(self.biases)
        for i in range(len(self.weights) - 1, -1, -1):
            a_prev = acts[i]
            grad_w[i] = a_prev.T @ dz
            grad_b[i] = dz.sum(axis=0)
            da = dz @ self.weights[i].T
            if i > 0:
                dz = da * (1.0 - acts[i] * acts[i])  # tanh'
        grads = []
        for gw, gb in zip(grad_w, grad_b):
            grads.append(gw)
            grads.append(gb)
        return grads, da


class AdamOptimizer:
    """Adam over a list of parameter arrays (updated in place)."""

    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def soft_update(target: DenseNetwork, online: DenseNetwork, rate: float) -> None:
    """target <- rate*online + (1-rate)*target, elementwise."""
    for pt, po in zip(target.params, online.params):
        pt *= 1.0 - rate
        pt += rate * po
