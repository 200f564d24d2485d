"""Fully-connected networks with hand-written backpropagation (float64).

The Q network is dueling: a shared feature extractor (ReLU on every layer)
feeds a state-value head and an advantage head (ReLU on hidden layers,
linear outputs). Q(s, a) = V(s) + A(s, a) - mean_a' A(s, a').
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

HIDDEN = 256


def _kaiming_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Mlp:
    """Stack of affine layers; ReLU on hidden layers, configurable on the last."""

    def __init__(self, dims: list[int], rng: np.random.Generator,
                 relu_output: bool = False):
        if len(dims) < 2:
            raise ValueError("need at least input and output dims")
        self.dims = list(dims)
        self.relu_output = relu_output
        self.weights = [_kaiming_uniform(rng, dims[i], dims[i + 1])
                        for i in range(len(dims) - 1)]
        self.biases = [np.zeros(dims[i + 1]) for i in range(len(dims) - 1)]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Returns (output, activations) where activations[i] is the input to
        layer i (post-activation of the previous layer)."""
        acts = [x]
        self.last_preacts: list[np.ndarray] = []
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last or self.relu_output:
                self.last_preacts.append(h)
                h = np.maximum(h, 0.0)
            acts.append(h)
        return h, acts

    def backward(self, acts: list[np.ndarray], grad_out: np.ndarray
                 ) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
        """Gradients of a scalar loss given d loss / d output.

        Returns (weight grads, bias grads, d loss / d input).
        """
        gw = [None] * len(self.weights)
        gb = [None] * len(self.biases)
        g = grad_out
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            if i < last or self.relu_output:
                g = g * (acts[i + 1] > 0.0)
            gw[i] = acts[i].T @ g
            gb[i] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return gw, gb, g

    def parameters(self) -> list[np.ndarray]:
        return self.weights + self.biases

    def copy_from(self, other: "Mlp") -> None:
        for dst, src in zip(self.parameters(), other.parameters()):
            dst[...] = src


class DuelingNet:
    """Feature net (two hidden ReLU layers) + value and advantage heads."""

    def __init__(self, obs_dim: int, n_actions: int, rng: np.random.Generator,
                 hidden: int = HIDDEN):
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.hidden = hidden
        self.feature = Mlp([obs_dim, hidden, hidden], rng, relu_output=True)
        self.value = Mlp([hidden, hidden, hidden, 1], rng)
        self.advantage = Mlp([hidden, hidden, hidden, n_actions], rng)

    def layer_dims(self) -> dict:
        return {"feature": self.feature.dims, "value": self.value.dims,
                "advantage": self.advantage.dims}

    def forward(self, obs: np.ndarray) -> tuple[np.ndarray, dict]:
        if obs.ndim != 2 or obs.shape[1] != self.obs_dim:
            raise ValueError(f"expected (batch, {self.obs_dim}) input, got {obs.shape}")
        f, f_acts = self.feature.forward(obs)
        v, v_acts = self.value.forward(f)
        a, a_acts = self.advantage.forward(f)
        q = v + a - a.mean(axis=1, keepdims=True)
        cache = {"f_acts": f_acts, "v_acts": v_acts, "a_acts": a_acts}
        return q, cache

    def q_values(self, obs: np.ndarray) -> np.ndarray:
        return self.forward(np.atleast_2d(obs))[0]

    def backward(self, cache: dict, grad_q: np.ndarray) -> list[np.ndarray]:
        """Parameter gradients in the order of self.parameters()."""
        grad_v = grad_q.sum(axis=1, keepdims=True)
        grad_a = grad_q - grad_q.mean(axis=1, keepdims=True)
        vw, vb, g_f_from_v = self.value.backward(cache["v_acts"], grad_v)
        aw, ab, g_f_from_a = self.advantage.backward(cache["a_acts"], grad_a)
        fw, fb, _ = self.feature.backward(cache["f_acts"], g_f_from_v + g_f_from_a)
        return fw + fb + vw + vb + aw + ab

    def parameters(self) -> list[np.ndarray]:
        return (self.feature.parameters() + self.value.parameters()
                + self.advantage.parameters())

    def copy_from(self, other: "DuelingNet") -> None:
        self.feature.copy_from(other.feature)
        self.value.copy_from(other.value)
        self.advantage.copy_from(other.advantage)


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float = 1e-5,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def squared_loss_and_grad(q: np.ndarray, actions: np.ndarray,
                          targets: np.ndarray, weights: np.ndarray
                          ) -> tuple[float, np.ndarray, np.ndarray]:
    """Weighted mean squared TD error and its gradient w.r.t. the full Q
    output. Returns (loss, grad_q, td_errors)."""
    batch = q.shape[0]
    q_sa = q[np.arange(batch), actions]
    td = q_sa - targets
    loss = float(np.mean(weights * td * td))
    grad_q = np.zeros_like(q)
    grad_q[np.arange(batch), actions] = 2.0 * weights * td / batch
    return loss, grad_q, td


def gradient_check(net: DuelingNet, obs: np.ndarray, actions: np.ndarray,
                   targets: np.ndarray, step: float = 1e-6,
                   kink_tol: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central finite
    differences. Parameters whose perturbation straddles a ReLU kink are
    skipped (the analytic subgradient is ambiguous there)."""
    weights = np.ones(len(actions))
    q, cache = net.forward(obs)

    def near_kink() -> bool:
        for mlp in (net.feature, net.value, net.advantage):
            for pre in mlp.last_preacts:
                if np.any(np.abs(pre) < kink_tol):
                    return True
        return False

    if near_kink():
        # an activation sits on a ReLU kink; finite differences would measure
        # an average of two subgradients there, so callers must resample
        raise ArithmeticError("activation on a ReLU kink; resample inputs")

    _, grad_q, _ = squared_loss_and_grad(q, actions, targets, weights)
    analytic = net.backward(cache, grad_q)

    def loss_at() -> float:
        q2, _ = net.forward(obs)
        loss, _, _ = squared_loss_and_grad(q2, actions, targets, weights)
        return loss

    max_rel = 0.0
    for p, g in zip(net.parameters(), analytic):
        flat_p = p.ravel()
        flat_g = g.ravel()
        for idx in range(flat_p.size):
            orig = flat_p[idx]
            flat_p[idx] = orig + step
            lp = loss_at()
            flat_p[idx] = orig - step
            lm = loss_at()
            flat_p[idx] = orig
            numeric = (lp - lm) / (2.0 * step)
            denom = max(abs(numeric), abs(flat_g[idx]), 1e-8)
            rel = abs(numeric - flat_g[idx]) / denom
            max_rel = max(max_rel, rel)
    return max_rel
