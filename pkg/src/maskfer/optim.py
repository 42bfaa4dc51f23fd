"""Adam with coupled L2 weight decay, exponential LR schedule, and a
central-finite-difference gradient checker.
"""

from __future__ import annotations

import numpy as np

from .network import TrainingDivergedError


class AdamState:
    """Moments and step counter for one parameter list.

    Weight decay is added to the gradient (coupled L2) and skips biases.
    The learning rate decays per epoch: base_lr * gamma**epoch.
    """

    def __init__(
        self,
        params,
        base_lr=2e-4,
        gamma=0.9,
        weight_decay=1e-4,
        beta1=0.9,
        beta2=0.999,
        eps=1e-8,
    ):
        self.base_lr = base_lr
        self.gamma = gamma
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(arr) for name, arr, _ in params}
        self.v = {name: np.zeros_like(arr) for name, arr, _ in params}

    def lr_at(self, epoch):
        if epoch < 0:
            raise ValueError("epoch must be >= 0")
        return self.base_lr * self.gamma**epoch

    def step(self, params, grads, epoch):
        """One in-place bias-corrected Adam update at the epoch's LR."""
        lr = self.lr_at(epoch)
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for name, arr, is_bias in params:
            g = grads[name]
            if not np.isfinite(g).all():
                raise TrainingDivergedError(f"non-finite gradient for {name}")
            if self.weight_decay and not is_bias:
                g = g + self.weight_decay * arr
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            arr -= lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def grad_check(loss_fn, theta, analytic_grad, step=1e-5, abs_floor=1e-8):
    """Worst relative error between analytic and central-difference gradients.

    loss_fn maps a flat float64 parameter vector to a scalar loss.
    """
    theta = np.asarray(theta, dtype=np.float64)
    analytic_grad = np.asarray(analytic_grad, dtype=np.float64)
    worst = 0.0
    for i in range(theta.size):
        saved = theta[i]
        theta[i] = saved + step
        hi = loss_fn(theta)
        theta[i] = saved - step
        lo = loss_fn(theta)
        theta[i] = saved
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ValueError(f"non-finite loss at coordinate {i}")
        numeric = (hi - lo) / (2.0 * step)
        a = analytic_grad[i]
        err = abs(a - numeric) / max(abs_floor, abs(a), abs(numeric))
        worst = max(worst, err)
    return worst
