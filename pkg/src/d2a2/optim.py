"""Adam with bias-corrected moments and a fixed learning rate.

m = b1*m + (1-b1)*g;  v = b2*v + (1-b2)*g^2
theta -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)

Moment buffers and the step counter live on the Parameter, so checkpoint
cadence and optimizer state stay attached to the model's parameters.
"""

import numpy as np


class NonFiniteGradient(RuntimeError):
    def __init__(self, name):
        super().__init__(f"non-finite gradient for parameter '{name}'; step aborted")
        self.parameter = name


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps

    def step(self):
        # validate all gradients first: a bad one must not half-apply a step
        for p in self.params:
            if p.grad is not None and not np.isfinite(p.grad).all():
                raise NonFiniteGradient(p.name)
        for p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if p.opt_m is None:
                p.opt_m = np.zeros_like(p.data)
                p.opt_v = np.zeros_like(p.data)
            p.opt_t += 1
            p.opt_m = self.beta1 * p.opt_m + (1.0 - self.beta1) * g
            p.opt_v = self.beta2 * p.opt_v + (1.0 - self.beta2) * (g * g)
            m_hat = p.opt_m / (1.0 - self.beta1 ** p.opt_t)
            v_hat = p.opt_v / (1.0 - self.beta2 ** p.opt_t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
