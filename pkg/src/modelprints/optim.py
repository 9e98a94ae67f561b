"""Adam with bias correction, operating on named parameter tensors."""

from __future__ import annotations

import numpy as np


class Adam:
    """Stochastic optimizer state for a dict of ``name -> Tensor`` parameters.

    Moment buffers are zero-initialized float64 and the step counter advances
    by one per ``step()``. Updates are computed in float64 and written back in
    each parameter's storage dtype, which keeps repeated runs bit-identical.
    """

    def __init__(self, params, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        if learning_rate <= 0.0:
            raise ValueError(f"learning_rate must be positive, got {learning_rate}")
        self.params = dict(params)
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.step_count = 0
        self.m = {k: np.zeros(p.shape, dtype=np.float64) for k, p in self.params.items()}
        self.v = {k: np.zeros(p.shape, dtype=np.float64) for k, p in self.params.items()}

    def step(self):
        """Apply one bias-corrected Adam update from each parameter's .grad."""
        self.step_count += 1
        t = self.step_count
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                raise ValueError(f"optimizer_step: parameter {name!r} has no gradient buffer")
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"optimizer_step: non-finite gradient for {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            new = p.data.astype(np.float64) - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)
            p.data = new.astype(p.data.dtype)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()
