import numpy as np

from .errors import ContractError


class Adam:
    """Adam with bias correction.

    Parameters are updated in place; ``step`` refuses to run when any
    parameter lacks a gradient, so silently dead branches surface early.
    Call :meth:`zero_grad` after each step.
    """

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        if not self.params:
            raise ContractError("Adam received no parameters")
        self.lr = float(lr)
        self.betas = (float(betas[0]), float(betas[1]))
        self.eps = float(eps)
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        for i, p in enumerate(self.params):
            if p.grad is None:
                name = p.name or f"#{i}"
                raise ContractError(f"parameter {name} has no gradient; run backward() first")
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.data -= update.astype(p.data.dtype)

    def state_dict(self):
        state = {"step": self.step_count}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            state[f"m.{i}"] = m.copy()
            state[f"v.{i}"] = v.copy()
        return state

    def load_state_dict(self, state):
        self.step_count = int(state["step"])
        for i, p in enumerate(self.params):
            m = np.asarray(state[f"m.{i}"])
            v = np.asarray(state[f"v.{i}"])
            if m.shape != p.data.shape or v.shape != p.data.shape:
                raise ContractError(f"optimizer state for parameter #{i} has the wrong shape")
            self.m[i] = m.astype(p.data.dtype, copy=True)
            self.v[i] = v.astype(p.data.dtype, copy=True)

