from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        if self.lr == 0.0:
            return
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


class ReduceOnPlateau:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs
    without an improvement larger than ``epsilon`` on a minimised metric."""

    def __init__(self, optimizer, factor=0.2, patience=2, epsilon=1e-4):
        self.optimizer = optimizer
        self.factor, self.patience, self.epsilon = factor, patience, epsilon
        self.best = np.inf
        self.bad_epochs = 0

    def step(self, metric):
        if metric < self.best - self.epsilon:
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.optimizer.lr *= self.factor
                self.bad_epochs = 0
        return self.optimizer.lr
