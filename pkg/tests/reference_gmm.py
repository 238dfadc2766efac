"""Straight-line scalar reference for the adaptive mixture, used as the
oracle in equivalence tests. Deliberately independent of the package
implementation: plain Python floats and lists, no numpy state."""

import math

SEED_STEP = 0.1


class ReferenceMixture:
    def __init__(self, k, alpha, theta=0.7, deviation=2.5, var_floor=0.05, init_var=1.5):
        self.k = k
        self.alpha = alpha
        self.theta = theta
        self.deviation = deviation
        self.var_floor = var_floor
        self.init_var = init_var
        self.w = []
        self.mu = []
        self.var = []
        self.seeded = False

    def _seed(self, x):
        self.w = [1.0 / self.k] * self.k
        self.var = [self.init_var] * self.k
        self.mu = []
        for j in range(self.k):
            half = (j + 1) // 2
            off = SEED_STEP * half if j % 2 == 1 else -SEED_STEP * half
            self.mu.append(x + off)
        self.seeded = True

    def _within(self, x, i):
        return abs(x - self.mu[i]) <= self.deviation * math.sqrt(self.var[i])

    def step(self, x):
        """Consume one value; returns True when labeled foreground."""
        if not self.seeded:
            self._seed(x)
        k = self.k

        first = -1
        for i in range(k):
            if self._within(x, i):
                first = i
                break

        cum = 0.0
        foreground = True
        for i in range(k):
            cum += self.w[i]
            if self._within(x, i):
                foreground = False
            if cum >= self.theta:
                break

        if first < 0:
            self.mu[k - 1] = x
            self.var[k - 1] = self.init_var
            self.w[k - 1] = 1.0 / k
            s = 0.0
            for wi in self.w:
                s += wi
            self.w = [wi / s for wi in self.w]
        else:
            self.w = [(1.0 - self.alpha) * wi for wi in self.w]
            self.w[first] += self.alpha
            s = 0.0
            for wi in self.w:
                s += wi
            self.w = [wi / s for wi in self.w]
            rho = self.alpha / self.w[first]
            m_new = (1.0 - rho) * self.mu[first] + rho * x
            self.mu[first] = m_new
            v_new = (1.0 - rho) * self.var[first] + rho * (x - m_new) ** 2
            self.var[first] = v_new if v_new > self.var_floor else self.var_floor

        order = sorted(
            range(k), key=lambda i: -(self.w[i] / math.sqrt(self.var[i]))
        )
        self.w = [self.w[i] for i in order]
        self.mu = [self.mu[i] for i in order]
        self.var = [self.var[i] for i in order]
        return foreground

    def density(self, x):
        total = 0.0
        for wi, mi, vi in zip(self.w, self.mu, self.var):
            total += wi * math.exp(-0.5 * (x - mi) ** 2 / vi) / math.sqrt(2.0 * math.pi * vi)
        return total
