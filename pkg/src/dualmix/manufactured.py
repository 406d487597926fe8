"""Closed-form stationary Navier-Stokes solution on (-1, 1)^2.

The velocity is the stationary Taylor-Green type field

    u = (-(m/k) sin(kx) cos(my), cos(kx) sin(my))

for which (u . grad) u is a gradient and -nu Laplace(u) = nu (k^2 + m^2) u.
The pressure cancels the convection:

    p = -(1/2) (|u|^2 + (1 + (m/k)^2) sin^2(kx) sin^2(my)),

which simplifies to -(1/2) ((m/k)^2 sin^2(kx) + sin^2(my)).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ManufacturedSolution:
    k: float = np.pi
    m: float = np.pi / 2
    nu: float = 1.0 / 20.0

    def u(self, x):
        k, m = self.k, self.m
        X, Y = x[..., 0], x[..., 1]
        return np.stack([-(m / k) * np.sin(k * X) * np.cos(m * Y), np.cos(k * X) * np.sin(m * Y)], axis=-1)

    def grad_u(self, x):
        """(grad u)_ij = d u_i / d x_j."""
        k, m = self.k, self.m
        X, Y = x[..., 0], x[..., 1]
        g = np.empty(x.shape[:-1] + (2, 2))
        g[..., 0, 0] = -m * np.cos(k * X) * np.cos(m * Y)
        g[..., 0, 1] = (m * m / k) * np.sin(k * X) * np.sin(m * Y)
        g[..., 1, 0] = -k * np.sin(k * X) * np.sin(m * Y)
        g[..., 1, 1] = m * np.cos(k * X) * np.cos(m * Y)
        return g

    def p(self, x):
        k, m = self.k, self.m
        X, Y = x[..., 0], x[..., 1]
        u = self.u(x)
        return -0.5 * ((u * u).sum(-1) + (1 + (m / k) ** 2) * np.sin(k * X) ** 2 * np.sin(m * Y) ** 2)

    def S(self, x):
        g = self.grad_u(x)
        u = self.u(x)
        return (self.nu * (g + np.swapaxes(g, -1, -2)) - self.p(x)[..., None, None] * np.eye(2)
                - 0.5 * u[..., :, None] * u[..., None, :])

    def f(self, x):
        return self.nu * (self.k**2 + self.m**2) * self.u(x)

    def div_S(self, x):
        """From the momentum equation: div S = (1/2)(grad u) u - f."""
        return 0.5 * np.einsum("...ij,...j->...i", self.grad_u(x), self.u(x)) - self.f(x)

    def traction(self, x, n):
        return np.einsum("...ij,...j->...i", self.S(x), n)

    def stokes(self) -> "StokesManufactured":
        return StokesManufactured(self.k, self.m, self.nu)


@dataclass(frozen=True)
class StokesManufactured(ManufacturedSolution):
    """Same velocity without convection: Bernoulli stress dropped, p from the
    Navier-Stokes pressure, f adjusted to balance grad p."""

    def S(self, x):
        g = self.grad_u(x)
        return self.nu * (g + np.swapaxes(g, -1, -2)) - self.p(x)[..., None, None] * np.eye(2)

    def _grad_p(self, x):
        k, m = self.k, self.m
        X, Y = x[..., 0], x[..., 1]
        # p = -(1/2)((m/k)^2 sin^2(kx) + sin^2(my))
        return np.stack([-0.5 * (m / k) ** 2 * k * np.sin(2 * k * X), -0.5 * m * np.sin(2 * m * Y)], axis=-1)

    def f(self, x):
        return self.nu * (self.k**2 + self.m**2) * self.u(x) + self._grad_p(x)

    def div_S(self, x):
        return -self.f(x)
