"""Benchmark FBSDEs with known decoupling fields.

Each problem packages the forward coefficients ``b`` and ``sigma``, the
driver ``f``, the terminal condition ``g``, and (when available) the
analytic decoupling fields ``u`` and ``v`` with
``v(t, x) = grad_x u(t, x) sigma(t, x, u(t, x))``.  The backward component
is scalar throughout; the gradient process is a ``dim_w`` row vector.

Coefficient callables are vectorized over paths:

* ``b(t, x, y, z)``     with ``x: (n, dim_x)``, ``y: (n,)``,
  ``z: (n, dim_w)`` returning ``(n, dim_x)``,
* ``sigma(t, x, y)``    returning ``(n, dim_x, dim_w)``,
* ``f(t, x, y, z)``     returning ``(n,)``,
* ``g(x)``, ``grad_g(x)`` returning ``(n,)`` and ``(n, dim_x)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .diagnostics import AssumptionConstants
from .errors import InvalidArgument

__all__ = [
    "ProblemSpec",
    "example1_problem",
    "example2_problem",
    "decoupled_test_problem",
    "example1_assumption_constants",
]


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    dim_x: int
    dim_w: int
    x0: np.ndarray
    horizon: float
    b: Callable
    sigma: Callable
    f: Callable
    g: Callable
    grad_g: Optional[Callable] = None
    analytic_u: Optional[Callable] = None
    analytic_v: Optional[Callable] = None

    @property
    def has_analytic_solution(self) -> bool:
        return self.analytic_u is not None and self.analytic_v is not None


def example1_problem(
    kappa_y: float = 0.1,
    kappa_z: float = 0.1,
    sigma_bar: float = 1.0,
    rate: float = 1.0,
    dim: int = 4,
    horizon: float = 0.25,
    x0_scalar: float = np.pi / 4,
) -> ProblemSpec:
    """Fully coupled drift with Y-coupled diffusion.

    The drift feels both Y and Z (``kappa_y``, ``kappa_z`` set the coupling
    strengths), the diffusion is ``sigma_bar * y`` times the identity, and
    the exact value process is ``exp(-rate (T - t)) sum_i sin(x_i)``.
    """
    if dim < 1:
        raise InvalidArgument(f"dim must be positive, got {dim}")
    d = int(dim)
    T = float(horizon)
    eye = np.eye(d)

    def b(t, x, y, z):
        return kappa_y * sigma_bar * y[:, None] + kappa_z * z

    def sigma(t, x, y):
        return sigma_bar * y[:, None, None] * eye[None, :, :]

    def f(t, x, y, z):
        s = np.sin(x).sum(axis=1)
        decay3 = np.exp(-3.0 * rate * (T - t))
        return (
            -rate * y
            + 0.5 * decay3 * sigma_bar**2 * s**3
            - kappa_y * z.sum(axis=1)
            - kappa_z * sigma_bar * decay3 * s * np.square(np.cos(x)).sum(axis=1)
        )

    def g(x):
        return np.sin(x).sum(axis=1)

    def grad_g(x):
        return np.cos(x)

    def analytic_u(t, x):
        return np.exp(-rate * (T - t)) * np.sin(x).sum(axis=1)

    def analytic_v(t, x):
        s = np.sin(x).sum(axis=1)
        return np.exp(-2.0 * rate * (T - t)) * sigma_bar * s[:, None] * np.cos(x)

    return ProblemSpec(
        name="example1",
        dim_x=d,
        dim_w=d,
        x0=np.full(d, float(x0_scalar)),
        horizon=T,
        b=b,
        sigma=sigma,
        f=f,
        g=g,
        grad_g=grad_g,
        analytic_u=analytic_u,
        analytic_v=analytic_v,
    )


def example2_problem(horizon: float = 0.25, x0_scalar: float = 1.5) -> ProblemSpec:
    """One-dimensional drift coupled in Z only (no Y in the drift).

    The exact value process is ``sin(t + x)`` and the gradient process is
    ``cos^2(t + x)``.
    """
    T = float(horizon)

    def b(t, x, y, z):
        w = t + x
        return -0.5 * np.sin(w) * np.cos(w) * (np.square(np.sin(w)) + z)

    def sigma(t, x, y):
        return np.cos(t + x)[:, :, None]

    def f(t, x, y, z):
        return y * z[:, 0] - np.cos(t + x[:, 0])

    def g(x):
        return np.sin(T + x[:, 0])

    def grad_g(x):
        return np.cos(T + x)

    def analytic_u(t, x):
        return np.sin(t + x[:, 0])

    def analytic_v(t, x):
        return np.square(np.cos(t + x))

    return ProblemSpec(
        name="example2",
        dim_x=1,
        dim_w=1,
        x0=np.array([float(x0_scalar)]),
        horizon=T,
        b=b,
        sigma=sigma,
        f=f,
        g=g,
        grad_g=grad_g,
        analytic_u=analytic_u,
        analytic_v=analytic_v,
    )


def decoupled_test_problem(
    kind: str, horizon: float = 0.25, value: float = 1.0
) -> ProblemSpec:
    """Degenerate problems with closed-form fields, used as regression oracles.

    ``brownian-linear`` is standard Brownian motion with ``g(x) = x``, so
    the value process is the martingale ``u(t, x) = x`` with unit gradient
    process.  ``constant`` has ``g`` constant, so the value process is that
    constant and the gradient process vanishes.
    """
    T = float(horizon)

    def b(t, x, y, z):
        return np.zeros_like(x)

    def sigma(t, x, y):
        return np.ones((x.shape[0], 1, 1))

    def f(t, x, y, z):
        return np.zeros(x.shape[0])

    if kind == "brownian-linear":
        return ProblemSpec(
            name="brownian-linear",
            dim_x=1,
            dim_w=1,
            x0=np.array([0.0]),
            horizon=T,
            b=b,
            sigma=sigma,
            f=f,
            g=lambda x: x[:, 0].copy(),
            grad_g=lambda x: np.ones_like(x),
            analytic_u=lambda t, x: x[:, 0].copy(),
            analytic_v=lambda t, x: np.ones((x.shape[0], 1)),
        )
    if kind == "constant":
        return ProblemSpec(
            name="constant",
            dim_x=1,
            dim_w=1,
            x0=np.array([0.0]),
            horizon=T,
            b=b,
            sigma=sigma,
            f=f,
            g=lambda x: np.full(x.shape[0], value),
            grad_g=lambda x: np.zeros_like(x),
            analytic_u=lambda t, x: np.full(x.shape[0], value),
            analytic_v=lambda t, x: np.zeros((x.shape[0], 1)),
        )
    raise InvalidArgument(f"unknown test problem kind {kind!r}")


def example1_assumption_constants(
    kappa_y: float = 0.1,
    kappa_z: float = 0.1,
    sigma_bar: float = 1.0,
    rate: float = 1.0,
    dim: int = 4,
    horizon: float = 0.25,
) -> AssumptionConstants:
    """Effective Lipschitz/growth constants for the fully coupled example.

    Operator norms are used for the matrix-valued diffusion, and the
    Y-argument is restricted to the range the truncated fields can take,
    ``|y| <= dim`` (the terminal condition is a sum of ``dim`` sines and
    the exact value process only shrinks it).  Squared Lipschitz constants
    of multi-term coefficients carry the usual term-count factors from
    ``(a+b)^2 <= 2a^2 + 2b^2``.
    """
    d = float(dim)
    y_max = d * max(sigma_bar, 1.0)
    # x-gradient of the driver: (3/2) s^2 |grad s| for the cubic term plus
    # the kappa_z correction, with |s| <= d and |grad s| <= sqrt(d).
    f_x_lip = 1.5 * sigma_bar**2 * d**2 * np.sqrt(d) + kappa_z * sigma_bar * (
        np.sqrt(d) * d + 2.0 * d
    )
    return AssumptionConstants(
        k_b=0.0,
        k_f=-rate,
        K=max(2.0 * kappa_y**2 * sigma_bar**2 * d, 4.0 * rate**2),
        b_y=2.0 * kappa_y**2 * sigma_bar**2 * d,
        b_z=2.0 * kappa_z**2,
        sigma_x=0.0,
        sigma_y=sigma_bar**2,
        f_x=4.0 * f_x_lip**2,
        f_z=4.0 * kappa_y**2 * d,
        g_x=d,
        b_0=0.0,
        sigma_0=0.0,
        f_0=4.0 * (kappa_z * sigma_bar * d * d) ** 2,
        g_0=d**2,
        Sigma=(sigma_bar * y_max) ** 2,
        T=float(horizon),
    )
