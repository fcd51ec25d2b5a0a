"""Per-time-step least-squares fits for the backward pass.

Two fitting strategies are provided.  ``fit_step_differentiation`` solves
the single joint optimization

    min over theta of  E | Y_next - ( u(X; theta) - h f(t, X, y, z)
                                      + v(X; theta) dW ) |^2

with ``v = grad_u^T sigma`` tied to the same coefficients, by fixed-point
linearization: the driver arguments and the diffusion are frozen at the
current iterate, the model is then linear in ``theta`` and solved exactly,
and the frozen quantities are refreshed.  ``fit_step_direct`` is the
two-regression baseline: the gradient process is regressed from
``h^-1 Y_next dW`` with its own coefficients, then the value process from
``Y_next + h f``.

Gram matrices are accumulated over fixed-size ordered path chunks with
``numpy.einsum`` (no BLAS reduction), so results are bit-identical no
matter how many threads the BLAS carries.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import InvalidArgument, NumericalFailure, RankDeficiencyError
from .fields import (
    DirectZField,
    QuadraticField,
    eval_u,
    eval_v_diff,
    features,
    grad_features,
    num_features,
)

__all__ = [
    "RegressionConfig",
    "solve_linear_lsq",
    "fit_step_differentiation",
    "fit_step_direct",
]

logger = logging.getLogger("fbsdekit.regression")

_F_MODES = ("implicit-yz", "explicit-ynext")
_CHUNK = 4096


@dataclass(frozen=True)
class RegressionConfig:
    """Knobs of the per-step fits.

    ``ridge`` scales a Tikhonov term by ``trace(Gram)/P`` so it is
    invariant under feature rescaling.  ``f_mode`` selects the driver's
    value argument during fitting: the current field iterate
    (``implicit-yz``) or the next-step values (``explicit-ynext``).
    """

    ridge: float = 1e-10
    inner_iters: int = 3
    f_mode: str = "implicit-yz"

    def __post_init__(self):
        if self.ridge < 0.0:
            raise InvalidArgument("ridge must be nonnegative")
        if self.inner_iters < 1:
            raise InvalidArgument("inner_iters must be at least 1")
        if self.f_mode not in _F_MODES:
            raise InvalidArgument(f"f_mode must be one of {_F_MODES}")


def _chunked_gram(design, targets):
    n, p = design.shape
    gram = np.zeros((p, p))
    rhs = np.zeros(p)
    for lo in range(0, n, _CHUNK):
        block = design[lo : lo + _CHUNK]
        gram += np.einsum("np,nq->pq", block, block, optimize=False)
        rhs += np.einsum("np,n->p", block, targets[lo : lo + _CHUNK], optimize=False)
    return gram, rhs


def solve_linear_lsq(design, targets, ridge: float = 0.0) -> np.ndarray:
    """Minimize ``|targets - design @ c|^2 + lam |c|^2`` exactly.

    ``lam = ridge * trace(design^T design) / P``.  Solved through the
    normal equations by Cholesky; a numerically singular Gram matrix with
    ``ridge = 0`` raises :class:`RankDeficiencyError`.
    """
    design = np.asarray(design, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if design.ndim != 2 or targets.shape != (design.shape[0],):
        raise InvalidArgument(
            f"design {design.shape} and targets {targets.shape} do not align"
        )
    if ridge < 0.0:
        raise InvalidArgument("ridge must be nonnegative")
    if not (np.all(np.isfinite(design)) and np.all(np.isfinite(targets))):
        raise NumericalFailure("non-finite values in regression inputs")
    gram, rhs = _chunked_gram(design, targets)
    p = design.shape[1]
    lam = ridge * np.trace(gram) / p
    if lam > 0.0:
        gram = gram + lam * np.eye(p)
    try:
        coeffs = cho_solve(cho_factor(gram, lower=True), rhs)
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError(
            "normal equations are numerically singular; pass a positive ridge"
        ) from exc
    if not np.all(np.isfinite(coeffs)):
        raise RankDeficiencyError(
            "normal equations produced non-finite coefficients; "
            "pass a positive ridge"
        )
    return coeffs


def _masked_grad_features(x, lo, hi, dim):
    xc = np.clip(x, lo, hi)
    jac = grad_features(xc, dim)
    jac *= ((x > lo) & (x < hi))[:, None, :]
    return xc, jac


def _joint_loss(problem, t, h, x, y_next, dw, field):
    u_vals = eval_u(field, x)
    v_vals = eval_v_diff(field, problem.sigma, t, x)
    pred = (
        u_vals
        - h * problem.f(t, x, u_vals, v_vals)
        + np.einsum("nc,nc->n", v_vals, dw)
    )
    return float(np.mean(np.square(y_next - pred)))


def fit_step_differentiation(
    problem,
    t: float,
    x,
    y_next,
    dw,
    warm_start: QuadraticField,
    cfg: RegressionConfig,
    h: float,
    step: int | None = None,
    loss_history: list | None = None,
) -> QuadraticField:
    """Fit the value field with the gradient process tied by differentiation.

    ``warm_start`` supplies the initial frozen iterate and the truncation
    box of the returned field.  The linearized subproblem is re-solved
    ``cfg.inner_iters`` times; the empirical joint loss is tracked (pass a
    list as ``loss_history`` to collect it) and material increases are
    logged.
    """
    x = np.asarray(x, dtype=np.float64)
    y_next = np.asarray(y_next, dtype=np.float64)
    dw = np.asarray(dw, dtype=np.float64)
    dim = warm_start.dim
    lo, hi = warm_start.trunc_lo, warm_start.trunc_hi
    xc, jac = _masked_grad_features(x, lo, hi, dim)
    phi = features(xc, dim)

    field = warm_start
    y_bar = eval_u(field, x)
    z_bar = eval_v_diff(field, problem.sigma, t, x)
    last_loss = None
    losses = loss_history if loss_history is not None else []
    loss_floor = 1e-12 * (1.0 + float(np.mean(np.square(y_next))))
    for _ in range(cfg.inner_iters):
        sigma_bar = np.asarray(problem.sigma(t, x, y_bar), dtype=np.float64)
        if not np.all(np.isfinite(sigma_bar)):
            raise NumericalFailure(
                f"diffusion evaluated non-finite at t={t}", step=step
            )
        design = phi + np.einsum("npk,nkc,nc->np", jac, sigma_bar, dw)
        if cfg.f_mode == "implicit-yz":
            drift = problem.f(t, x, y_bar, z_bar)
        else:
            drift = problem.f(t, x, y_next, z_bar)
        targets = y_next + h * drift
        coeffs = solve_linear_lsq(design, targets, cfg.ridge)
        field = QuadraticField(dim=dim, coeffs=coeffs, trunc_lo=lo, trunc_hi=hi)
        y_bar = eval_u(field, x)
        z_bar = eval_v_diff(field, problem.sigma, t, x)
        loss = _joint_loss(problem, t, h, x, y_next, dw, field)
        losses.append(loss)
        if last_loss is not None and loss > last_loss:
            # the linearization is not a guaranteed descent step; surface
            # only increases that are material relative to the target scale
            material = loss > 1.05 * last_loss and loss - last_loss > loss_floor
            logger.log(
                logging.WARNING if material else logging.DEBUG,
                "joint loss increased at t=%s (step %s): %.6e -> %.6e",
                t, step, last_loss, loss,
            )
        last_loss = loss
    return field


def fit_step_direct(
    problem,
    t: float,
    x,
    y_next,
    dw,
    trunc_lo,
    trunc_hi,
    cfg: RegressionConfig,
    h: float,
    step: int | None = None,
):
    """Two-regression baseline: fit the gradient process from the
    martingale increment ``h^-1 Y_next dW`` (componentwise), then the
    value process against ``Y_next + h f``.

    Returns ``(value field, gradient field)``.
    """
    x = np.asarray(x, dtype=np.float64)
    y_next = np.asarray(y_next, dtype=np.float64)
    dw = np.asarray(dw, dtype=np.float64)
    dim = x.shape[1]
    dim_w = dw.shape[1]
    trunc_lo = np.asarray(trunc_lo, dtype=np.float64)
    trunc_hi = np.asarray(trunc_hi, dtype=np.float64)
    phi = features(np.clip(x, trunc_lo, trunc_hi), dim)

    beta = np.empty((num_features(dim), dim_w))
    for comp in range(dim_w):
        beta[:, comp] = solve_linear_lsq(phi, y_next * dw[:, comp] / h, cfg.ridge)
    zfield = DirectZField(
        dim=dim, dim_w=dim_w, coeffs=beta, trunc_lo=trunc_lo, trunc_hi=trunc_hi
    )
    z_vals = phi @ beta

    if cfg.f_mode == "explicit-ynext":
        targets = y_next + h * problem.f(t, x, y_next, z_vals)
        alpha = solve_linear_lsq(phi, targets, cfg.ridge)
    else:
        y_arg = y_next
        alpha = None
        for _ in range(cfg.inner_iters):
            targets = y_next + h * problem.f(t, x, y_arg, z_vals)
            alpha = solve_linear_lsq(phi, targets, cfg.ridge)
            y_arg = phi @ alpha
    ufield = QuadraticField(
        dim=dim, coeffs=alpha, trunc_lo=trunc_lo, trunc_hi=trunc_hi
    )
    return ufield, zfield
