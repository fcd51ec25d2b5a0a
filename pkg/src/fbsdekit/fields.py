"""Quadratic decoupling fields and their evaluation.

A field is a polynomial of total degree two in the state.  Features are
ordered as ``[1, x_1..x_d, x_1^2..x_d^2, x_i*x_k for i<k lexicographic]``,
giving ``P = 1 + 2d + d(d-1)/2`` coefficients.  Inputs are clamped to the
field's truncation box before the features are formed, so the represented
function is constant (and its gradient zero) along any clamped direction
and therefore globally Lipschitz.

Two parameterizations of the gradient process are supported:

* the differentiation form evaluates ``grad_u(x)^T sigma(t, x, u(x))``,
  reusing the Y-field's coefficients, and
* the direct form carries an independent coefficient matrix per component.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

__all__ = [
    "QuadraticField",
    "DirectZField",
    "num_features",
    "features",
    "grad_features",
    "eval_u",
    "grad_u",
    "eval_v_diff",
    "eval_v_direct",
    "zero_field",
    "zero_zfield",
    "field_to_record",
    "field_from_record",
]

_FORMAT_VERSION = 1


def num_features(dim: int) -> int:
    return 1 + 2 * dim + dim * (dim - 1) // 2


def _cross_pairs(dim):
    return [(i, k) for i in range(dim) for k in range(i + 1, dim)]


@dataclass(frozen=True)
class QuadraticField:
    """Scalar quadratic field with a truncation box."""

    dim: int
    coeffs: np.ndarray
    trunc_lo: np.ndarray
    trunc_hi: np.ndarray

    def __post_init__(self):
        if self.coeffs.shape != (num_features(self.dim),):
            raise InvalidArgument(
                f"expected {num_features(self.dim)} coefficients for dim="
                f"{self.dim}, got shape {self.coeffs.shape}"
            )
        if np.any(self.trunc_lo >= self.trunc_hi):
            raise InvalidArgument("truncation box must have positive widths")


@dataclass(frozen=True)
class DirectZField:
    """Gradient-process field with one coefficient column per component."""

    dim: int
    dim_w: int
    coeffs: np.ndarray
    trunc_lo: np.ndarray
    trunc_hi: np.ndarray

    def __post_init__(self):
        if self.coeffs.shape != (num_features(self.dim), self.dim_w):
            raise InvalidArgument(
                f"expected coefficient shape ({num_features(self.dim)}, "
                f"{self.dim_w}), got {self.coeffs.shape}"
            )


def _as_batch(x, dim):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        if x.shape[0] != dim:
            raise InvalidArgument(f"point has dimension {x.shape[0]}, expected {dim}")
        return x[None, :], True
    if x.ndim != 2 or x.shape[1] != dim:
        raise InvalidArgument(f"expected shape (paths, {dim}), got {x.shape}")
    return x, False


def features(x, dim: int) -> np.ndarray:
    """Feature vector(s) in the documented ordering; no clamping applied."""
    x, single = _as_batch(x, dim)
    n = x.shape[0]
    out = np.empty((n, num_features(dim)))
    out[:, 0] = 1.0
    out[:, 1 : 1 + dim] = x
    out[:, 1 + dim : 1 + 2 * dim] = x * x
    for p, (i, k) in enumerate(_cross_pairs(dim)):
        out[:, 1 + 2 * dim + p] = x[:, i] * x[:, k]
    return out[0] if single else out


def grad_features(x, dim: int) -> np.ndarray:
    """Jacobian of the features: shape ``(paths, P, dim)``; no clamping."""
    x, single = _as_batch(x, dim)
    n = x.shape[0]
    out = np.zeros((n, num_features(dim), dim))
    for k in range(dim):
        out[:, 1 + k, k] = 1.0
        out[:, 1 + dim + k, k] = 2.0 * x[:, k]
    for p, (i, k) in enumerate(_cross_pairs(dim)):
        out[:, 1 + 2 * dim + p, i] = x[:, k]
        out[:, 1 + 2 * dim + p, k] = x[:, i]
    return out[0] if single else out


def clamp(x, field) -> np.ndarray:
    return np.clip(x, field.trunc_lo, field.trunc_hi)


def _interior_mask(x, field):
    return (x > field.trunc_lo) & (x < field.trunc_hi)


def eval_u(field: QuadraticField, x) -> np.ndarray:
    """Value of the clamped field at ``x`` (scalar per path)."""
    x, single = _as_batch(x, field.dim)
    vals = features(clamp(x, field), field.dim) @ field.coeffs
    return vals[0] if single else vals


def grad_u(field: QuadraticField, x) -> np.ndarray:
    """Gradient of the clamped field; zero along clamped directions."""
    x, single = _as_batch(x, field.dim)
    xc = clamp(x, field)
    grads = np.einsum("npk,p->nk", grad_features(xc, field.dim), field.coeffs)
    grads *= _interior_mask(x, field)
    return grads[0] if single else grads


def eval_v_diff(field: QuadraticField, sigma, t: float, x) -> np.ndarray:
    """Gradient process via differentiation: ``grad_u^T sigma(t, x, u)``.

    ``sigma(t, x, y)`` must return diffusion matrices of shape
    ``(paths, dim, dim_w)`` for batched ``x`` of shape ``(paths, dim)``.
    """
    x, single = _as_batch(x, field.dim)
    y = eval_u(field, x)
    smat = np.asarray(sigma(t, x, y), dtype=np.float64)
    vals = np.einsum("ni,nic->nc", grad_u(field, x), smat)
    return vals[0] if single else vals


def eval_v_direct(field: DirectZField, x) -> np.ndarray:
    """Gradient process from an independently fitted coefficient matrix."""
    x, single = _as_batch(x, field.dim)
    vals = features(clamp(x, field), field.dim) @ field.coeffs
    return vals[0] if single else vals


def default_truncation_box(x0, sigma_sq_bound: float, horizon: float):
    """Box centered at ``x0`` with half-width ``max(3, 6 sqrt(S T))``.

    ``sigma_sq_bound`` is an estimate of the squared diffusion magnitude
    near the start point; the width covers essentially all paths at the
    scales this estimate implies.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    half = max(3.0, 6.0 * np.sqrt(max(sigma_sq_bound, 0.0) * horizon))
    return x0 - half, x0 + half


def zero_field(dim: int, trunc_lo, trunc_hi) -> QuadraticField:
    return QuadraticField(
        dim=dim,
        coeffs=np.zeros(num_features(dim)),
        trunc_lo=np.asarray(trunc_lo, dtype=np.float64),
        trunc_hi=np.asarray(trunc_hi, dtype=np.float64),
    )


def zero_zfield(dim: int, dim_w: int, trunc_lo, trunc_hi) -> DirectZField:
    return DirectZField(
        dim=dim,
        dim_w=dim_w,
        coeffs=np.zeros((num_features(dim), dim_w)),
        trunc_lo=np.asarray(trunc_lo, dtype=np.float64),
        trunc_hi=np.asarray(trunc_hi, dtype=np.float64),
    )


def field_to_record(field, time_index: int) -> dict:
    """JSON-ready record for checkpointing one per-step field."""
    record = {
        "version": _FORMAT_VERSION,
        "time_index": int(time_index),
        "dim": field.dim,
        "coeffs": np.asarray(field.coeffs).tolist(),
        "trunc_lo": np.asarray(field.trunc_lo).tolist(),
        "trunc_hi": np.asarray(field.trunc_hi).tolist(),
    }
    if isinstance(field, DirectZField):
        record["dim_w"] = field.dim_w
    return record


def field_from_record(record: dict):
    if record.get("version") != _FORMAT_VERSION:
        raise InvalidArgument(f"unknown field record version {record.get('version')}")
    common = dict(
        dim=int(record["dim"]),
        trunc_lo=np.asarray(record["trunc_lo"], dtype=np.float64),
        trunc_hi=np.asarray(record["trunc_hi"], dtype=np.float64),
    )
    coeffs = np.asarray(record["coeffs"], dtype=np.float64)
    if "dim_w" in record:
        return DirectZField(coeffs=coeffs, dim_w=int(record["dim_w"]), **common)
    return QuadraticField(coeffs=coeffs, **common)
