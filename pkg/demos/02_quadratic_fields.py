"""Quadratic decoupling fields and the differentiation construction.

A single coefficient vector represents the value field u; the gradient
process field v is not fit separately but computed as grad_u(x)^T
sigma(t, x, u(x)), which is what keeps its Lipschitz constant tied to
the value field's.
"""

import numpy as np

from fbsdekit import QuadraticField, eval_u, eval_v_diff, features, grad_u
from fbsdekit.fields import num_features

dim = 2
rng = np.random.default_rng(0)
field = QuadraticField(
    dim=dim,
    coeffs=rng.normal(size=num_features(dim)),
    trunc_lo=np.full(dim, -2.0),
    trunc_hi=np.full(dim, 2.0),
)

x = np.array([0.4, -1.1])
print("features(x)      :", np.round(features(x, dim), 4))
print("u(x)             :", round(float(eval_u(field, x)), 6))
print("grad u(x)        :", np.round(grad_u(field, x), 6))

# outside the truncation box the field is frozen: constant value, zero slope
far = np.array([5.0, -1.1])
edge = np.array([2.0, -1.1])
print("u(far) == u(edge):", eval_u(field, far) == eval_u(field, edge))
print("grad u(far)      :", grad_u(field, far), "(clamped direction is 0)")


# with sigma = y * I the differentiation construction gives u * grad_u
def sigma(t, xs, y):
    return y[:, None, None] * np.eye(dim)[None, :, :]


v = eval_v_diff(field, sigma, 0.0, x)
print("v(x)             :", np.round(v, 6))
print("u * grad_u       :", np.round(eval_u(field, x) * grad_u(field, x), 6))
