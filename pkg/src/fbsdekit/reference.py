"""Reference solutions, error metrics, and convergence-rate fits.

A reference solution decouples the FBSDE with its analytic fields and
applies the forward Euler method on the fine grid of a
:class:`~fbsdekit.brownian.BrownianStore`; the state is recorded at the
coarse nodes and the value/gradient processes are read off the analytic
fields there.  Because approximate and reference paths are driven by the
same increments, the error metrics below are strong (pathwise) errors:

* ``err_x`` and ``err_y``: sup over nodes of the mean squared deviation,
* ``err_z``: time-integrated mean squared deviation over the first ``N``
  nodes, i.e. ``(T / (N Lambda)) sum_{i<N} sum_j |dZ|^2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .brownian import BrownianStore, PathBatch, TimeGrid
from .errors import InvalidArgument, NumericalFailure, UnsupportedProblem

__all__ = ["ErrorReport", "simulate_reference", "compute_errors", "fit_rate"]

_CHUNK_VALUES = 1 << 22


@dataclass(frozen=True)
class ErrorReport:
    """Error metrics of one run plus provenance metadata."""

    err_x: float
    err_y: float
    err_z: float
    total: float
    n_steps: Optional[int] = None
    num_iterations: Optional[int] = None
    num_paths: Optional[int] = None
    method: Optional[str] = None
    seed: Optional[int] = None
    fine_n: Optional[int] = None


def simulate_reference(
    problem, store: BrownianStore, grid: TimeGrid
) -> PathBatch:
    """Euler-decoupled reference paths, recorded at the coarse nodes.

    Streams the fine increments window by window; as a side effect the
    window sums are deposited in the store's coarse cache, so a following
    ``coarsen_increments(store, grid.n)`` costs nothing extra.
    """
    if not problem.has_analytic_solution:
        raise UnsupportedProblem(
            f"problem {problem.name!r} has no analytic decoupling fields"
        )
    if store.fine_n % grid.n != 0:
        raise InvalidArgument(
            f"fine_n={store.fine_n} is not divisible by n={grid.n}"
        )
    if abs(store.horizon - grid.horizon) > 1e-12 * max(1.0, grid.horizon):
        raise InvalidArgument("store and grid disagree on the horizon")
    num_paths, dim, dim_w = store.num_paths, problem.dim_x, problem.dim_w
    window = store.fine_n // grid.n
    h_fine = store.horizon / store.fine_n
    sub = max(1, _CHUNK_VALUES // (num_paths * dim_w))

    x_nodes = np.empty((num_paths, grid.n + 1, dim))
    state = np.broadcast_to(problem.x0, (num_paths, dim)).copy()
    x_nodes[:, 0] = state
    coarse = np.zeros((num_paths, grid.n, dim_w))
    for i in range(grid.n):
        lo = i * window
        for k0 in range(lo, lo + window, sub):
            k1 = min(k0 + sub, lo + window)
            chunk = store.fine_increments(k0, k1)
            coarse[:, i, :] += chunk.sum(axis=1)
            for k in range(k0, k1):
                t = k * h_fine
                u_vals = problem.analytic_u(t, state)
                v_vals = problem.analytic_v(t, state)
                drift = problem.b(t, state, u_vals, v_vals)
                smat = problem.sigma(t, state, u_vals)
                state = (
                    state
                    + drift * h_fine
                    + np.einsum("nic,nc->ni", smat, chunk[:, k - k0, :])
                )
        x_nodes[:, i + 1] = state
    if not np.all(np.isfinite(state)):
        raise NumericalFailure("reference simulation produced non-finite states")
    store._note_coarse(grid.n, coarse)

    y_nodes = np.empty((num_paths, grid.n + 1))
    z_nodes = np.empty((num_paths, grid.n + 1, dim_w))
    for i, t in enumerate(grid.nodes):
        y_nodes[:, i] = problem.analytic_u(t, x_nodes[:, i])
        z_nodes[:, i] = problem.analytic_v(t, x_nodes[:, i])
    return PathBatch(x=x_nodes, y=y_nodes, z=z_nodes)


def compute_errors(
    approx: PathBatch, reference: PathBatch, grid: TimeGrid, **provenance
) -> ErrorReport:
    """Strong error metrics between two path batches on the same grid."""
    if approx.x.shape != reference.x.shape or approx.z.shape != reference.z.shape:
        raise InvalidArgument(
            f"shape mismatch: approx x {approx.x.shape} z {approx.z.shape} vs "
            f"reference x {reference.x.shape} z {reference.z.shape}"
        )
    if approx.num_nodes != grid.n + 1:
        raise InvalidArgument(
            f"batch has {approx.num_nodes} nodes, grid expects {grid.n + 1}"
        )
    sq_x = np.square(approx.x - reference.x).sum(axis=2)  # (paths, nodes)
    sq_y = np.square(approx.y - reference.y)
    sq_z = np.square(approx.z - reference.z).sum(axis=2)
    err_x = float(np.max(sq_x.mean(axis=0)))
    err_y = float(np.max(sq_y.mean(axis=0)))
    num_paths = approx.num_paths
    err_z = float(
        grid.horizon / (grid.n * num_paths) * sq_z[:, : grid.n].sum()
    )
    return ErrorReport(
        err_x=err_x,
        err_y=err_y,
        err_z=err_z,
        total=err_x + err_y + err_z,
        **provenance,
    )


def fit_rate(points) -> float:
    """Least-squares slope of ``log2(err)`` against ``log2(n)``."""
    points = list(points)
    if len(points) < 2:
        raise InvalidArgument("need at least two (n, err) points")
    ns = np.array([float(n) for n, _ in points])
    errs = np.array([float(e) for _, e in points])
    if np.any(errs <= 0.0) or np.any(ns <= 0.0):
        raise InvalidArgument("rate fit needs positive step counts and errors")
    log_n = np.log2(ns)
    log_e = np.log2(errs)
    design = np.column_stack([np.ones_like(log_n), log_n])
    slope = np.linalg.lstsq(design, log_e, rcond=None)[0][1]
    return float(slope)
