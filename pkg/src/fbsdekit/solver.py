"""Markovian iteration for FBSDEs with drift coupled in Y and Z.

One iteration simulates the forward Euler scheme with the decoupling
fields of the previous iteration (zero fields initially), then sweeps
backward through the time steps refitting the fields against the freshly
simulated paths.  After the configured number of iterations a final
forward sweep evaluates the last fields; those paths are what error
metrics compare against a reference solution.

The truncation box of all fields is chosen once, after the first forward
sweep, as the componentwise union of an a-priori box around the start
point and the 0.05%..99.95% quantile range of the simulated states, and
is frozen for all later iterations so successive fits share one function
class.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .brownian import (
    BrownianStore,
    PathBatch,
    TimeGrid,
    coarsen_increments,
    make_time_grid,
    sample_fine_increments,
)
from .errors import InvalidArgument, NumericalFailure
from .fields import (
    DirectZField,
    QuadraticField,
    default_truncation_box,
    eval_u,
    eval_v_diff,
    eval_v_direct,
    field_from_record,
    field_to_record,
    zero_field,
    zero_zfield,
)
from .reference import ErrorReport, compute_errors
from .regression import RegressionConfig, fit_step_differentiation, fit_step_direct

__all__ = [
    "SolverConfig",
    "IterationResult",
    "forward_simulate",
    "backward_pass",
    "run_markovian_iteration",
    "write_checkpoint",
    "read_checkpoint",
]

logger = logging.getLogger("fbsdekit.solver")

METHODS = ("differentiation", "direct")

# Distinct sub-streams per iteration when fresh noise is requested.
_SEED_STRIDE = 0x9E3779B97F4A7C15


@dataclass(frozen=True)
class SolverConfig:
    n_steps: int
    num_iterations: int
    num_paths: int
    method: str = "differentiation"
    seed: int = 7
    fine_n: int = 20480
    fresh_noise: bool = False
    trunc_lo: Optional[np.ndarray] = None
    trunc_hi: Optional[np.ndarray] = None
    regression: Optional[RegressionConfig] = None

    def __post_init__(self):
        for name in ("n_steps", "num_iterations", "num_paths", "fine_n"):
            if getattr(self, name) < 1:
                raise InvalidArgument(f"{name} must be positive")
        if self.fine_n % self.n_steps != 0:
            raise InvalidArgument(
                f"fine_n={self.fine_n} is not divisible by n_steps={self.n_steps}"
            )
        if self.method not in METHODS:
            raise InvalidArgument(f"method must be one of {METHODS}")
        if (self.trunc_lo is None) != (self.trunc_hi is None):
            raise InvalidArgument("give both trunc_lo and trunc_hi or neither")

    def resolved_regression(self) -> RegressionConfig:
        if self.regression is not None:
            return self.regression
        if self.method == "differentiation":
            return RegressionConfig(f_mode="implicit-yz")
        return RegressionConfig(f_mode="explicit-ynext")


@dataclass
class IterationResult:
    """Fields of every iteration plus the final evaluation sweep."""

    fields: list  # fields[m][i], m = 0..M-1, i = 0..N-1
    zfields: Optional[list]  # direct method only, same indexing
    final_paths: PathBatch
    per_iteration_errors: Optional[list] = None


def _terminal_gradient(problem, x):
    if problem.grad_g is not None:
        return np.asarray(problem.grad_g(x), dtype=np.float64)
    out = np.empty_like(x)
    for k in range(x.shape[1]):
        step = 1e-5 * (1.0 + np.abs(x[:, k]))
        e = np.zeros_like(x)
        e[:, k] = step
        out[:, k] = (problem.g(x + e) - problem.g(x - e)) / (2.0 * step)
    return out


def forward_simulate(
    problem,
    fields_prev,
    increments,
    grid: TimeGrid,
    method: str = "differentiation",
    zfields_prev=None,
    iteration: Optional[int] = None,
) -> PathBatch:
    """Forward Euler sweep driven by the previous iteration's fields.

    At each node the value/gradient processes are read from the supplied
    fields; the terminal node uses the terminal condition and its
    gradient instead.
    """
    if method not in METHODS:
        raise InvalidArgument(f"method must be one of {METHODS}")
    if len(fields_prev) != grid.n:
        raise InvalidArgument(
            f"need {grid.n} per-step fields, got {len(fields_prev)}"
        )
    if method == "direct" and (
        zfields_prev is None or len(zfields_prev) != grid.n
    ):
        raise InvalidArgument("direct method needs per-step gradient fields")
    num_paths = increments.shape[0]
    dim, dim_w = problem.dim_x, problem.dim_w
    x = np.empty((num_paths, grid.n + 1, dim))
    y = np.empty((num_paths, grid.n + 1))
    z = np.empty((num_paths, grid.n + 1, dim_w))
    x[:, 0] = problem.x0
    h = grid.h
    for i in range(grid.n):
        t = grid.nodes[i]
        state = x[:, i]
        y[:, i] = eval_u(fields_prev[i], state)
        if method == "differentiation":
            z[:, i] = eval_v_diff(fields_prev[i], problem.sigma, t, state)
        else:
            z[:, i] = eval_v_direct(zfields_prev[i], state)
        drift = problem.b(t, state, y[:, i], z[:, i])
        smat = problem.sigma(t, state, y[:, i])
        x[:, i + 1] = (
            state + drift * h + np.einsum("nic,nc->ni", smat, increments[:, i])
        )
        if not np.all(np.isfinite(x[:, i + 1])):
            bad = int(np.argwhere(~np.isfinite(x[:, i + 1]))[0][0])
            raise NumericalFailure(
                f"non-finite state while stepping to node {i + 1}",
                iteration=iteration,
                step=i,
                path=bad,
            )
    y[:, grid.n] = problem.g(x[:, grid.n])
    terminal_sigma = problem.sigma(grid.horizon, x[:, grid.n], y[:, grid.n])
    z[:, grid.n] = np.einsum(
        "ni,nic->nc", _terminal_gradient(problem, x[:, grid.n]), terminal_sigma
    )
    return PathBatch(x=x, y=y, z=z)


def backward_pass(
    problem,
    paths: PathBatch,
    increments,
    grid: TimeGrid,
    warm_fields,
    cfg: RegressionConfig,
    method: str = "differentiation",
    iteration: Optional[int] = None,
):
    """Refit the per-step fields against freshly simulated paths.

    Sweeps ``i = N-1 .. 0``; the regression target at step ``i`` is the
    next node's value process, read from the terminal condition at the
    last step and from the freshly fitted field below it.

    Returns the list of value fields, and for the direct method also the
    list of gradient fields.
    """
    n = grid.n
    y_next = problem.g(paths.x[:, n])
    new_fields = [None] * n
    new_zfields = [None] * n if method == "direct" else None
    for i in range(n - 1, -1, -1):
        t = grid.nodes[i]
        state = paths.x[:, i]
        dw = increments[:, i]
        try:
            if method == "differentiation":
                new_fields[i] = fit_step_differentiation(
                    problem, t, state, y_next, dw, warm_fields[i], cfg,
                    h=grid.h, step=i,
                )
            else:
                new_fields[i], new_zfields[i] = fit_step_direct(
                    problem, t, state, y_next, dw,
                    warm_fields[i].trunc_lo, warm_fields[i].trunc_hi, cfg,
                    h=grid.h, step=i,
                )
        except NumericalFailure as exc:
            exc.iteration = iteration
            exc.step = i
            raise
        y_next = eval_u(new_fields[i], state)
    if method == "direct":
        return new_fields, new_zfields
    return new_fields


def _iteration_seed(seed: int, m: int) -> int:
    return (seed + _SEED_STRIDE * m) & 0xFFFFFFFFFFFFFFFF


def _auto_box(problem, paths: PathBatch):
    """Quantile box of the first sweep's states, floored at half-width 3.

    The floor keeps the box non-degenerate when the zero-field first sweep
    freezes the paths (diffusion vanishing at zero value), and matches the
    a-priori default's minimum width.
    """
    flat = paths.x.reshape(-1, paths.dim)
    q_lo = np.quantile(flat, 0.0005, axis=0)
    q_hi = np.quantile(flat, 0.9995, axis=0)
    center = 0.5 * (q_lo + q_hi)
    half = np.maximum(0.55 * (q_hi - q_lo), 3.0)
    return center - half, center + half


def run_markovian_iteration(
    problem,
    cfg: SolverConfig,
    store: Optional[BrownianStore] = None,
    reference_paths: Optional[PathBatch] = None,
) -> IterationResult:
    """Alternate forward simulation and backward refits ``M`` times.

    ``store`` may be shared across runs to reuse cached coarse increments.
    When ``reference_paths`` is given, an evaluation sweep after every
    iteration produces one :class:`ErrorReport` per iteration (the report
    for iteration ``m`` equals what a run with ``num_iterations=m`` would
    produce, as long as noise is reused).

    With ``fresh_noise`` the fitting iterations use increments drawn at
    the coarse level from per-iteration seeds; the final evaluation sweep
    and error reports always use the base increments so they stay
    comparable with a reference driven by the same store.
    """
    grid = make_time_grid(problem.horizon, cfg.n_steps)
    if store is None:
        store = sample_fine_increments(
            cfg.seed, cfg.num_paths, cfg.fine_n, problem.dim_w, problem.horizon
        )
    elif (
        store.num_paths != cfg.num_paths
        or store.fine_n != cfg.fine_n
        or store.dim_w != problem.dim_w
    ):
        raise InvalidArgument("store does not match the solver configuration")
    base_coarse = coarsen_increments(store, cfg.n_steps)
    reg_cfg = cfg.resolved_regression()

    if cfg.trunc_lo is not None:
        box = (
            np.asarray(cfg.trunc_lo, dtype=np.float64),
            np.asarray(cfg.trunc_hi, dtype=np.float64),
        )
    else:
        box = None  # determined after the first forward sweep

    all_fields = []
    all_zfields = [] if cfg.method == "direct" else None
    per_iteration = [] if reference_paths is not None else None

    # zero fields evaluate to zero whatever their box; the placeholder box
    # is replaced by the data-adaptive one after the first sweep
    start_box = box or default_truncation_box(problem.x0, 1.0, problem.horizon)
    fields_prev = [zero_field(problem.dim_x, *start_box)] * cfg.n_steps
    zfields_prev = (
        [zero_zfield(problem.dim_x, problem.dim_w, *start_box)] * cfg.n_steps
        if cfg.method == "direct"
        else None
    )

    for m in range(1, cfg.num_iterations + 1):
        if cfg.fresh_noise:
            iter_store = sample_fine_increments(
                _iteration_seed(cfg.seed, m),
                cfg.num_paths,
                cfg.n_steps,
                problem.dim_w,
                problem.horizon,
            )
            increments = iter_store.increments
        else:
            increments = base_coarse
        try:
            paths = forward_simulate(
                problem, fields_prev, increments, grid,
                method=cfg.method, zfields_prev=zfields_prev, iteration=m,
            )
            if box is None:
                box = _auto_box(problem, paths)
                fields_prev = [
                    zero_field(problem.dim_x, box[0], box[1])
                ] * cfg.n_steps
            if cfg.method == "direct":
                fields_new, zfields_new = backward_pass(
                    problem, paths, increments, grid, fields_prev, reg_cfg,
                    method="direct", iteration=m,
                )
            else:
                fields_new = backward_pass(
                    problem, paths, increments, grid, fields_prev, reg_cfg,
                    method="differentiation", iteration=m,
                )
                zfields_new = None
        except NumericalFailure as exc:
            exc.partial_fields = all_fields
            raise
        all_fields.append(fields_new)
        if all_zfields is not None:
            all_zfields.append(zfields_new)
        fields_prev = fields_new
        zfields_prev = zfields_new
        if per_iteration is not None:
            eval_paths = forward_simulate(
                problem, fields_new, base_coarse, grid,
                method=cfg.method, zfields_prev=zfields_new, iteration=m,
            )
            per_iteration.append(
                compute_errors(
                    eval_paths, reference_paths, grid,
                    n_steps=cfg.n_steps, num_iterations=m,
                    num_paths=cfg.num_paths, method=cfg.method,
                    seed=cfg.seed, fine_n=cfg.fine_n,
                )
            )

    final_paths = forward_simulate(
        problem, fields_prev, base_coarse, grid,
        method=cfg.method, zfields_prev=zfields_prev,
        iteration=cfg.num_iterations + 1,
    )
    return IterationResult(
        fields=all_fields,
        zfields=all_zfields,
        final_paths=final_paths,
        per_iteration_errors=per_iteration,
    )


def write_checkpoint(result: IterationResult, path) -> None:
    """Serialize every per-(iteration, step) field as one JSON line."""
    with open(path, "w") as handle:
        for m, per_step in enumerate(result.fields, start=1):
            for i, fld in enumerate(per_step):
                record = field_to_record(fld, time_index=i)
                record["iteration"] = m
                handle.write(json.dumps(record) + "\n")
        if result.zfields is not None:
            for m, per_step in enumerate(result.zfields, start=1):
                for i, fld in enumerate(per_step):
                    record = field_to_record(fld, time_index=i)
                    record["iteration"] = m
                    handle.write(json.dumps(record) + "\n")


def read_checkpoint(path):
    """Load a checkpoint back into ``(fields, zfields)`` nested lists.

    ``zfields`` is ``None`` when the checkpoint holds no gradient fields.
    """
    fields = {}
    zfields = {}
    with open(path) as handle:
        for line in handle:
            record = json.loads(line)
            target = zfields if "dim_w" in record else fields
            target[(record["iteration"], record["time_index"])] = (
                field_from_record(record)
            )

    def to_nested(table):
        if not table:
            return None
        iterations = max(m for m, _ in table) - min(m for m, _ in table) + 1
        steps = max(i for _, i in table) + 1
        return [
            [table[(m, i)] for i in range(steps)]
            for m in range(1, iterations + 1)
        ]

    return to_nested(fields), to_nested(zfields)
