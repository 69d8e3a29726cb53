"""Joint multi-quantile regression as a linear program.

Coefficients of quantile ``q`` are cumulative sums of per-quantile differences
``upsilon_r`` (``r <= q``), each split into non-negative parts.  Residuals are
split the same way.  Cross-quantile constraints act on the differences:

* ``plain``     no constraints; the program separates by quantile
* ``bondell``   ``upsilon_0q >= sum_j upsilon-_jq``
* ``adaptive``  ``upsilon_0q + sum_j a_j upsilon+_jq >= sum_j b_j upsilon-_jq`` with
  ``a_j = (1 - alpha) zbar_j + alpha min_j`` and ``b_j = (1 - alpha) zbar_j + alpha max_j``

The design passed to :func:`assemble_lp` is already min-max scaled with the
intercept in column 0.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .almon import AlmonMap, LagAverage
from .dataset import MixedFrequencyDataset, ScalingMap, minmax_fit_apply

log = logging.getLogger(__name__)

MODES = ("plain", "bondell", "adaptive")
DEFAULT_TAUS = (0.1, 0.2, 0.25, 0.3, 0.4, 0.5, 0.6, 0.7, 0.75, 0.8, 0.9)
DEFAULT_TOL = 1e-9


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class QuantileGrid:
    taus: tuple[float, ...] = DEFAULT_TAUS

    def __post_init__(self) -> None:
        taus = tuple(float(t) for t in self.taus)
        if not taus:
            raise ValueError("quantile grid is empty")
        if any(not 0.0 < t < 1.0 for t in taus):
            raise ValueError("quantile levels must lie in (0, 1)")
        if any(b <= a for a, b in zip(taus, taus[1:])):
            raise ValueError("quantile levels must be strictly increasing")
        object.__setattr__(self, "taus", taus)

    def __len__(self) -> int:
        return len(self.taus)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.taus)


def pinball(u, tau):
    """Tick loss ``u * (tau - 1{u < 0})``."""
    u = np.asarray(u, dtype=float)
    return u * (tau - (u < 0))


@dataclass(frozen=True)
class LpProblem:
    c: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    A_ub: Optional[sp.csr_matrix]
    b_ub: Optional[np.ndarray]
    catalog: tuple[tuple[str, int, int], ...]
    design: np.ndarray
    y: np.ndarray
    grid: QuantileGrid
    mode: str
    alpha: Optional[float]
    scaling: Optional[ScalingMap]

    @property
    def n_columns(self) -> int:
        return len(self.c)

    @property
    def n_eq(self) -> int:
        return self.A_eq.shape[0]

    @property
    def n_ub(self) -> int:
        return 0 if self.A_ub is None else self.A_ub.shape[0]

    def column_name(self, i: int) -> str:
        kind, a, q = self.catalog[i]
        return f"{kind}_{a}_{q + 1}"

    def to_lp_text(self) -> str:
        """CPLEX-LP style dump for cross-checking with external solvers."""
        names = [self.column_name(i) for i in range(self.n_columns)]

        def expr(row) -> str:
            row = row.tocoo()
            terms = [f"{v:+.17g} {names[j]}" for j, v in sorted(zip(row.col, row.data))]
            return " ".join(terms) if terms else "0"

        lines = ["\\ joint quantile regression", "Minimize"]
        obj = [f"{v:+.17g} {names[j]}" for j, v in enumerate(self.c) if v != 0]
        lines.append(" obj: " + " ".join(obj))
        lines.append("Subject To")
        T = len(self.y)
        for i in range(self.n_eq):
            q, t = divmod(i, T)
            lines.append(f" fit_{t}_{q + 1}: {expr(self.A_eq.getrow(i))} = {self.b_eq[i]:.17g}")
        for i in range(self.n_ub):
            # stored as -(lhs - rhs) <= 0
            lines.append(f" nc_{i + 2}: {expr(-self.A_ub.getrow(i))} >= 0")
        lines.append("Bounds")
        lines.extend(f" {n} >= 0" for n in names)
        lines.append("End")
        return "\n".join(lines) + "\n"


def constraint_coefficients(scaling: ScalingMap, mode: str, alpha: Optional[float]):
    """Left (``upsilon+``) and right (``upsilon-``) weights for non-intercept columns."""
    keep = ~scaling.intercept
    zbar = scaling.mean[keep]
    lo = scaling.min[keep]
    hi = scaling.max[keep]
    if mode == "bondell":
        return lo.copy(), hi.copy()
    a = (1.0 - alpha) * zbar + alpha * lo
    b = (1.0 - alpha) * zbar + alpha * hi
    return a, b


def assemble_lp(
    design: np.ndarray,
    y: np.ndarray,
    grid: QuantileGrid,
    mode: str = "plain",
    alpha: Optional[float] = None,
    scaling: Optional[ScalingMap] = None,
) -> LpProblem:
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    T, K1 = design.shape
    Q = len(grid)
    if len(y) != T:
        raise ValueError(f"y has {len(y)} rows, design has {T}")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if mode != "plain":
        if scaling is None:
            raise ValueError(f"mode {mode!r} needs the scaling map")
        if not scaling.intercept[0] or scaling.intercept[1:].any():
            raise ValueError("intercept must be column 0 and the only constant column")
        if len(scaling.mean) != K1:
            raise ValueError("scaling map does not match the design")
    if mode == "adaptive":
        if alpha is None or not alpha >= 0:
            raise ValueError(f"alpha must be >= 0, got {alpha}")
        alpha = float(alpha)
    else:
        alpha = None

    taus = grid.array
    n_coef = Q * K1
    c = np.concatenate([np.zeros(2 * n_coef), np.repeat(taus, T), np.repeat(1.0 - taus, T)])

    cum = sp.csr_matrix(np.tril(np.ones((Q, Q))))
    Zq = sp.kron(cum, sp.csr_matrix(design), format="csr")
    eye = sp.identity(Q * T, format="csr")
    A_eq = sp.hstack([Zq, -Zq, eye, -eye], format="csr")
    b_eq = np.tile(y, Q)

    A_ub = b_ub = None
    if mode != "plain" and Q > 1:
        a, b = constraint_coefficients(scaling, mode, alpha)
        left = np.concatenate([[1.0], a])
        right = np.concatenate([[1.0], b])
        rows, cols, vals = [], [], []
        for i, q in enumerate(range(1, Q)):
            base = q * K1
            # -(v0+ - v0- + sum a v+ - sum b v-) <= 0
            for j in range(K1):
                rows += [i, i]
                cols += [base + j, n_coef + base + j]
                vals += [-left[j], right[j]]
        A_ub = sp.csr_matrix((vals, (rows, cols)), shape=(Q - 1, len(c)))
        b_ub = np.zeros(Q - 1)

    catalog = (
        [("vp", j, q) for q in range(Q) for j in range(K1)]
        + [("vm", j, q) for q in range(Q) for j in range(K1)]
        + [("up", t, q) for q in range(Q) for t in range(T)]
        + [("um", t, q) for q in range(Q) for t in range(T)]
    )
    return LpProblem(c, A_eq, b_eq, A_ub, b_ub, tuple(catalog), design, y, grid, mode, alpha, scaling)


@dataclass(frozen=True)
class QuantilePanelFit:
    delta: np.ndarray
    upsilon: np.ndarray
    alpha: Optional[float]
    objective_value: float
    scaling: Optional[ScalingMap]
    grid: QuantileGrid
    solver_status: str
    mode: str = "plain"
    fitted: np.ndarray = field(default=None, repr=False)
    iterations: int = 0
    column_names: tuple[str, ...] = ()
    transforms: tuple = ()
    column_blocks: tuple[tuple[str, int, int], ...] = ()

    def columns_of(self, variable: str) -> slice:
        for var, start, stop in self.column_blocks:
            if var == variable:
                return slice(start, stop)
        raise KeyError(variable)

    @property
    def raw_coefficients(self) -> np.ndarray:
        """Coefficients in the units of the unscaled design."""
        if self.scaling is None:
            return self.delta
        return self.scaling.unscale_coefficients(self.delta)


def _sparse_form(problem: LpProblem):
    """Equivalent program with free per-quantile coefficients.

    The canonical equality rows repeat the design once per earlier quantile.
    Adding the coefficients as free columns tied to the differences by
    ``delta_q - delta_{q-1} - upsilon+_q + upsilon-_q = 0`` keeps each row
    short, which the simplex handles several times faster.  Canonical columns
    follow the ``n_coef`` free columns unchanged.
    """
    T, K1 = problem.design.shape
    Q = len(problem.grid)
    n_coef = Q * K1
    n_canon = problem.n_columns
    fit_rows = sp.hstack(
        [
            sp.block_diag([sp.csr_matrix(problem.design)] * Q),
            sp.csr_matrix((Q * T, 2 * n_coef)),
            sp.identity(Q * T),
            -sp.identity(Q * T),
        ]
    )
    diff = sp.identity(n_coef) - sp.kron(sp.eye(Q, k=-1), sp.identity(K1))
    link_rows = sp.hstack(
        [diff, -sp.identity(n_coef), sp.identity(n_coef), sp.csr_matrix((n_coef, 2 * Q * T))]
    )
    A_eq = sp.vstack([fit_rows, link_rows], format="csr")
    b_eq = np.concatenate([problem.b_eq, np.zeros(n_coef)])
    c = np.concatenate([np.zeros(n_coef), problem.c])
    A_ub = None
    if problem.A_ub is not None:
        A_ub = sp.hstack([sp.csr_matrix((problem.n_ub, n_coef)), problem.A_ub], format="csr")
    bounds = np.zeros((n_coef + n_canon, 2))
    bounds[:n_coef, 0] = -np.inf
    bounds[:, 1] = np.inf
    return c, A_ub, A_eq, b_eq, bounds


def solve(problem: LpProblem, tol: float = DEFAULT_TOL, max_iter: Optional[int] = None) -> QuantilePanelFit:
    """Solve with the HiGHS dual simplex and map back to the canonical columns."""
    if max_iter is None:
        max_iter = 50 * problem.n_columns
    T, K1 = problem.design.shape
    Q = len(problem.grid)
    n_coef = Q * K1
    c, A_ub, A_eq, b_eq, bounds = _sparse_form(problem)
    res = linprog(
        c,
        A_ub=A_ub,
        b_ub=problem.b_ub,
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=bounds,
        method="highs-ds",
        options={
            "primal_feasibility_tolerance": max(tol, 1e-10),
            "dual_feasibility_tolerance": max(tol, 1e-10),
            "maxiter": int(max_iter),
        },
    )
    if res.status == 0:
        status = "optimal"
    elif res.status == 1:
        status = "iteration-limit"
        if res.x is None:
            raise SolverError("iteration limit reached before a feasible iterate was found")
    elif res.status == 2:
        # the all-residual point is always feasible, so this is a solver fault
        raise SolverError(f"internal error: solver reported infeasibility ({res.message})")
    else:
        raise SolverError(f"LP solve failed with status {res.status}: {res.message}")

    x = np.maximum(np.asarray(res.x, dtype=float)[n_coef:], 0.0)
    vp = x[:n_coef].reshape(Q, K1)
    vm = x[n_coef : 2 * n_coef].reshape(Q, K1)
    upsilon = (vp - vm).T
    delta = np.cumsum(upsilon, axis=1)
    fitted = problem.design @ delta
    obj = float(problem.c[2 * n_coef :] @ x[2 * n_coef :])
    iters = int(getattr(res, "nit", 0) or 0)
    log.debug("LP %s T=%d K=%d Q=%d: %s in %d iterations", problem.mode, T, K1 - 1, Q, status, iters)
    return QuantilePanelFit(
        delta=delta,
        upsilon=upsilon,
        alpha=problem.alpha,
        objective_value=obj,
        scaling=problem.scaling,
        grid=problem.grid,
        solver_status=status,
        mode=problem.mode,
        fitted=fitted,
        iterations=iters,
    )


def tick_loss(y: np.ndarray, fitted: np.ndarray, grid: QuantileGrid) -> np.ndarray:
    """Per-quantile total tick loss of a ``(T, Q)`` panel of fitted quantiles."""
    u = np.asarray(y, dtype=float)[:, None] - fitted
    return pinball(u, grid.array[None, :]).sum(axis=0)


Transform = Union[AlmonMap, LagAverage, None]


def design_matrix(dataset: MixedFrequencyDataset, transforms: Sequence[tuple[str, Transform]], with_blocks: bool = False):
    """Stack the low-frequency block with transformed high-frequency blocks.

    Returns the design and its column names, plus ``(variable, start, stop)``
    column ranges when ``with_blocks`` is set.
    """
    cols = [dataset.low_freq_block]
    names = list(dataset.low_freq_names)
    blocks = []
    for var, tr in transforms:
        W = dataset.block(var).W
        start = len(names)
        if tr is None:
            cols.append(W)
            names += [f"{var}_lag{m}" for m in range(1, W.shape[1] + 1)]
        else:
            cols.append(tr.transform(W))
            names += tr.names(var)
        blocks.append((var, start, len(names)))
    if with_blocks:
        return np.hstack(cols), tuple(names), tuple(blocks)
    return np.hstack(cols), tuple(names)


def _normalise_maps(dataset: MixedFrequencyDataset, maps: Optional[Mapping[str, Transform]]):
    maps = dict(maps or {})
    unknown = set(maps) - {b.id for b in dataset.high_freq_blocks}
    if unknown:
        raise KeyError(f"no high-frequency block named {sorted(unknown)}")
    return tuple((b.id, maps.get(b.id)) for b in dataset.high_freq_blocks)


def fit_design(
    design: np.ndarray,
    y: np.ndarray,
    grid: QuantileGrid,
    mode: str = "plain",
    alpha: Optional[float] = None,
    tol: float = DEFAULT_TOL,
    max_iter: Optional[int] = None,
) -> QuantilePanelFit:
    """Scale an unscaled design (intercept in column 0), assemble and solve."""
    scaled, scaling = minmax_fit_apply(design)
    problem = assemble_lp(scaled, y, grid, mode, alpha, scaling)
    return solve(problem, tol, max_iter)


def fit_joint(
    dataset: MixedFrequencyDataset,
    maps: Optional[Mapping[str, Transform]],
    grid: QuantileGrid,
    mode: str = "plain",
    alpha: Optional[float] = None,
    tol: float = DEFAULT_TOL,
    max_iter: Optional[int] = None,
) -> QuantilePanelFit:
    """Fit all quantiles of ``grid`` jointly on a MIDAS panel.

    ``maps`` assigns each high-frequency variable an :class:`AlmonMap`, a
    :class:`LagAverage`, or ``None`` for the raw lags (unrestricted MIDAS).
    Variables missing from ``maps`` enter as raw lags.
    """
    transforms = _normalise_maps(dataset, maps)
    design, names, blocks = design_matrix(dataset, transforms, with_blocks=True)
    fit = fit_design(design, dataset.target, grid, mode, alpha, tol, max_iter)
    return replace(fit, column_names=names, transforms=transforms, column_blocks=blocks)


def predict(fit: QuantilePanelFit, new_rows: np.ndarray) -> np.ndarray:
    """Predicted quantiles for unscaled design rows; crossings are left as is."""
    new_rows = np.atleast_2d(np.asarray(new_rows, dtype=float))
    if new_rows.shape[1] != fit.delta.shape[0]:
        raise ValueError(f"design has {new_rows.shape[1]} columns, fit expects {fit.delta.shape[0]}")
    z = fit.scaling.apply(new_rows) if fit.scaling is not None else new_rows
    return z @ fit.delta


def predict_dataset(fit: QuantilePanelFit, dataset: MixedFrequencyDataset) -> np.ndarray:
    design, names = design_matrix(dataset, fit.transforms)
    if fit.column_names and names != fit.column_names:
        raise ValueError("dataset columns do not match the fitted model")
    return predict(fit, design)


def fit_quantiles_separately(
    design: np.ndarray, y: np.ndarray, grid: QuantileGrid, tol: float = DEFAULT_TOL
) -> list[QuantilePanelFit]:
    """One single-quantile program per level, on an already scaled design."""
    return [solve(assemble_lp(design, y, QuantileGrid((tau,)), "plain"), tol) for tau in grid.taus]


def _transform_to_dict(tr: Transform, M: int):
    if tr is None:
        return {"kind": "raw", "M": M}
    if isinstance(tr, LagAverage):
        return {"kind": "average", "M": tr.M, "n": tr.n}
    return {"kind": "almon", "M": tr.M, "p": tr.p, "restricted": tr.restricted}


def _transform_from_dict(d) -> Transform:
    from .almon import make_almon_map

    if d["kind"] == "raw":
        return None
    if d["kind"] == "average":
        return LagAverage(int(d["M"]), int(d["n"]))
    return make_almon_map(int(d["M"]), int(d["p"]), bool(d["restricted"]))


def fit_to_dict(fit: QuantilePanelFit) -> dict:
    """JSON-ready description of a fit, enough to predict and export from."""
    blocks = {v: (a, b) for v, a, b in fit.column_blocks}
    return {
        "mode": fit.mode,
        "alpha": fit.alpha,
        "taus": list(fit.grid.taus),
        "objective_value": fit.objective_value,
        "solver_status": fit.solver_status,
        "column_names": list(fit.column_names),
        "column_blocks": [[v, a, b] for v, a, b in fit.column_blocks],
        "transforms": [[v, _transform_to_dict(tr, blocks[v][1] - blocks[v][0])] for v, tr in fit.transforms],
        "delta": fit.delta.tolist(),
        "scaling": {
            "raw_min": fit.scaling.raw_min.tolist(),
            "raw_max": fit.scaling.raw_max.tolist(),
            "mean": fit.scaling.mean.tolist(),
            "intercept": fit.scaling.intercept.tolist(),
        },
    }


def fit_from_dict(d: dict) -> QuantilePanelFit:
    delta = np.array(d["delta"], dtype=float)
    sc = d["scaling"]
    scaling = ScalingMap(
        np.array(sc["raw_min"], dtype=float),
        np.array(sc["raw_max"], dtype=float),
        np.array(sc["mean"], dtype=float),
        np.array(sc["intercept"], dtype=bool),
    )
    upsilon = np.diff(delta, axis=1, prepend=0.0)
    return QuantilePanelFit(
        delta=delta,
        upsilon=upsilon,
        alpha=d["alpha"],
        objective_value=float(d["objective_value"]),
        scaling=scaling,
        grid=QuantileGrid(tuple(d["taus"])),
        solver_status=d["solver_status"],
        mode=d["mode"],
        column_names=tuple(d["column_names"]),
        transforms=tuple((v, _transform_from_dict(t)) for v, t in d["transforms"]),
        column_blocks=tuple((v, int(a), int(b)) for v, a, b in d["column_blocks"]),
    )
