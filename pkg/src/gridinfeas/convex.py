"""Convex subproblem engine: LP / convex QP with convex quadratic rows.

Problems are stored as plain sparse data (:class:`ConvexModel`) and solved
with the Clarabel conic interior-point solver.  Quadratic inequality rows
(line thermal limits, L2 objective cutoffs) are pure sums of squares and map
to second-order cones.  Every optimal solve returns both the primal objective
and the dual objective, so a weak-duality certificate accompanies each lower
bound.  Solves are stateless and reentrant; concurrent solves on separate
models are safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse

import clarabel

FEAS_TOL = 1e-8
GAP_TOL = 1e-8
MAX_ITER = 200

OPTIMAL = "optimal"
PRIMAL_INFEASIBLE = "primal-infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical-failure"

_STATUS_MAP = {
    "Solved": OPTIMAL,
    "AlmostSolved": OPTIMAL,
    "PrimalInfeasible": PRIMAL_INFEASIBLE,
    "AlmostPrimalInfeasible": PRIMAL_INFEASIBLE,
    "DualInfeasible": UNBOUNDED,
    "AlmostDualInfeasible": UNBOUNDED,
}


@dataclass
class ConvexModel:
    """min c'x + 0.5 x'diag(qd)x  s.t.  A x = b,  G x <= h,
    sum(coef * x[idx]^2) <= rhs per quadratic row,  l <= x <= u."""

    n: int
    obj_linear: np.ndarray
    obj_quad_diag: np.ndarray
    a_eq: sparse.csr_matrix
    b_eq: np.ndarray
    a_ineq: sparse.csr_matrix
    b_ineq: np.ndarray
    quad_ineq: list[tuple[np.ndarray, np.ndarray, float]]
    lower: np.ndarray
    upper: np.ndarray
    _conic: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if np.any(self.obj_quad_diag < 0):
            raise ValueError("quadratic objective diagonal must be nonnegative")
        for idx, coef, rhs in self.quad_ineq:
            if np.any(coef < 0):
                raise ValueError("quadratic row coefficients must be nonnegative")

    def with_objective(self, obj_linear: np.ndarray,
                       obj_quad_diag: np.ndarray | None = None) -> "ConvexModel":
        """Same feasible set, different objective; shares the conic cache."""
        qd = np.zeros(self.n) if obj_quad_diag is None else obj_quad_diag
        m = replace(self, obj_linear=obj_linear, obj_quad_diag=qd)
        m._conic = self._conic
        return m


@dataclass
class ConvexSolution:
    status: str
    x: np.ndarray | None
    duals: np.ndarray | None  # conic dual vector, aligned to the stacked rows
    objective: float
    dual_objective: float
    iterations: int = 0


def _conic_data(model: ConvexModel):
    """Stack rows into Clarabel form A x + s = b, s in (Zero, Nonneg, SOC...)."""
    if model._conic is not None:
        return model._conic
    n = model.n
    blocks, rhs, cones = [], [], []

    fixed = np.where(model.lower == model.upper)[0]
    m_eq = model.a_eq.shape[0]
    eq_blocks = [model.a_eq]
    eq_rhs = [model.b_eq]
    if fixed.size:
        f = sparse.csr_matrix(
            (np.ones(fixed.size), (np.arange(fixed.size), fixed)),
            shape=(fixed.size, n))
        eq_blocks.append(f)
        eq_rhs.append(model.lower[fixed])
    a_zero = sparse.vstack(eq_blocks, format="csr")
    blocks.append(a_zero)
    rhs.append(np.concatenate(eq_rhs) if eq_rhs else np.zeros(0))
    cones.append(clarabel.ZeroConeT(a_zero.shape[0]))

    # nonneg: Gx <= h plus finite, non-fixed bounds
    free_mask = model.lower != model.upper
    up = np.where(free_mask & np.isfinite(model.upper))[0]
    lo = np.where(free_mask & np.isfinite(model.lower))[0]
    nn_blocks = [model.a_ineq] if model.a_ineq.shape[0] else []
    nn_rhs = [model.b_ineq] if model.a_ineq.shape[0] else []
    if up.size:
        nn_blocks.append(sparse.csr_matrix(
            (np.ones(up.size), (np.arange(up.size), up)), shape=(up.size, n)))
        nn_rhs.append(model.upper[up])
    if lo.size:
        nn_blocks.append(sparse.csr_matrix(
            (-np.ones(lo.size), (np.arange(lo.size), lo)), shape=(lo.size, n)))
        nn_rhs.append(-model.lower[lo])
    if nn_blocks:
        a_nn = sparse.vstack(nn_blocks, format="csr")
        blocks.append(a_nn)
        rhs.append(np.concatenate(nn_rhs))
        cones.append(clarabel.NonnegativeConeT(a_nn.shape[0]))

    for idx, coef, rhs_q in model.quad_ineq:
        if rhs_q < 0:
            # structurally infeasible row; keep it representable via 0 >= eps
            rows = sparse.csr_matrix((1, n))
            blocks.append(rows)
            rhs.append(np.array([rhs_q]))
            cones.append(clarabel.NonnegativeConeT(1))
            continue
        # (sqrt(rhs), sqrt(coef) * x_idx) in SOC
        m = idx.size
        a_soc = sparse.csr_matrix(
            (-np.sqrt(coef), (np.arange(1, m + 1), idx)), shape=(m + 1, n))
        blocks.append(a_soc)
        b_soc = np.zeros(m + 1)
        b_soc[0] = math.sqrt(rhs_q)
        rhs.append(b_soc)
        cones.append(clarabel.SecondOrderConeT(m + 1))

    a_all = sparse.vstack(blocks, format="csc")
    b_all = np.concatenate(rhs)
    model._conic = (a_all, b_all, cones)
    return model._conic


def solve_convex(model: ConvexModel, warm: np.ndarray | None = None) -> ConvexSolution:
    """Solve the model to the engine tolerances (feasibility/gap 1e-8).

    ``warm`` is accepted for interface symmetry; the interior-point engine
    does not consume a starting point.
    """
    a_all, b_all, cones = _conic_data(model)
    p_mat = sparse.diags(model.obj_quad_diag, format="csc")
    p_mat = sparse.csc_matrix(p_mat)
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = MAX_ITER
    settings.tol_feas = FEAS_TOL
    settings.tol_gap_rel = GAP_TOL
    settings.tol_gap_abs = GAP_TOL
    solver = clarabel.DefaultSolver(p_mat, model.obj_linear, a_all, b_all,
                                    cones, settings)
    sol = solver.solve()
    status = _STATUS_MAP.get(str(sol.status), NUMERICAL_FAILURE)
    if status != OPTIMAL:
        return ConvexSolution(status, None, None, math.nan, math.nan,
                              sol.iterations)
    x = np.asarray(sol.x)
    return ConvexSolution(OPTIMAL, x, np.asarray(sol.z),
                          float(sol.obj_val), float(sol.obj_val_dual),
                          sol.iterations)


def write_mps(model: ConvexModel, path: str, name: str = "GRIDINFEAS") -> None:
    """Export the model as fixed MPS for cross-checking with external solvers.

    Columns are named ``X<j>``, equality rows ``EQ<i>``, linear inequality
    rows ``LE<i>``, quadratic rows ``QC<i>`` (with QCMATRIX sections), and
    the quadratic objective goes to a QMATRIX section.  Variable bounds use
    the BOUNDS section (FX/LO/UP/FR/MI).
    """
    eq = sparse.csc_matrix(model.a_eq)
    le = sparse.csc_matrix(model.a_ineq)
    lines = [f"NAME          {name}", "ROWS", " N  OBJ"]
    for i in range(eq.shape[0]):
        lines.append(f" E  EQ{i}")
    for i in range(le.shape[0]):
        lines.append(f" L  LE{i}")
    for i in range(len(model.quad_ineq)):
        lines.append(f" L  QC{i}")
    lines.append("COLUMNS")
    eqc, lec = eq.tocsc(), le.tocsc()
    for j in range(model.n):
        entries = []
        if model.obj_linear[j] != 0.0:
            entries.append(("OBJ", model.obj_linear[j]))
        for k in range(eqc.indptr[j], eqc.indptr[j + 1]):
            entries.append((f"EQ{eqc.indices[k]}", eqc.data[k]))
        for k in range(lec.indptr[j], lec.indptr[j + 1]):
            entries.append((f"LE{lec.indices[k]}", lec.data[k]))
        for row, val in entries:
            lines.append(f"    X{j:<9} {row:<10} {val:.17g}")
    lines.append("RHS")
    for i, v in enumerate(model.b_eq):
        if v != 0.0:
            lines.append(f"    RHS       EQ{i:<8} {v:.17g}")
    for i, v in enumerate(model.b_ineq):
        if v != 0.0:
            lines.append(f"    RHS       LE{i:<8} {v:.17g}")
    for i, (_, _, rhs_q) in enumerate(model.quad_ineq):
        if rhs_q != 0.0:
            lines.append(f"    RHS       QC{i:<8} {rhs_q:.17g}")
    lines.append("BOUNDS")
    for j in range(model.n):
        l, u = model.lower[j], model.upper[j]
        if l == u:
            lines.append(f" FX BND       X{j:<9} {l:.17g}")
        else:
            if math.isinf(l) and math.isinf(u):
                lines.append(f" FR BND       X{j}")
                continue
            if math.isinf(l):
                lines.append(f" MI BND       X{j}")
            else:
                lines.append(f" LO BND       X{j:<9} {l:.17g}")
            if not math.isinf(u):
                lines.append(f" UP BND       X{j:<9} {u:.17g}")
    if np.any(model.obj_quad_diag != 0.0):
        lines.append("QMATRIX")
        for j in np.where(model.obj_quad_diag != 0.0)[0]:
            lines.append(f"    X{j:<9} X{j:<9} {model.obj_quad_diag[j]:.17g}")
    for i, (idx, coef, _) in enumerate(model.quad_ineq):
        lines.append(f"QCMATRIX   QC{i}")
        for j, c in zip(idx, coef):
            lines.append(f"    X{j:<9} X{j:<9} {c:.17g}")
    lines.append("ENDATA")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
