"""McCormick convex outer envelopes and relaxation assembly.

Each bilinear term ``z = x_i * x_j`` over a finite box is replaced by its
four-row convex hull (three rows for squares: two tangent under-estimators
plus the secant over-estimator).  :func:`build_relaxation` stitches the
envelopes onto the linear rows of a constraint system to form the convex
node/tightening subproblem.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import sparse

from .convex import ConvexModel
from .formulation import Bounds, ConstraintSystem


def mccormick_bilinear(i_lo: float, i_hi: float, j_lo: float, j_hi: float):
    """Four rows over (x_i, x_j, z), each ((ci, cj, cz), rhs) with row <= rhs.

    Under-estimators:  z >= i_lo*xj + j_lo*xi - i_lo*j_lo
                       z >= i_hi*xj + j_hi*xi - i_hi*j_hi
    Over-estimators:   z <= i_hi*xj + j_lo*xi - i_hi*j_lo
                       z <= i_lo*xj + j_hi*xi - i_lo*j_hi
    """
    for v in (i_lo, i_hi, j_lo, j_hi):
        if not math.isfinite(v):
            raise ValueError("McCormick envelope requires finite bounds")
    if i_lo > i_hi or j_lo > j_hi:
        raise ValueError("empty box")
    return [
        ((j_lo, i_lo, -1.0), i_lo * j_lo),
        ((j_hi, i_hi, -1.0), i_hi * j_hi),
        ((-j_lo, -i_hi, 1.0), -i_hi * j_lo),
        ((-j_hi, -i_lo, 1.0), -i_lo * j_hi),
    ]


def mccormick_square(lo: float, hi: float):
    """Three rows over (x, z): tangents z >= 2*lo*x - lo^2, z >= 2*hi*x - hi^2
    and the secant z <= (lo+hi)*x - lo*hi.  Each ((cx, cz), rhs), row <= rhs."""
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError("McCormick envelope requires finite bounds")
    if lo > hi:
        raise ValueError("empty box")
    return [
        ((2.0 * lo, -1.0), lo * lo),
        ((2.0 * hi, -1.0), hi * hi),
        ((-(lo + hi), 1.0), -lo * hi),
    ]


def _envelope_rows(system: ConstraintSystem, bounds: Bounds):
    """Vectorized assembly of all envelope rows as one sparse block."""
    bl = system.bilinear
    if bl.shape[0] == 0:
        return sparse.csr_matrix((0, system.a_eq.shape[1])), np.zeros(0)
    lo, hi = bounds.lower, bounds.upper
    z, bi, bj = bl[:, 0], bl[:, 1], bl[:, 2]
    part = np.unique(np.concatenate([bi, bj]))
    bad = ~(np.isfinite(lo[part]) & np.isfinite(hi[part]))
    if bad.any():
        raise ValueError(
            f"bilinear participants without finite bounds: {part[bad].tolist()}")

    sq = bi == bj
    rows_i, cols, vals, rhs = [], [], [], []
    r0 = 0

    def emit(rows, colsets):
        nonlocal r0
        # rows: list of (coef arrays per column set, rhs array)
        for coef_list, b in rows:
            m = len(b)
            for cset, coefs in zip(colsets, coef_list):
                rows_i.append(np.arange(r0, r0 + m))
                cols.append(cset)
                vals.append(coefs)
            rhs.append(b)
            r0 += m

    if sq.any():
        x, zz = bi[sq], z[sq]
        a, b = lo[x], hi[x]
        emit([
            ((2.0 * a, -np.ones(a.size)), a * a),
            ((2.0 * b, -np.ones(a.size)), b * b),
            ((-(a + b), np.ones(a.size)), -a * b),
        ], (x, zz))
    if (~sq).any():
        xi, xj, zz = bi[~sq], bj[~sq], z[~sq]
        a, b = lo[xi], hi[xi]
        c, d = lo[xj], hi[xj]
        ones = np.ones(a.size)
        emit([
            ((c, a, -ones), a * c),
            ((d, b, -ones), b * d),
            ((-c, -b, ones), -b * c),
            ((-d, -a, ones), -a * d),
        ], (xi, xj, zz))

    a_mc = sparse.csr_matrix(
        (np.concatenate(vals),
         (np.concatenate(rows_i), np.concatenate(cols))),
        shape=(r0, system.a_eq.shape[1]))
    return a_mc, np.concatenate(rhs)


def build_relaxation(system: ConstraintSystem, bounds: Bounds,
                     objective_cutoff: float | None = None) -> ConvexModel:
    """Convex outer approximation: linear rows + envelopes + convex limits.

    With ``objective_cutoff`` the row ``objective <= cutoff`` is added (linear
    for the L1 norm, a convex quadratic row for L2); used by bound tightening.
    """
    n = system.a_eq.shape[1]
    a_mc, b_mc = _envelope_rows(system, bounds)
    ineq_blocks, ineq_rhs = [a_mc], [b_mc]
    quad = list(system.quad_ineq)
    if objective_cutoff is not None:
        if system.norm == "l1":
            ineq_blocks.append(sparse.csr_matrix(system.obj_linear))
            ineq_rhs.append(np.array([objective_cutoff]))
        else:
            idx = np.where(system.obj_quad_diag > 0)[0]
            quad.append((idx, system.obj_quad_diag[idx],
                         max(2.0 * objective_cutoff, 0.0)))
    a_ineq = sparse.vstack(ineq_blocks, format="csr")
    return ConvexModel(
        n=n,
        obj_linear=system.obj_linear.copy(),
        obj_quad_diag=system.obj_quad_diag.copy(),
        a_eq=system.a_eq, b_eq=system.b_eq,
        a_ineq=a_ineq, b_ineq=np.concatenate(ineq_rhs),
        quad_ineq=quad,
        lower=bounds.lower.copy(), upper=bounds.upper.copy())
