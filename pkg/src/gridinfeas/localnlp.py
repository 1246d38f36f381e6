"""Local solver: primal-dual interior point for the lifted nonlinear program.

Solves  min f(x)  s.t.  A x = b,  z_k = x_i x_j,  q_m(x) <= 0,  l <= x <= u
where the only nonlinear equalities are the bilinear lifting rows and the
q_m are convex sums of squares (line thermal limits).  Log barrier on slacks
and finite bounds, damped Newton on the perturbed KKT system, fraction-to-
boundary rule 0.995, initial barrier parameter 1e-3, convergence tolerance
1e-7.  Inertia trouble is handled by diagonal regularization starting at
1e-8 with x10 escalation.  Fully deterministic: fixed ordering, no
randomized pivoting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .formulation import Bounds, ConstraintSystem

CONVERGED = "converged"
MAX_ITERS = "max-iters"
FAILED = "failed"

TOL = 1e-7
MU_INIT = 1e-3
MU_MIN = 1e-12
TAU = 0.995
MAX_ITER = 300


@dataclass
class LocalSolution:
    x: np.ndarray
    objective: float
    stationarity: float
    feasibility: float
    complementarity: float
    iterations: int
    status: str
    lam_eq: np.ndarray | None = None
    y_ineq: np.ndarray | None = None
    z_lower: np.ndarray | None = None
    z_upper: np.ndarray | None = None


class _Problem:
    """Callbacks for the lifted system: values, Jacobian, Lagrangian Hessian."""

    def __init__(self, system: ConstraintSystem, bounds: Bounds):
        self.sys = system
        self.n = system.a_eq.shape[1]
        self.m_lin = system.a_eq.shape[0]
        self.bl = system.bilinear
        self.m_eq = self.m_lin + len(self.bl)
        self.quad = system.quad_ineq
        self.m_ineq = len(self.quad)
        # bounds; widths below 1e-9 are widened symmetrically (barrier safety)
        lo, up = bounds.lower.copy(), bounds.upper.copy()
        if system.free_in_nlp is not None and system.free_in_nlp.size:
            lo[system.free_in_nlp] = -np.inf
            up[system.free_in_nlp] = np.inf
        tight = np.isfinite(lo) & np.isfinite(up) & (up - lo < 1e-9)
        mid = 0.5 * (lo[tight] + up[tight])
        lo[tight], up[tight] = mid - 5e-10, mid + 5e-10
        self.lower, self.upper = lo, up
        self.has_lo = np.isfinite(lo)
        self.has_up = np.isfinite(up)
        # constant Jacobian parts
        zc, bi, bj = self.bl[:, 0], self.bl[:, 1], self.bl[:, 2]
        self._zc, self._bi, self._bj = zc, bi, bj
        self._jbl_rows = np.arange(len(self.bl))

    def objective(self, x):
        return self.sys.objective_value(x)

    def grad(self, x):
        return self.sys.obj_linear + self.sys.obj_quad_diag * x

    def c_eq(self, x):
        lin = self.sys.a_eq @ x - self.sys.b_eq
        if len(self.bl) == 0:
            return lin
        return np.concatenate([lin, x[self._zc] - x[self._bi] * x[self._bj]])

    def jac_eq(self, x) -> sparse.csr_matrix:
        if len(self.bl) == 0:
            return self.sys.a_eq
        r = self._jbl_rows
        sq = self._bi == self._bj
        rows = np.concatenate([r, r[~sq], r[~sq], r[sq]])
        cols = np.concatenate([self._zc, self._bi[~sq], self._bj[~sq],
                               self._bi[sq]])
        vals = np.concatenate([np.ones(len(r)), -x[self._bj[~sq]],
                               -x[self._bi[~sq]], -2.0 * x[self._bi[sq]]])
        jbl = sparse.csr_matrix((vals, (rows, cols)), shape=(len(r), self.n))
        return sparse.vstack([self.sys.a_eq, jbl], format="csr")

    def q_ineq(self, x):
        return np.array([(c * x[idx] ** 2).sum() - rhs
                         for idx, c, rhs in self.quad])

    def jac_ineq(self, x) -> sparse.csr_matrix:
        rows, cols, vals = [], [], []
        for m, (idx, c, _) in enumerate(self.quad):
            rows.extend([m] * len(idx))
            cols.extend(idx)
            vals.extend(2.0 * c * x[idx])
        return sparse.csr_matrix((vals, (rows, cols)),
                                 shape=(self.m_ineq, self.n))

    def hess_lag(self, x, lam_bl, y) -> sparse.csr_matrix:
        """Hessian of f + lam'c_eq + y'q (x-block only)."""
        diag = self.sys.obj_quad_diag.copy()
        rows, cols, vals = [], [], []
        if len(self.bl):
            sq = self._bi == self._bj
            diag_idx = self._bi[sq]
            np.add.at(diag, diag_idx, -2.0 * lam_bl[sq])
            bi, bj, lv = self._bi[~sq], self._bj[~sq], lam_bl[~sq]
            rows.extend(bi); cols.extend(bj); vals.extend(-lv)
            rows.extend(bj); cols.extend(bi); vals.extend(-lv)
        for m, (idx, c, _) in enumerate(self.quad):
            np.add.at(diag, idx, 2.0 * c * y[m])
        h = sparse.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))
        return h + sparse.diags(diag)


def _interior(x, lo, up):
    """Clip a start point strictly inside finite bounds."""
    w = np.minimum(up - lo, 1.0)
    pad = np.where(np.isfinite(w), 1e-4 * np.maximum(w, 1e-4), 0.0)
    return np.clip(x, lo + pad, up - pad)


def _kkt_error(p: _Problem, x, lam, y, zl, zu, mu):
    g = p.grad(x) + p.jac_eq(x).T @ lam
    if p.m_ineq:
        g = g + p.jac_ineq(x).T @ y
    g[p.has_lo] -= zl[p.has_lo]
    g[p.has_up] += zu[p.has_up]
    ce = p.c_eq(x)
    q = p.q_ineq(x) if p.m_ineq else np.zeros(0)
    comp = 0.0
    if p.has_lo.any():
        comp = max(comp, np.abs((x - p.lower)[p.has_lo] * zl[p.has_lo] - mu).max())
    if p.has_up.any():
        comp = max(comp, np.abs((p.upper - x)[p.has_up] * zu[p.has_up] - mu).max())
    feas = max(np.abs(ce).max() if ce.size else 0.0,
               q.max(initial=0.0))
    # scaled stationarity guard, IPOPT-style
    mults = np.concatenate([lam, y, zl[p.has_lo], zu[p.has_up]])
    sd = max(100.0, np.abs(mults).sum() / max(1, mults.size)) / 100.0
    return np.abs(g).max(initial=0.0) / sd, feas, comp


def _try_immediate(p: _Problem, x, tol) -> LocalSolution | None:
    """Accept the start point outright when it is already a KKT point
    with zero equality multipliers (e.g. flat start on a zero-load network)."""
    ce = p.c_eq(x)
    if ce.size and np.abs(ce).max() > tol:
        return None
    if p.m_ineq and p.q_ineq(x).max() > tol:
        return None
    if np.any(x < p.lower - 1e-12) or np.any(x > p.upper + 1e-12):
        return None
    g = p.grad(x)
    zl, zu = np.zeros(p.n), np.zeros(p.n)
    at_lo = p.has_lo & (x - p.lower <= 1e-12)
    at_up = p.has_up & (p.upper - x <= 1e-12)
    zl[at_lo] = np.maximum(g[at_lo], 0.0)
    zu[at_up] = np.maximum(-g[at_up], 0.0)
    r = g - zl + zu
    if np.abs(r).max(initial=0.0) > tol:
        return None
    return LocalSolution(
        x=x.copy(), objective=p.objective(x),
        stationarity=float(np.abs(r).max(initial=0.0)),
        feasibility=float(np.abs(ce).max() if ce.size else 0.0),
        complementarity=0.0, iterations=0, status=CONVERGED,
        lam_eq=np.zeros(p.m_eq), y_ineq=np.zeros(p.m_ineq),
        z_lower=zl, z_upper=zu)


def _max_step(v, dv, tau):
    neg = dv < 0
    if not neg.any():
        return 1.0
    return min(1.0, tau * np.min(-v[neg] / dv[neg]))


def solve_local(system: ConstraintSystem, bounds: Bounds,
                init: np.ndarray | None = None,
                tol: float = TOL, max_iter: int = MAX_ITER) -> LocalSolution:
    """Locally solve the lifted program; returns the KKT point found."""
    p = _Problem(system, bounds)
    n = p.n
    x0 = np.zeros(n) if init is None else np.asarray(init, dtype=float).copy()
    x0 = np.clip(x0, p.lower, p.upper)

    quick = _try_immediate(p, x0, tol)
    if quick is not None:
        return quick

    x = _interior(x0, p.lower, p.upper)
    mu = MU_INIT
    lam = np.zeros(p.m_eq)
    q0 = p.q_ineq(x) if p.m_ineq else np.zeros(0)
    s = np.maximum(-q0, 1e-2)
    y = np.full(p.m_ineq, mu) / s if p.m_ineq else np.zeros(0)
    zl = np.where(p.has_lo, mu / np.maximum(x - p.lower, 1e-8), 0.0)
    zu = np.where(p.has_up, mu / np.maximum(p.upper - x, 1e-8), 0.0)
    nu = 1.0  # merit penalty

    def merit(xv, sv, muv, nuv):
        val = p.objective(xv)
        dl = (xv - p.lower)[p.has_lo]
        du = (p.upper - xv)[p.has_up]
        if np.any(dl <= 0) or np.any(du <= 0) or (sv.size and np.any(sv <= 0)):
            return math.inf
        val -= muv * (np.log(dl).sum() + np.log(du).sum()
                      + (np.log(sv).sum() if sv.size else 0.0))
        infeas = np.abs(p.c_eq(xv)).sum()
        if sv.size:
            infeas += np.abs(p.q_ineq(xv) + sv).sum()
        return val + nuv * infeas

    status = MAX_ITERS
    it = 0
    delta_x = 0.0
    for it in range(1, max_iter + 1):
        stat, feas, comp = _kkt_error(p, x, lam, y, zl, zu, 0.0)
        if max(stat, feas, comp) <= tol and mu <= 1e-9:
            status = CONVERGED
            break
        stat_mu, _, comp_mu = _kkt_error(p, x, lam, y, zl, zu, mu)
        if max(stat_mu, feas, comp_mu) <= 10.0 * mu:
            mu = max(MU_MIN, min(0.2 * mu, mu ** 1.5))

        jac = p.jac_eq(x)
        lam_bl = lam[p.m_lin:]
        hess = p.hess_lag(x, lam_bl, y)
        sigma = np.zeros(n)
        sigma[p.has_lo] += zl[p.has_lo] / (x - p.lower)[p.has_lo]
        sigma[p.has_up] += zu[p.has_up] / (p.upper - x)[p.has_up]
        ce = p.c_eq(x)
        g = p.grad(x)
        rhs_x = -(g + jac.T @ lam)
        rhs_x[p.has_lo] += mu / (x - p.lower)[p.has_lo]
        rhs_x[p.has_up] -= mu / (p.upper - x)[p.has_up]
        blocks_row2 = None
        if p.m_ineq:
            ji = p.jac_ineq(x)
            q = p.q_ineq(x)
            rhs_x -= ji.T @ y
            rhs_y = -q - mu / y

        # regularized Newton solve, escalate on failure
        delta = 0.0 if delta_x == 0.0 else delta_x
        step = None
        for attempt in range(25):
            w = hess + sparse.diags(sigma + delta)
            if p.m_ineq:
                kkt = sparse.bmat(
                    [[w, jac.T, ji.T],
                     [jac, -1e-8 * sparse.eye(p.m_eq), None],
                     [ji, None, -sparse.diags(s / y) - 1e-10 * sparse.eye(p.m_ineq)]],
                    format="csc")
                rhs = np.concatenate([rhs_x, -ce, rhs_y])
            else:
                kkt = sparse.bmat(
                    [[w, jac.T], [jac, -1e-8 * sparse.eye(p.m_eq)]], format="csc")
                rhs = np.concatenate([rhs_x, -ce])
            try:
                lu = splu(kkt)
                sol = lu.solve(rhs)
            except RuntimeError:
                lu, sol = None, None
            if sol is not None and np.isfinite(sol).all():
                # demand positive curvature along the primal direction so the
                # step is a descent direction for the barrier-merit function;
                # escalating delta convexifies an indefinite Lagrangian Hessian
                dxa = sol[:n]
                nrm2 = float(dxa @ dxa)
                if nrm2 == 0.0 or float(dxa @ (w @ dxa)) >= 1e-10 * nrm2 \
                        or delta > 1e6:
                    step = sol
                    break
            delta = 1e-8 if delta == 0.0 else delta * 10.0
        if step is None:
            status = FAILED
            break
        delta_x = delta * 0.1  # reuse a decayed regularization next iteration

        dx = step[:n]
        dlam = step[n:n + p.m_eq]
        if p.m_ineq:
            dy = step[n + p.m_eq:]
            ds = -(p.q_ineq(x) + s) - ji @ dx
        else:
            dy = np.zeros(0)
            ds = np.zeros(0)
        dzl = np.zeros(n)
        dzu = np.zeros(n)
        ml, mu_ = p.has_lo, p.has_up
        dzl[ml] = (mu - (x - p.lower)[ml] * zl[ml]) / (x - p.lower)[ml] \
            - zl[ml] / (x - p.lower)[ml] * dx[ml]
        dzu[mu_] = (mu - (p.upper - x)[mu_] * zu[mu_]) / (p.upper - x)[mu_] \
            + zu[mu_] / (p.upper - x)[mu_] * dx[mu_]

        # fraction-to-boundary
        a_pri = 1.0
        if ml.any():
            a_pri = min(a_pri, _max_step((x - p.lower)[ml], dx[ml], TAU))
        if mu_.any():
            a_pri = min(a_pri, _max_step((p.upper - x)[mu_], -dx[mu_], TAU))
        if s.size:
            a_pri = min(a_pri, _max_step(s, ds, TAU))
        a_dual = 1.0
        if s.size:
            a_dual = min(a_dual, _max_step(y, dy, TAU))
        if ml.any():
            a_dual = min(a_dual, _max_step(zl[ml], dzl[ml], TAU))
        if mu_.any():
            a_dual = min(a_dual, _max_step(zu[mu_], dzu[mu_], TAU))

        # exact-penalty weight tracks the current multiplier magnitude;
        # letting it decay again avoids stalling on steps that trade a tiny
        # infeasibility increase for a large barrier-objective decrease
        nu = max(1.0, 1.1 * max(np.abs(lam).max(initial=0.0),
                                np.abs(y).max(initial=0.0)))
        phi0 = merit(x, s, mu, nu)
        thresh = phi0 + 1e-8 * (1.0 + abs(phi0))
        alpha = a_pri
        x_new = x + alpha * dx
        s_new = s + alpha * ds if s.size else s
        if merit(x_new, s_new, mu, nu) > thresh:
            # second-order correction: the bilinear rows curve away from the
            # linearization, so re-center the trial point on the constraint
            # manifold with one extra solve on the existing factorization
            ce_t = p.c_eq(x_new)
            rhs_c = [np.zeros(n), -ce_t]
            if p.m_ineq:
                rhs_c.append(-(p.q_ineq(x_new) + s_new))
            corr = lu.solve(np.concatenate(rhs_c))
            dxc = corr[:n]
            a_c = 1.0
            if ml.any():
                a_c = min(a_c, _max_step((x_new - p.lower)[ml], dxc[ml], TAU))
            if mu_.any():
                a_c = min(a_c, _max_step((p.upper - x_new)[mu_],
                                         -dxc[mu_], TAU))
            x_soc = x_new + a_c * dxc
            s_soc = s_new
            if s.size:
                dsc = -(p.q_ineq(x_new) + s_new) - ji @ dxc
                a_c = min(a_c, _max_step(s_new, dsc, TAU))
                s_soc = s_new + a_c * dsc
                x_soc = x_new + a_c * dxc
            if merit(x_soc, s_soc, mu, nu) <= thresh:
                x_new, s_new = x_soc, s_soc
            else:
                while alpha > 2.0 ** -10 * a_pri:
                    alpha *= 0.5
                    x_new = x + alpha * dx
                    s_new = s + alpha * ds if s.size else s
                    if merit(x_new, s_new, mu, nu) <= thresh:
                        break
        x = x_new
        if s.size:
            s = s_new
            y = np.maximum(y + min(alpha, a_dual) * dy, 1e-16)
            s = np.maximum(s, 1e-16)
        lam = lam + min(alpha, a_dual) * dlam
        zl = np.where(ml, np.maximum(zl + min(alpha, a_dual) * dzl, 1e-16), 0.0)
        zu = np.where(mu_, np.maximum(zu + min(alpha, a_dual) * dzu, 1e-16), 0.0)

    stat, feas, comp = _kkt_error(p, x, lam, y, zl, zu, 0.0)
    if status != FAILED and max(stat, feas, comp) <= tol:
        status = CONVERGED
    return LocalSolution(
        x=x, objective=p.objective(x), stationarity=float(stat),
        feasibility=float(feas), complementarity=float(comp),
        iterations=it, status=status,
        lam_eq=lam, y_ineq=y, z_lower=zl, z_upper=zu)
