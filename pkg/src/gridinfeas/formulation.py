"""Decision-variable space and bilinear constraint system for infeasibility analysis.

The network model is lifted into a bilinear program: voltages are written as
nominal phasor plus deviation (``dvr``/``dvi``), the squared voltage magnitude
becomes an explicit lifted variable (``vsq``), and load conductance /
susceptance (``gload``/``bload``) couple to voltages only through bilinear
products ``z_k = x_i * x_j``.  Every ``z_k`` is an extra column appended after
the base variables, so both the exact nonlinear problem (with ``z_k = x_i x_j``
enforced) and its convex outer approximation share one row space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import intervals
from .network import Network

# variable roles
DVR, DVI, VSQ = "dvr", "dvi", "vsq"
GLOAD, BLOAD = "gload", "bload"
IR_SRC, II_SRC = "ir_src", "ii_src"
IR_POS, IR_NEG, II_POS, II_NEG = "ir_pos", "ir_neg", "ii_pos", "ii_neg"
IR_LOAD, II_LOAD = "ir_load", "ii_load"
IR_LINE, II_LINE = "ir_line", "ii_line"

FILTERED_ROLES = (DVR, DVI)
UNFILTERED_ROLES = (VSQ, GLOAD, BLOAD)

DEFAULT_DV_BOX = 0.25
DEFAULT_I_MAX = 10.0


class BoxInfeasibleError(ValueError):
    """A deviation box is incompatible with the voltage-magnitude limits."""


@dataclass
class PhaseEntry:
    """Per (node, phase) variable indices and constants for a non-slack phase."""

    node_id: str
    phase: str
    vnom_r: float
    vnom_i: float
    vsq_lim: tuple[float, float]  # ((V^L)^2, (V^U)^2)
    p_load: float
    q_load: float
    dvr: int
    dvi: int
    vsq: int
    g: int | None = None
    b: int | None = None
    ir_load: int | None = None
    ii_load: int | None = None
    # z indices (columns), populated during build
    z_dvr2: int | None = None
    z_dvi2: int | None = None
    z_g_dvr: int | None = None
    z_g_dvi: int | None = None
    z_b_dvr: int | None = None
    z_b_dvi: int | None = None
    z_g_vsq: int | None = None
    z_b_vsq: int | None = None


@dataclass
class VariableSpace:
    """Ordered index of all decision variables (base columns then z columns)."""

    names: list[tuple[str, str, str]]  # (role, key, phase) per base variable
    n_base: int
    n_z: int
    entries: list[PhaseEntry]
    entry_of: dict[tuple[str, str], PhaseEntry]
    filtered: np.ndarray    # indices of dvr/dvi
    unfiltered: np.ndarray  # indices of vsq/gload/bload
    src_index: dict[tuple[str, str], tuple[int, int]]  # candidate -> (ir, ii)
    split_index: dict[tuple[str, str], tuple[int, int, int, int]]
    line_cur_index: list[tuple[int, str, int, int]]  # (line idx, phase, ir, ii)

    @property
    def n_total(self) -> int:
        return self.n_base + self.n_z

    def role_indices(self, role: str) -> np.ndarray:
        return np.array([i for i, (r, _, _) in enumerate(self.names) if r == role],
                        dtype=int)


@dataclass
class Bounds:
    """Lower/upper vectors aligned to the full (base + z) variable vector."""

    lower: np.ndarray
    upper: np.ndarray

    def copy(self) -> "Bounds":
        return Bounds(self.lower.copy(), self.upper.copy())

    def width(self) -> np.ndarray:
        return self.upper - self.lower


@dataclass
class ConstraintSystem:
    """Sparse linear rows plus the explicit bilinear term list.

    ``a_eq x = b_eq`` over the full column space; ``quad_ineq`` rows are
    convex: sum(coef * x[idx]^2) <= rhs (line thermal limits).  ``bilinear``
    holds (z_col, i, j) triples meaning ``x[z_col] = x[i] * x[j]`` (squares as
    i == j); every z column appears in at least one linear row.
    """

    a_eq: sparse.csr_matrix
    b_eq: np.ndarray
    quad_ineq: list[tuple[np.ndarray, np.ndarray, float]]
    bilinear: np.ndarray  # shape (n_z, 3): (z_col, i, j)
    branch_vars: list[tuple[int, ...]]  # per term: filtered vars influencing it
    norm: str  # "l1" | "l2"
    obj_linear: np.ndarray  # over full columns
    obj_quad_diag: np.ndarray  # 0.5 * sum(diag * x^2) term
    cutoff: float | None = None  # objective upper bound used by SBT
    # columns whose box bounds are redundant given the equalities (lifted
    # products and load admittances); local solves treat them as free so the
    # barrier never pins an implied variable to an interval endpoint
    free_in_nlp: np.ndarray | None = None

    def objective_value(self, x: np.ndarray) -> float:
        return float(self.obj_linear @ x + 0.5 * (self.obj_quad_diag * x * x).sum())

    def bilinear_residuals(self, x: np.ndarray) -> np.ndarray:
        z, i, j = self.bilinear[:, 0], self.bilinear[:, 1], self.bilinear[:, 2]
        return x[z] - x[i] * x[j]


def build(network: Network, norm: str) -> tuple[VariableSpace, ConstraintSystem]:
    """Assemble the lifted bilinear system for ``network``.

    Voltage-magnitude limits are enforced as bounds on the ``vsq`` columns
    (set by :func:`initial_bounds`); line thermal limits become convex
    quadratic rows over explicit line-current columns.
    """
    if norm not in ("l1", "l2"):
        raise ValueError(f"norm must be 'l1' or 'l2', got {norm!r}")
    for n in network.nodes:
        if n.kind != "slack" and n.vmin_pu <= 0:
            raise ValueError(f"node '{n.id}': V^L must be positive (vsq lifting)")

    names: list[tuple[str, str, str]] = []

    def new_var(role: str, key: str, phase: str) -> int:
        names.append((role, key, phase))
        return len(names) - 1

    entries: list[PhaseEntry] = []
    entry_of: dict[tuple[str, str], PhaseEntry] = {}
    cand_set = set(network.candidates)

    for node in network.nodes:
        if node.kind == "slack":
            continue
        for ph in node.phases:
            vnom = node.nominal_phasor(ph)
            p = node.p_load.get(ph, 0.0)
            q = node.q_load.get(ph, 0.0)
            e = PhaseEntry(
                node_id=node.id, phase=ph, vnom_r=vnom.real, vnom_i=vnom.imag,
                vsq_lim=(node.vmin_pu ** 2, node.vmax_pu ** 2),
                p_load=p, q_load=q,
                dvr=new_var(DVR, node.id, ph),
                dvi=new_var(DVI, node.id, ph),
                vsq=new_var(VSQ, node.id, ph),
            )
            if p != 0.0:
                e.g = new_var(GLOAD, node.id, ph)
            if q != 0.0:
                e.b = new_var(BLOAD, node.id, ph)
            if e.g is not None or e.b is not None:
                e.ir_load = new_var(IR_LOAD, node.id, ph)
                e.ii_load = new_var(II_LOAD, node.id, ph)
            else:
                e.ir_load = e.ii_load = None
            entries.append(e)
            entry_of[(node.id, ph)] = e

    src_index: dict[tuple[str, str], tuple[int, int]] = {}
    split_index: dict[tuple[str, str], tuple[int, int, int, int]] = {}
    for nid, ph in network.candidates:
        ir = new_var(IR_SRC, nid, ph)
        ii = new_var(II_SRC, nid, ph)
        src_index[(nid, ph)] = (ir, ii)
        if norm == "l1":
            split_index[(nid, ph)] = (
                new_var(IR_POS, nid, ph), new_var(IR_NEG, nid, ph),
                new_var(II_POS, nid, ph), new_var(II_NEG, nid, ph))

    line_cur_index: list[tuple[int, str, int, int]] = []
    for li, ln in enumerate(network.lines):
        key = f"{ln.from_id}->{ln.to_id}#{li}"
        for ph in ln.phases:
            line_cur_index.append(
                (li, ph, new_var(IR_LINE, key, ph), new_var(II_LINE, key, ph)))

    n_base = len(names)

    # z columns, one per bilinear term
    bl_triples: list[tuple[int, int, int]] = []
    branch_vars: list[tuple[int, ...]] = []

    def new_z(i: int, j: int, branch: tuple[int, ...]) -> int:
        col = n_base + len(bl_triples)
        bl_triples.append((col, i, j))
        branch_vars.append(branch)
        return col

    for e in entries:
        e.z_dvr2 = new_z(e.dvr, e.dvr, (e.dvr,))
        e.z_dvi2 = new_z(e.dvi, e.dvi, (e.dvi,))
        if e.g is not None:
            e.z_g_dvr = new_z(e.g, e.dvr, (e.dvr, e.dvi))
            e.z_g_dvi = new_z(e.g, e.dvi, (e.dvr, e.dvi))
            e.z_g_vsq = new_z(e.g, e.vsq, (e.dvr, e.dvi))
        if e.b is not None:
            e.z_b_dvr = new_z(e.b, e.dvr, (e.dvr, e.dvi))
            e.z_b_dvi = new_z(e.b, e.dvi, (e.dvr, e.dvi))
            e.z_b_vsq = new_z(e.b, e.vsq, (e.dvr, e.dvi))

    n_total = n_base + len(bl_triples)

    rows_i: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    rhs: list[float] = []

    def add_row(terms: list[tuple[int, float]], b: float) -> int:
        r = len(rhs)
        for c, v in terms:
            if v != 0.0:
                rows_i.append(r)
                cols.append(c)
                vals.append(v)
        rhs.append(b)
        return r

    # line current definitions: I_line = y * (V_from - V_to), per phase row
    lc_by_line: dict[int, list[tuple[str, int, int]]] = {}
    for li, ph, ir, ii in line_cur_index:
        lc_by_line.setdefault(li, []).append((ph, ir, ii))

    slack_node = network.node(network.slack_id)
    # KCL accumulation: (node,phase) -> list of (col, coef) for real/imag
    kcl_r: dict[tuple[str, str], list[tuple[int, float]]] = {}
    kcl_i: dict[tuple[str, str], list[tuple[int, float]]] = {}
    for e in entries:
        kcl_r[(e.node_id, e.phase)] = []
        kcl_i[(e.node_id, e.phase)] = []

    def dv_cols(nid: str, ph: str) -> tuple[int | None, int | None, float, float]:
        """(dvr col, dvi col, vnom_r, vnom_i); slack phases have no dv columns."""
        if nid == network.slack_id:
            v = slack_node.nominal_phasor(ph)
            return None, None, v.real, v.imag
        e = entry_of[(nid, ph)]
        return e.dvr, e.dvi, e.vnom_r, e.vnom_i

    for li, ln in enumerate(network.lines):
        phs = list(ln.phases)
        g_blk, b_blk = ln.y_series.real, ln.y_series.imag
        for (ph, ir, ii) in lc_by_line[li]:
            prow = phs.index(ph)
            terms_r: list[tuple[int, float]] = [(ir, 1.0)]
            terms_i: list[tuple[int, float]] = [(ii, 1.0)]
            const_r = const_i = 0.0
            for pcol, phc in enumerate(phs):
                gg, bb = g_blk[prow, pcol], b_blk[prow, pcol]
                for nid, sgn in ((ln.from_id, 1.0), (ln.to_id, -1.0)):
                    dvr_c, dvi_c, vr0, vi0 = dv_cols(nid, phc)
                    # Ir -= g*Vr - b*Vi ; Ii -= g*Vi + b*Vr
                    if dvr_c is not None:
                        terms_r.append((dvr_c, -sgn * gg))
                        terms_i.append((dvr_c, -sgn * bb))
                    if dvi_c is not None:
                        terms_r.append((dvi_c, sgn * bb))
                        terms_i.append((dvi_c, -sgn * gg))
                    const_r += sgn * (gg * vr0 - bb * vi0)
                    const_i += sgn * (gg * vi0 + bb * vr0)
            add_row(terms_r, const_r)
            add_row(terms_i, const_i)
            # KCL contributions: +I at from end, -I at to end
            if (ln.from_id, ph) in kcl_r:
                kcl_r[(ln.from_id, ph)].append((ir, 1.0))
                kcl_i[(ln.from_id, ph)].append((ii, 1.0))
            if (ln.to_id, ph) in kcl_r:
                kcl_r[(ln.to_id, ph)].append((ir, -1.0))
                kcl_i[(ln.to_id, ph)].append((ii, -1.0))

    for e in entries:
        # vsq lifting: vsq - 2 vr0*dvr - 2 vi0*dvi - z_dvr2 - z_dvi2 = vr0^2 + vi0^2
        add_row([(e.vsq, 1.0), (e.dvr, -2.0 * e.vnom_r), (e.dvi, -2.0 * e.vnom_i),
                 (e.z_dvr2, -1.0), (e.z_dvi2, -1.0)],
                e.vnom_r ** 2 + e.vnom_i ** 2)
        # load conductance/susceptance products
        if e.g is not None:
            add_row([(e.z_g_vsq, 1.0)], e.p_load)
        if e.b is not None:
            add_row([(e.z_b_vsq, 1.0)], -e.q_load)
        # load current definitions
        if e.ir_load is not None:
            tr: list[tuple[int, float]] = [(e.ir_load, 1.0)]
            ti: list[tuple[int, float]] = [(e.ii_load, 1.0)]
            if e.g is not None:
                tr += [(e.z_g_dvr, -1.0), (e.g, -e.vnom_r)]
                ti += [(e.z_g_dvi, -1.0), (e.g, -e.vnom_i)]
            if e.b is not None:
                tr += [(e.z_b_dvi, 1.0), (e.b, e.vnom_i)]
                ti += [(e.z_b_dvr, -1.0), (e.b, -e.vnom_r)]
            add_row(tr, 0.0)
            add_row(ti, 0.0)
            kcl_r[(e.node_id, e.phase)].append((e.ir_load, 1.0))
            kcl_i[(e.node_id, e.phase)].append((e.ii_load, 1.0))

    for key, (ir, ii) in src_index.items():
        kcl_r[key].append((ir, -1.0))
        kcl_i[key].append((ii, -1.0))
        if norm == "l1":
            rp, rn, ip_, in_ = split_index[key]
            add_row([(ir, 1.0), (rp, -1.0), (rn, 1.0)], 0.0)
            add_row([(ii, 1.0), (ip_, -1.0), (in_, 1.0)], 0.0)

    for e in entries:
        add_row(kcl_r[(e.node_id, e.phase)], 0.0)
        add_row(kcl_i[(e.node_id, e.phase)], 0.0)

    a_eq = sparse.csr_matrix(
        (vals, (rows_i, cols)), shape=(len(rhs), n_total))

    quad_ineq: list[tuple[np.ndarray, np.ndarray, float]] = []
    for li, ph, ir, ii in line_cur_index:
        r = network.lines[li].rating_pu
        if r is not None:
            quad_ineq.append((np.array([ir, ii]), np.array([1.0, 1.0]), r * r))

    obj_linear = np.zeros(n_total)
    obj_quad = np.zeros(n_total)
    for key, w in network.weights.items():
        if norm == "l2":
            ir, ii = src_index[key]
            obj_quad[ir] = w
            obj_quad[ii] = w
        else:
            obj_linear[list(split_index[key])] = w

    space = VariableSpace(
        names=names, n_base=n_base, n_z=len(bl_triples),
        entries=entries, entry_of=entry_of,
        filtered=np.array(sorted([e.dvr for e in entries] + [e.dvi for e in entries]),
                          dtype=int),
        unfiltered=np.array(sorted(
            [e.vsq for e in entries]
            + [e.g for e in entries if e.g is not None]
            + [e.b for e in entries if e.b is not None]), dtype=int),
        src_index=src_index, split_index=split_index,
        line_cur_index=line_cur_index)

    system = ConstraintSystem(
        a_eq=a_eq, b_eq=np.array(rhs),
        quad_ineq=quad_ineq,
        bilinear=np.array(bl_triples, dtype=int).reshape(-1, 3),
        branch_vars=branch_vars,
        norm=norm, obj_linear=obj_linear, obj_quad_diag=obj_quad)
    free = [e.g for e in space.entries if e.g is not None]
    free += [e.b for e in space.entries if e.b is not None]
    free += list(range(space.n_base, space.n_total))
    system.free_in_nlp = np.array(sorted(free), dtype=int)
    return space, system


def initial_bounds(space: VariableSpace, network: Network,
                   dv_box: float = DEFAULT_DV_BOX,
                   i_max: float = DEFAULT_I_MAX) -> Bounds:
    """Initial box: deviations in [-dv_box, dv_box], sources in [-i_max, i_max],
    splits in [0, i_max]; dependent (vsq/gload/bload/z) bounds propagated."""
    if dv_box <= 0:
        raise ValueError("dv_box must be positive")
    lower = np.full(space.n_total, -np.inf)
    upper = np.full(space.n_total, np.inf)
    for e in space.entries:
        lower[[e.dvr, e.dvi]] = -dv_box
        upper[[e.dvr, e.dvi]] = dv_box
    for ir, ii in space.src_index.values():
        lower[[ir, ii]] = -i_max
        upper[[ir, ii]] = i_max
    for cols in space.split_index.values():
        lower[list(cols)] = 0.0
        upper[list(cols)] = i_max
    for li, ph, ir, ii in space.line_cur_index:
        r = network.lines[li].rating_pu
        if r is not None:
            lower[[ir, ii]] = -r
            upper[[ir, ii]] = r
    return propagate_unfiltered_bounds(space, network, Bounds(lower, upper))


def propagate_unfiltered_bounds(space: VariableSpace, network: Network,
                                dv_bounds: Bounds) -> Bounds:
    """Recompute vsq/gload/bload and z-column bounds from the deviation box.

    Sound interval arithmetic throughout; the vsq interval is intersected
    with the voltage-magnitude limits.  Raises :class:`BoxInfeasibleError`
    when that intersection is empty (the box cannot hold a feasible point).
    """
    b = dv_bounds.copy()
    lo, hi = b.lower, b.upper
    for e in space.entries:
        vr_lo, vr_hi = e.vnom_r + lo[e.dvr], e.vnom_r + hi[e.dvr]
        vi_lo, vi_hi = e.vnom_i + lo[e.dvi], e.vnom_i + hi[e.dvi]
        sr_lo, sr_hi = intervals.square(vr_lo, vr_hi)
        si_lo, si_hi = intervals.square(vi_lo, vi_hi)
        vsq_lo, vsq_hi = intervals.intersect(
            sr_lo + si_lo, sr_hi + si_hi, e.vsq_lim[0], e.vsq_lim[1])
        if vsq_lo > vsq_hi:
            raise BoxInfeasibleError(
                f"({e.node_id},{e.phase}): deviation box excludes all voltages "
                f"within magnitude limits")
        if vsq_lo <= 0.0:
            raise BoxInfeasibleError(
                f"({e.node_id},{e.phase}): vsq lower bound must be positive")
        lo[e.vsq], hi[e.vsq] = vsq_lo, vsq_hi
        if e.g is not None:
            lo[e.g], hi[e.g] = intervals.divide_scalar(e.p_load, vsq_lo, vsq_hi)
        if e.b is not None:
            lo[e.b], hi[e.b] = intervals.divide_scalar(-e.q_load, vsq_lo, vsq_hi)
        # z columns follow from their participants
        lo[e.z_dvr2], hi[e.z_dvr2] = intervals.square(lo[e.dvr], hi[e.dvr])
        lo[e.z_dvi2], hi[e.z_dvi2] = intervals.square(lo[e.dvi], hi[e.dvi])
        for zc, a_col, b_col in (
                (e.z_g_dvr, e.g, e.dvr), (e.z_g_dvi, e.g, e.dvi),
                (e.z_g_vsq, e.g, e.vsq),
                (e.z_b_dvr, e.b, e.dvr), (e.z_b_dvi, e.b, e.dvi),
                (e.z_b_vsq, e.b, e.vsq)):
            if zc is not None:
                lo[zc], hi[zc] = intervals.product(
                    lo[a_col], hi[a_col], lo[b_col], hi[b_col])
    return b


def flat_start(space: VariableSpace, system: ConstraintSystem,
               network: Network) -> np.ndarray:
    """Default initial point: zero deviations, nominal-voltage dependent
    variables, zero infeasibility sources; z columns set to exact products."""
    x = np.zeros(space.n_total)
    for e in space.entries:
        vsq0 = e.vnom_r ** 2 + e.vnom_i ** 2
        x[e.vsq] = vsq0
        g0 = e.p_load / vsq0 if e.g is not None else 0.0
        b0 = -e.q_load / vsq0 if e.b is not None else 0.0
        if e.g is not None:
            x[e.g] = g0
        if e.b is not None:
            x[e.b] = b0
        if e.ir_load is not None:
            x[e.ir_load] = g0 * e.vnom_r - b0 * e.vnom_i
            x[e.ii_load] = g0 * e.vnom_i + b0 * e.vnom_r
    for li, ph, ir, ii in space.line_cur_index:
        ln = network.lines[li]
        k = list(ln.phases).index(ph)
        vf = np.array([network.node(ln.from_id).nominal_phasor(p) for p in ln.phases])
        vt = np.array([network.node(ln.to_id).nominal_phasor(p) for p in ln.phases])
        cur = (ln.y_series @ (vf - vt))[k]
        x[ir], x[ii] = cur.real, cur.imag
    # start both members of every split pair at 1.0: the linking rows stay
    # satisfied (sources are zero) and the pairs sit well inside their
    # nonnegativity bounds, where interior-point steps are unrestricted
    for rp, rn, ip, ineg in space.split_index.values():
        x[[rp, rn, ip, ineg]] = 1.0
    z, i, j = system.bilinear[:, 0], system.bilinear[:, 1], system.bilinear[:, 2]
    x[z] = x[i] * x[j]
    return x


@dataclass
class ResidualReport:
    sources: dict[tuple[str, str], complex]
    objective: float
    limits_ok: bool
    max_noncandidate_residual: float


def evaluate_residual(network: Network, voltages: dict[tuple[str, str], complex],
                      norm: str) -> ResidualReport:
    """Brute-force oracle: infeasibility currents are the KCL residuals.

    ``voltages`` maps every non-slack (node, phase) to a complex phasor;
    slack phases are fixed at nominal.  Returns the residual current at each
    candidate, the weighted objective of those currents, and whether the
    voltage/current limits hold (including near-zero residuals at
    non-candidate phases, which carry no source).
    """
    volt: dict[tuple[str, str], complex] = {}
    slack = network.node(network.slack_id)
    for nid, ph in network.node_phases():
        if nid == network.slack_id:
            volt[(nid, ph)] = slack.nominal_phasor(ph)
        else:
            volt[(nid, ph)] = complex(voltages[(nid, ph)])

    inj: dict[tuple[str, str], complex] = {k: 0.0 for k in volt}
    limits_ok = True
    for ln in network.lines:
        vf = np.array([volt[(ln.from_id, p)] for p in ln.phases])
        vt = np.array([volt[(ln.to_id, p)] for p in ln.phases])
        cur = ln.y_series @ (vf - vt)
        if ln.rating_pu is not None and np.any(np.abs(cur) > ln.rating_pu * (1 + 1e-9)):
            limits_ok = False
        for k, p in enumerate(ln.phases):
            inj[(ln.from_id, p)] += cur[k]
            inj[(ln.to_id, p)] -= cur[k]

    cand = set(network.candidates)
    sources: dict[tuple[str, str], complex] = {}
    max_other = 0.0
    for node in network.nodes:
        if node.kind == "slack":
            continue
        for ph in node.phases:
            v = volt[(node.id, ph)]
            if abs(v) == 0.0:
                raise ZeroDivisionError(
                    f"zero voltage at loaded node ({node.id},{ph})")
            s = complex(node.p_load.get(ph, 0.0), node.q_load.get(ph, 0.0))
            i_load = (s / v).conjugate()
            resid = i_load + inj[(node.id, ph)]
            if (node.id, ph) in cand:
                sources[(node.id, ph)] = resid
            else:
                max_other = max(max_other, abs(resid))
            vm2 = abs(v) ** 2
            if not (node.vmin_pu ** 2 * (1 - 1e-9) <= vm2
                    <= node.vmax_pu ** 2 * (1 + 1e-9)):
                limits_ok = False

    obj = 0.0
    for key, cur in sources.items():
        w = network.weights[key]
        if norm == "l2":
            obj += 0.5 * w * (cur.real ** 2 + cur.imag ** 2)
        else:
            obj += w * (abs(cur.real) + abs(cur.imag))
    return ResidualReport(sources, obj, limits_ok, max_other)
