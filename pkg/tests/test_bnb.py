"""Branch-and-bound: gap, branching rules, and end-to-end small solves."""

import numpy as np
import pytest
from scipy import sparse

from gridinfeas import bnb, cases, formulation, localnlp, network


def make_system(bilinear, branch_vars, n):
    """Minimal lifted system: only the bilinear list matters for branching."""
    return formulation.ConstraintSystem(
        a_eq=sparse.csr_matrix((0, n)),
        b_eq=np.zeros(0),
        quad_ineq=[],
        bilinear=np.asarray(bilinear, dtype=int),
        branch_vars=branch_vars,
        norm="l2",
        obj_linear=np.zeros(n),
        obj_quad_diag=np.zeros(n),
    )


class TestComputeGap:
    def test_relative_gap(self):
        assert bnb.compute_gap(1.0, 0.5) == pytest.approx(0.5)

    def test_zero_zero(self):
        assert bnb.compute_gap(0.0, 0.0) == 0.0

    def test_closed(self):
        assert bnb.compute_gap(0.3359, 0.3359) == pytest.approx(0.0, abs=1e-12)

    def test_symmetric_in_sign_of_denominator(self):
        assert bnb.compute_gap(-2.0, -2.5) == pytest.approx(0.25)


class TestSelectBranchVariable:
    def test_width_weighting_prefers_wide_box(self):
        # two product terms with equal residuals; widths 0.2 vs 0.002
        sys_ = make_system([[4, 0, 2], [5, 1, 3]], [(0,), (1,)], 6)
        x = np.array([1.0, 1.0, 1.0, 1.0, 2.0, 2.0])  # both residuals = 1
        lo = np.array([-0.1, -0.001, 0.0, 0.0, -5.0, -5.0])
        hi = np.array([0.1, 0.001, 0.0, 0.0, 5.0, 5.0])
        assert bnb.select_branch_variable(sys_, x, lo, hi) == 0

    def test_tie_breaks_to_lowest_index(self):
        sys_ = make_system([[2, 0, 1]], [(0, 1)], 3)
        x = np.array([1.0, 1.0, 3.0])
        lo = np.array([-0.1, -0.1, -5.0])
        hi = np.array([0.1, 0.1, 5.0])
        assert bnb.select_branch_variable(sys_, x, lo, hi) == 0

    def test_square_term_returns_its_variable(self):
        sys_ = make_system([[1, 0, 0]], [(0,)], 2)
        x = np.array([1.0, 2.0])  # z=2 vs x^2=1
        lo = np.array([-0.25, -5.0])
        hi = np.array([0.25, 5.0])
        assert bnb.select_branch_variable(sys_, x, lo, hi) == 0

    def test_no_violation_raises(self):
        sys_ = make_system([[1, 0, 0]], [(0,)], 2)
        x = np.array([0.5, 0.25])
        with pytest.raises(ValueError):
            bnb.select_branch_variable(sys_, x, np.array([-1.0, -5.0]),
                                       np.array([1.0, 5.0]))


class TestBranch:
    def test_midpoint_splits_in_half(self):
        lo, hi = np.array([-0.25]), np.array([0.25])
        (llo, lhi), (rlo, rhi) = bnb.branch(lo, hi, 0, 0.0)
        assert lhi[0] == pytest.approx(0.0)
        assert rlo[0] == pytest.approx(0.0)
        assert llo[0] == -0.25 and rhi[0] == 0.25

    def test_point_clamped_to_interior(self):
        lo, hi = np.array([-0.25]), np.array([0.25])
        (_, lhi), (rlo, _) = bnb.branch(lo, hi, 0, 0.24)
        assert lhi[0] == pytest.approx(0.2)
        assert rlo[0] == pytest.approx(0.2)

    def test_children_partition_parent(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            lo = rng.uniform(-1, 0, size=4)
            hi = lo + rng.uniform(0.1, 1.0, size=4)
            var = int(rng.integers(0, 4))
            point = rng.uniform(lo[var] - 0.5, hi[var] + 0.5)
            (llo, lhi), (rlo, rhi) = bnb.branch(lo, hi, var, point)
            assert lhi[var] == rlo[var]
            assert llo[var] == lo[var] and rhi[var] == hi[var]
            assert lo[var] < lhi[var] < hi[var]
            others = [i for i in range(4) if i != var]
            assert np.array_equal(llo[others], lo[others])
            assert np.array_equal(rhi[others], hi[others])

    def test_degenerate_width_raises(self):
        lo, hi = np.array([0.0]), np.array([0.0])
        with pytest.raises(ValueError):
            bnb.branch(lo, hi, 0, 0.0)


def run_global(name, norm="l2", **opt_kwargs):
    net = network.parse_feeder(cases.feeder_text(name))
    space, system = formulation.build(net, norm=norm)
    bounds = formulation.initial_bounds(space, net, dv_box=0.25)
    x0 = formulation.flat_start(space, system, net)
    local = localnlp.solve_local(system, bounds, init=x0)
    res = bnb.solve_global(space, system, net, bounds, warm=local,
                           opts=bnb.SolveOptions(**opt_kwargs))
    return space, system, local, res


class TestSolveGlobal:
    def test_feasible_case_closes_at_zero(self):
        _, _, _, res = run_global("two_bus_feasible")
        assert res.status == bnb.STATUS_OPTIMAL
        assert res.objective <= 1e-8
        assert res.gap <= 1e-4

    def test_infeasible_case_certified(self):
        space, system, local, res = run_global("micro_infeasible_single")
        assert res.status == bnb.STATUS_OPTIMAL
        assert res.gap <= 1e-4
        assert res.objective == pytest.approx(local.objective, rel=1e-6)
        # incumbent satisfies the exact lifted system
        assert np.abs(system.bilinear_residuals(res.x)).max() <= 1e-7
        assert np.abs(system.a_eq @ res.x - system.b_eq).max() <= 1e-6

    def test_bound_never_exceeds_incumbent_in_log(self):
        _, _, _, res = run_global("micro_infeasible_threephase")
        assert res.log_lines
        for line in res.log_lines:
            fields = dict(tok.split("=") for tok in line.split())
            assert float(fields["f_bd"]) <= float(fields["f_inc"]) + 1e-9

    def test_node_limit_status(self):
        _, _, _, res = run_global("micro_infeasible_single", node_limit=0)
        assert res.status == "node-limit"

    def test_warm_start_incumbent_used(self):
        space, system, local, res = run_global("micro_infeasible_single")
        assert res.objective <= local.objective + 1e-9

    def test_source_magnitudes_reported(self):
        space, _, _, res = run_global("micro_infeasible_single")
        assert set(res.source_magnitudes) == set(space.src_index)
        assert max(res.source_magnitudes.values()) > 1e-3
