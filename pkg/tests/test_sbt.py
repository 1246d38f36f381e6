"""Sequential bound tightening: validity, contraction, determinism."""

import math

import numpy as np
import pytest

from gridinfeas import cases, formulation, localnlp, network, sbt


def pipeline(name, norm="l2", dv_box=0.25):
    net = network.parse_feeder(cases.feeder_text(name))
    space, system = formulation.build(net, norm=norm)
    bounds = formulation.initial_bounds(space, net, dv_box=dv_box)
    x0 = formulation.flat_start(space, system, net)
    local = localnlp.solve_local(system, bounds, init=x0)
    assert local.status == localnlp.CONVERGED
    return net, space, system, bounds, local


class TestWidthReduction:
    def make(self, widths):
        n = len(widths)
        lo = np.zeros(n)
        return formulation.Bounds(lo, lo + np.asarray(widths, dtype=float))

    def test_uniform_shrink(self):
        before = self.make([0.5, 0.5])
        after = self.make([0.01, 0.01])
        out = sbt.width_reduction(before, after, {"dv": np.array([0, 1])})
        assert out["dv"] == pytest.approx(98.0)

    def test_identical_is_zero(self):
        b = self.make([0.3, 0.7])
        out = sbt.width_reduction(b, b, {"dv": np.array([0, 1])})
        assert out["dv"] == pytest.approx(0.0)

    def test_mixed_widths_mean(self):
        before = self.make([0.5, 0.5])
        after = self.make([0.02, 0.0])
        out = sbt.width_reduction(before, after, {"dv": np.array([0, 1])})
        assert out["dv"] == pytest.approx(98.0)

    def test_zero_width_variables_excluded(self):
        before = self.make([0.5, 0.0])
        after = self.make([0.25, 0.0])
        out = sbt.width_reduction(before, after, {"dv": np.array([0, 1])})
        assert out["dv"] == pytest.approx(50.0)


class TestTightening:
    def test_eps_infinite_runs_exactly_one_iteration(self):
        net, space, system, bounds, local = pipeline("micro_infeasible_single")
        _, trace = sbt.tighten(space, system, net, bounds,
                               cutoff=local.objective, eps=math.inf)
        assert len(trace.iterations) == 1

    @pytest.mark.parametrize("name", ["two_bus_feasible",
                                      "micro_infeasible_single",
                                      "micro_infeasible_threephase"])
    def test_final_box_contains_local_solution(self, name):
        net, space, system, bounds, local = pipeline(name)
        tight, _ = sbt.tighten(space, system, net, bounds,
                               cutoff=local.objective)
        f = space.filtered
        assert np.all(local.x[f] >= tight.lower[f] - 1e-8)
        assert np.all(local.x[f] <= tight.upper[f] + 1e-8)

    def test_iteration_boxes_contract_monotonically(self):
        net, space, system, bounds, local = pipeline("micro_infeasible_threephase")
        _, trace = sbt.tighten(space, system, net, bounds,
                               cutoff=local.objective)
        lows = [np.array(it["lower"]) for it in trace.iterations]
        highs = [np.array(it["upper"]) for it in trace.iterations]
        for k in range(1, len(lows)):
            assert np.all(lows[k] >= lows[k - 1] - 1e-12)
            assert np.all(highs[k] <= highs[k - 1] + 1e-12)

    def test_infeasible_case_width_shrinks(self):
        net, space, system, bounds, local = pipeline("micro_infeasible_single")
        tight, trace = sbt.tighten(space, system, net, bounds,
                                   cutoff=local.objective)
        red = sbt.width_reduction(bounds, tight, {"dv": space.filtered})
        assert red["dv"] > 0.0
        assert trace.iterations[0]["reduction_pct"] > 0.0

    def test_worker_counts_agree_bitwise(self):
        net, space, system, bounds, local = pipeline("micro_infeasible_threephase")
        results = {}
        for workers in (1, 4):
            tight, _ = sbt.tighten(space, system, net, bounds.copy(),
                                   cutoff=local.objective, workers=workers)
            results[workers] = (tight.lower.copy(), tight.upper.copy())
        assert np.array_equal(results[1][0], results[4][0])
        assert np.array_equal(results[1][1], results[4][1])

    def test_trace_serializes_to_json(self):
        import json
        net, space, system, bounds, local = pipeline("micro_infeasible_single")
        _, trace = sbt.tighten(space, system, net, bounds,
                               cutoff=local.objective)
        doc = json.loads(trace.to_json())
        assert doc["subproblems"] > 0
        assert len(doc["iterations"]) >= 1
