"""Lifted bilinear model assembly, bound propagation, and the residual oracle."""

import json

import numpy as np
import pytest

import oracles
from gridinfeas import cases, formulation, network


def build_case(name, norm="l2"):
    net = network.parse_feeder(cases.feeder_text(name))
    space, system = formulation.build(net, norm=norm)
    return net, space, system


def zero_load_doc():
    doc = cases.feeder_document("two_bus_feasible")
    doc["nodes"][1]["loads"] = {}
    return doc


class TestModelCounts:
    """Hand-countable structure of the single-phase two-node model."""

    def test_one_voltage_square_lifting(self):
        _, space, system = build_case("two_bus_feasible")
        squares = [t for t in system.bilinear if t[1] == t[2]]
        # one lifted voltage magnitude = one (dvr^2, dvi^2) pair
        assert len(squares) == 2
        assert len(space.entries) == 1
        e = space.entries[0]
        assert e.z_dvr2 is not None and e.z_dvi2 is not None

    def test_two_load_admittance_bilinears(self):
        _, space, system = build_case("two_bus_feasible")
        e = space.entries[0]
        prod = {(int(t[1]), int(t[2])) for t in system.bilinear}
        assert (e.g, e.vsq) in prod or (e.vsq, e.g) in prod
        assert (e.b, e.vsq) in prod or (e.vsq, e.b) in prod

    def test_two_load_current_bilinear_pairs(self):
        _, space, system = build_case("two_bus_feasible")
        e = space.entries[0]
        cur = [z for z in (e.z_g_dvr, e.z_g_dvi, e.z_b_dvr, e.z_b_dvi)
               if z is not None]
        assert len(cur) == 4  # two (real, imaginary) pairs

    def test_two_kcl_equalities(self):
        _, space, system = build_case("two_bus_feasible")
        (ir, ii), = space.src_index.values()
        a = system.a_eq.tocsc()
        kcl_rows = set(a[:, ir].nonzero()[0]) | set(a[:, ii].nonzero()[0])
        assert len(kcl_rows) == 2

    def test_total_equality_rows(self):
        _, _, system = build_case("two_bus_feasible")
        # lifting 1 + admittance 2 + load current 2 + line current 2 + KCL 2
        assert system.a_eq.shape[0] == 9

    def test_zero_load_drops_admittance_variables(self):
        net = network.parse_feeder(json.dumps(zero_load_doc()))
        space, system = formulation.build(net, norm="l2")
        e = space.entries[0]
        assert e.g is None and e.b is None
        assert len(system.bilinear) == 2  # only the voltage lifting squares

    def test_slack_carries_no_variables(self):
        _, space, _ = build_case("two_bus_feasible")
        assert all(key != "src" for _, key, _ in space.names)


class TestBounds:
    def test_deviation_box(self):
        net, space, _ = build_case("two_bus_feasible")
        b = formulation.initial_bounds(space, net, dv_box=0.25)
        f = space.filtered
        assert np.all(b.lower[f] == -0.25) and np.all(b.upper[f] == 0.25)

    def test_vsq_lower_bound_clipped_by_voltage_limit(self):
        net, space, _ = build_case("two_bus_feasible")
        b = formulation.initial_bounds(space, net, dv_box=0.25)
        e = space.entries[0]
        # propagated lower (0.75^2 = 0.5625) is weaker than (V^L)^2 = 0.64
        assert b.lower[e.vsq] == pytest.approx(0.64)
        assert b.upper[e.vsq] == pytest.approx(1.44)

    def test_tighter_box_dominates_voltage_limit(self):
        net, space, _ = build_case("two_bus_feasible")
        b = formulation.initial_bounds(space, net, dv_box=0.05)
        e = space.entries[0]
        assert b.lower[e.vsq] == pytest.approx(0.95 ** 2)

    def test_conflicting_limits_raise(self):
        doc = cases.feeder_document("two_bus_feasible")
        doc["nodes"][1]["vmin_pu"] = 1.19
        doc["nodes"][1]["vmax_pu"] = 1.20
        net = network.parse_feeder(json.dumps(doc))
        space, _ = formulation.build(net, norm="l2")
        with pytest.raises(formulation.BoxInfeasibleError):
            formulation.initial_bounds(space, net, dv_box=0.01)

    def test_propagation_is_inclusion_monotone(self):
        net, space, _ = build_case("coupled_feasible_13")
        wide = formulation.initial_bounds(space, net, dv_box=0.25)
        tight = formulation.initial_bounds(space, net, dv_box=0.10)
        assert np.all(tight.lower >= wide.lower - 1e-12)
        assert np.all(tight.upper <= wide.upper + 1e-12)


class TestStartsAndResiduals:
    def test_flat_start_exact_on_zero_load(self):
        net = network.parse_feeder(json.dumps(zero_load_doc()))
        space, system = formulation.build(net, norm="l2")
        x0 = formulation.flat_start(space, system, net)
        assert np.abs(system.a_eq @ x0 - system.b_eq).max() == 0.0
        assert np.abs(system.bilinear_residuals(x0)).max() == 0.0
        assert system.objective_value(x0) == 0.0

    def test_residual_oracle_zero_load_flat(self):
        net = network.parse_feeder(json.dumps(zero_load_doc()))
        volts = {(n.id, ph): n.nominal_phasor(ph)
                 for n in net.nodes for ph in n.phases}
        rep = formulation.evaluate_residual(net, volts, norm="l2")
        assert rep.objective == 0.0
        assert rep.limits_ok

    def test_residual_vanishes_at_power_flow_solution(self):
        doc = cases.feeder_document("two_bus_feasible")
        net = network.parse_feeder(json.dumps(doc))
        volts = oracles.newton_power_flow(doc)
        rep = formulation.evaluate_residual(net, volts, norm="l2")
        assert rep.objective <= 1e-8
        assert rep.max_noncandidate_residual <= 1e-8
        assert rep.limits_ok

    def test_objective_value_l1_counts_splits(self):
        net, space, system = build_case("two_bus_feasible", norm="l1")
        x = formulation.flat_start(space, system, net)
        (splits,) = space.split_index.values()
        x[list(splits)] = [1.0, 0.0, 2.0, 0.0]
        assert system.objective_value(x) == pytest.approx(3.0)
