"""Feeder parsing, validation, and serialization round-trips."""

import dataclasses
import json

import numpy as np
import pytest

from gridinfeas import cases, network


def two_node_doc(**overrides):
    doc = cases.feeder_document("two_bus_feasible")
    doc.update(overrides)
    return doc


def parse(doc):
    return network.parse_feeder(json.dumps(doc))


class TestParsing:
    def test_per_unit_load_conversion(self):
        net = parse(two_node_doc())
        assert net.node("l1").p_load["a"] == pytest.approx(0.5)
        assert net.node("l1").q_load["a"] == pytest.approx(0.2)

    def test_default_weights_uniform_and_normalized(self):
        doc = cases.feeder_document("micro_infeasible_threephase")
        net = parse(doc)
        assert len(net.weights) == 3
        assert all(w == pytest.approx(1.0 / 3.0) for w in net.weights.values())
        assert sum(net.weights.values()) == pytest.approx(1.0, abs=1e-12)

    def test_undeclared_line_endpoint_names_the_node(self):
        doc = two_node_doc()
        doc["lines"][0]["to"] = "ghost"
        with pytest.raises(network.FeederFormatError, match="ghost"):
            parse(doc)

    def test_duplicate_node_id_rejected(self):
        doc = two_node_doc()
        doc["nodes"].append(dict(doc["nodes"][1]))
        with pytest.raises(network.FeederFormatError, match="duplicate"):
            parse(doc)

    def test_missing_slack_rejected(self):
        doc = two_node_doc()
        doc["nodes"][0]["kind"] = "load"
        with pytest.raises(network.FeederFormatError, match="slack"):
            parse(doc)

    def test_load_on_slack_rejected(self):
        doc = two_node_doc()
        doc["nodes"][0]["loads"] = {"a": {"p_kw": 1.0, "q_kvar": 0.0}}
        with pytest.raises(network.FeederFormatError, match="slack"):
            parse(doc)

    def test_explicit_weights_must_sum_to_one(self):
        doc = two_node_doc(weights={"l1:a": 0.5})
        with pytest.raises(network.FeederFormatError, match="sum"):
            parse(doc)

    def test_candidate_subset(self):
        doc = cases.feeder_document("micro_infeasible_chain")
        net = parse(doc)
        assert net.candidates == (("l2", "a"),)

    def test_slack_candidate_rejected(self):
        doc = two_node_doc(candidates=[["src", "a"]])
        with pytest.raises(network.FeederFormatError, match="slack"):
            parse(doc)

    def test_invalid_json_reports_format_error(self):
        with pytest.raises(network.FeederFormatError, match="JSON"):
            network.parse_feeder("{not json")


class TestValidation:
    def test_valid_network_has_no_diagnostics(self):
        assert network.validate(parse(two_node_doc())) == []

    def test_inverted_voltage_limits_flagged(self):
        net = parse(two_node_doc())
        bad = dataclasses.replace(net.node("l1"), vmin_pu=1.1, vmax_pu=0.9)
        net = dataclasses.replace(net, nodes=(net.nodes[0], bad))
        diags = network.validate(net)
        assert any("voltage limits inverted" in d.message for d in diags)

    def test_asymmetric_admittance_flagged(self):
        net = parse(cases.feeder_document("micro_infeasible_threephase"))
        y = net.lines[0].y_series.copy()
        y[0, 1] += 0.5
        net = dataclasses.replace(
            net, lines=(dataclasses.replace(net.lines[0], y_series=y),))
        diags = network.validate(net)
        assert any("not symmetric" in d.message for d in diags)

    def test_disconnected_graph_flagged(self):
        net = parse(two_node_doc())
        island = dataclasses.replace(net.node("l1"), id="island")
        net = dataclasses.replace(net, nodes=net.nodes + (island,))
        diags = network.validate(net)
        assert any("disconnected" in d.message for d in diags)

    def test_parse_rejects_invalid_networks_outright(self):
        doc = two_node_doc()
        doc["nodes"][1]["vmin_pu"] = 1.1
        doc["nodes"][1]["vmax_pu"] = 0.9
        with pytest.raises(network.FeederFormatError, match="inverted"):
            parse(doc)


class TestSerialization:
    @pytest.mark.parametrize("name", cases.case_names())
    def test_round_trip_is_exact(self, name):
        net1 = network.parse_feeder(cases.feeder_text(name))
        net2 = network.parse_feeder(network.serialize_network(net1))
        assert net1.slack_id == net2.slack_id
        assert net1.candidates == net2.candidates
        for n1 in net1.nodes:
            n2 = net2.node(n1.id)
            assert n1.phases == n2.phases
            for ph in n1.phases:
                assert n1.p_load.get(ph, 0.0) == n2.p_load.get(ph, 0.0)
                assert n1.q_load.get(ph, 0.0) == n2.q_load.get(ph, 0.0)
        for l1, l2 in zip(net1.lines, net2.lines):
            assert np.array_equal(l1.y_series, l2.y_series)
            assert l1.rating_pu == l2.rating_pu
        assert net1.weights == net2.weights
