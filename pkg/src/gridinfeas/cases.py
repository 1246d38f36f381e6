"""Bundled synthetic feeder corpus.

Small, deterministic feeders spanning feasible and infeasible conditions,
single- and three-phase, with and without inter-phase coupling.  The
``micro_*`` infeasible cases are phase-decoupled (diagonal admittance
blocks) so a dense per-phase grid search over the load-node voltage is an
independent optimum oracle.
"""

from __future__ import annotations

import json
import os

import numpy as np

BASE_VA = 1.0e6
BASE_V = 7.2e3


def _y_block(z_self: complex, z_mutual: complex, nphase: int) -> dict:
    z = np.full((nphase, nphase), z_mutual, dtype=complex)
    np.fill_diagonal(z, z_self)
    y = np.linalg.inv(z)
    return {"re": y.real.tolist(), "im": y.imag.tolist()}


def _line(f: str, t: str, phases: list[str], z_self: complex,
          z_mutual: complex = 0.0, rating_a: float | None = None) -> dict:
    return {"from": f, "to": t, "phases": phases,
            "y_series_pu": _y_block(z_self, z_mutual, len(phases)),
            "rating_a": rating_a}


def _node(nid: str, phases: list[str], kind: str = "load",
          loads: dict | None = None, vmin: float = 0.8,
          vmax: float = 1.2) -> dict:
    return {"id": nid, "phases": phases, "kind": kind,
            "vnom_pu": 1.0, "loads": loads or {},
            "vmin_pu": vmin, "vmax_pu": vmax}


def _doc(nodes, lines, candidates="all", weights=None) -> dict:
    return {"base_power_va": BASE_VA, "base_voltage_v": BASE_V,
            "nodes": nodes, "lines": lines,
            "candidates": candidates, "weights": weights}


def two_bus_feasible() -> dict:
    return _doc(
        [_node("src", ["a"], kind="slack"),
         _node("l1", ["a"], loads={"a": {"p_kw": 500.0, "q_kvar": 200.0}})],
        [_line("src", "l1", ["a"], 0.01 + 0.05j)])


def micro_infeasible_single() -> dict:
    # load far beyond the deliverable power of the line
    return _doc(
        [_node("src", ["a"], kind="slack"),
         _node("l1", ["a"], loads={"a": {"p_kw": 6000.0, "q_kvar": 1000.0}})],
        [_line("src", "l1", ["a"], 0.01 + 0.05j)])


def micro_infeasible_threephase() -> dict:
    # diagonal admittance: phases independent; only phase a is overloaded
    return _doc(
        [_node("src", ["a", "b", "c"], kind="slack"),
         _node("l1", ["a", "b", "c"],
               loads={"a": {"p_kw": 5500.0, "q_kvar": 800.0},
                      "b": {"p_kw": 400.0, "q_kvar": 100.0},
                      "c": {"p_kw": 1000.0, "q_kvar": 300.0}})],
        [_line("src", "l1", ["a", "b", "c"], 0.01 + 0.05j)])


def micro_infeasible_chain() -> dict:
    # 3-bus chain; the middle bus is unloaded and carries no source, so the
    # oracle can eliminate its voltage analytically
    return _doc(
        [_node("src", ["a"], kind="slack"),
         _node("m", ["a"]),
         _node("l2", ["a"], loads={"a": {"p_kw": 8000.0, "q_kvar": 900.0}})],
        [_line("src", "m", ["a"], 0.005 + 0.02j),
         _line("m", "l2", ["a"], 0.005 + 0.03j)],
        candidates=[["l2", "a"]])


def _coupled_13(extra_kw: float) -> dict:
    nodes = [_node("n0", ["a", "b", "c"], kind="slack")]
    lines = []
    backbone = ["n0", "n1", "n2", "n3", "n4"]
    for i in range(1, 5):
        nodes.append(_node(backbone[i], ["a", "b", "c"],
                           loads={p: {"p_kw": 120.0 + 20.0 * i,
                                      "q_kvar": 40.0}
                                  for p in ("a", "b", "c")}))
        lines.append(_line(backbone[i - 1], backbone[i], ["a", "b", "c"],
                           0.004 + 0.012j, 0.001 + 0.004j,
                           rating_a=900.0))
    laterals = [("n1", "l5", ["a"], 150.0), ("n2", "l6", ["b"], 180.0),
                ("n2", "l7", ["c"], 160.0), ("n3", "l8", ["a", "b"], 140.0),
                ("n4", "l9", ["b", "c"], 130.0), ("n4", "l10", ["a"], 170.0),
                ("n1", "l11", ["c"], 120.0), ("n3", "l12", ["a", "b", "c"], 110.0)]
    for parent, nid, phases, kw in laterals:
        nodes.append(_node(nid, phases,
                           loads={p: {"p_kw": kw, "q_kvar": 0.3 * kw}
                                  for p in phases}))
        lines.append(_line(parent, nid, phases, 0.01 + 0.03j,
                           0.002 + 0.008j if len(phases) > 1 else 0.0))
    if extra_kw:
        nodes[-1]["loads"]["a"]["p_kw"] += extra_kw
    return _doc(nodes, lines)


def coupled_feasible_13() -> dict:
    return _coupled_13(0.0)


def coupled_infeasible_13() -> dict:
    return _coupled_13(5200.0)


def _radial(n_buses: int, end_kw: float) -> dict:
    nodes = [_node("b0", ["a", "b", "c"], kind="slack")]
    lines = []
    for i in range(1, n_buses):
        nodes.append(_node(f"b{i}", ["a", "b", "c"],
                           loads={p: {"p_kw": 35.0, "q_kvar": 12.0}
                                  for p in ("a", "b", "c")}))
        lines.append(_line(f"b{i - 1}", f"b{i}", ["a", "b", "c"],
                           0.002 + 0.006j, 0.0005 + 0.002j))
    if end_kw:
        nodes[-1]["loads"]["a"]["p_kw"] += end_kw
    return _doc(nodes, lines)


def radial_feasible() -> dict:
    return _radial(10, 0.0)


def radial_infeasible() -> dict:
    return _radial(10, 5200.0)


CASES = {
    "two_bus_feasible": two_bus_feasible,
    "micro_infeasible_single": micro_infeasible_single,
    "micro_infeasible_threephase": micro_infeasible_threephase,
    "micro_infeasible_chain": micro_infeasible_chain,
    "coupled_feasible_13": coupled_feasible_13,
    "coupled_infeasible_13": coupled_infeasible_13,
    "radial_feasible": radial_feasible,
    "radial_infeasible": radial_infeasible,
}

FEASIBLE_CASES = ("two_bus_feasible", "coupled_feasible_13", "radial_feasible")
INFEASIBLE_CASES = ("micro_infeasible_single", "micro_infeasible_threephase",
                    "micro_infeasible_chain", "coupled_infeasible_13",
                    "radial_infeasible")
# phase-decoupled: dense grid search over load-node voltages is an oracle
MICRO_ORACLE_CASES = ("micro_infeasible_single", "micro_infeasible_threephase",
                      "micro_infeasible_chain")


def case_names() -> list[str]:
    return list(CASES)


def feeder_document(name: str) -> dict:
    return CASES[name]()


def feeder_text(name: str) -> str:
    return json.dumps(feeder_document(name), indent=2)


def write_all(directory: str) -> list[str]:
    os.makedirs(directory, exist_ok=True)
    paths = []
    for name in CASES:
        path = os.path.join(directory, f"{name}.json")
        with open(path, "w") as fh:
            fh.write(feeder_text(name))
        paths.append(path)
    return paths
