"""Engine tests: analytic oracles, conservation, determinism, diagnostics."""

import hashlib
import math
import random

import numpy as np
import pytest
from scipy.linalg import expm

from neurosim.circuit import Branch, Circuit, Monitor, Node, StimulusSpec, validate
from neurosim.devices import MosParams, PassiveParams
from neurosim.relay import RelayParams, RelaySwitch
from neurosim.solver import (
    CircuitValidationError,
    SolverConfig,
    StiffnessError,
    idle_power,
    simulate,
)


def _isrc(name, value, a, b, tag="source", v_clamp=math.inf):
    return Branch(name, PassiveParams("current-source", value, v_clamp=v_clamp), {"a": a, "b": b}, tag=tag)


def _res(name, ohms, a, b, tag="load"):
    return Branch(name, PassiveParams("resistor", ohms), {"a": a, "b": b}, tag=tag)


class TestAnalyticCircuits:
    def test_current_ramp(self):
        # 250 pA into 500 fF for 1 ms charges to exactly V = I*t/C = 0.5 V.
        ckt = Circuit(
            nodes=[Node("n1", capacitance=500e-15)],
            rails={"gnd": 0.0},
            branches=[_isrc("i1", 250e-12, "gnd", "n1")],
        )
        trace, ledger = simulate(ckt, SolverConfig(t_stop=1e-3))
        assert trace.node_volts["n1"][-1] == pytest.approx(0.5, rel=1e-3)

    def test_rc_discharge_against_exponential(self):
        # 500 fF from 0.5 V through 1 MOhm: tau = 0.5 us.
        tau = 500e-15 * 1e6
        ckt = Circuit(
            nodes=[Node("n1", capacitance=500e-15, v_init=0.5)],
            rails={"gnd": 0.0},
            branches=[_res("r1", 1e6, "n1", "gnd")],
        )
        trace, _ = simulate(ckt, SolverConfig(t_stop=3 * tau, dt_max=tau / 20))
        v_at_tau = trace.voltage_at("n1", tau)
        assert v_at_tau == pytest.approx(0.5 * math.exp(-1.0), rel=5e-3)

    def test_capacitor_branch_to_rail(self):
        # Extra branch capacitor to vdd adds to the node capacitance.
        ckt = Circuit(
            nodes=[Node("n1", capacitance=250e-15)],
            rails={"gnd": 0.0, "vdd": 0.5},
            branches=[
                _isrc("i1", 250e-12, "gnd", "n1"),
                Branch("cx", PassiveParams("capacitor", 250e-15), {"a": "n1", "b": "vdd"}, tag="c"),
            ],
        )
        trace, ledger = simulate(ckt, SolverConfig(t_stop=1e-3))
        # I*t/(C1+C2) = 250p*1m/500f = 0.5
        assert trace.node_volts["n1"][-1] == pytest.approx(0.5, rel=1e-3)
        assert abs(ledger.conservation_error()) <= 0.01 * abs(ledger.total_supply) + 1e-21


def _random_rc(rng: random.Random, n_nodes: int):
    """Random grounded-capacitor RC network with rail sources; returns the
    circuit plus (A, b, caps) of dV/dt = A V + b for the oracle."""
    caps = [rng.uniform(0.2e-12, 2e-12) for _ in range(n_nodes)]
    v0 = [rng.uniform(0.0, 0.5) for _ in range(n_nodes)]
    nodes = [Node(f"n{i}", capacitance=caps[i], v_init=v0[i]) for i in range(n_nodes)]
    rails = {"gnd": 0.0, "vdd": 0.5}
    branches = []
    A = np.zeros((n_nodes, n_nodes))
    b = np.zeros(n_nodes)
    k = 0
    # spanning chain keeps every node connected
    pairs = [(i, i + 1) for i in range(n_nodes - 1)]
    for _ in range(n_nodes):
        i, j = rng.randrange(n_nodes), rng.randrange(n_nodes)
        if i != j:
            pairs.append((min(i, j), max(i, j)))
    for i, j in pairs:
        g = 1.0 / rng.uniform(0.2e6, 5e6)
        branches.append(_res(f"r{k}", 1.0 / g, f"n{i}", f"n{j}"))
        A[i, i] -= g / caps[i]
        A[i, j] += g / caps[i]
        A[j, j] -= g / caps[j]
        A[j, i] += g / caps[j]
        k += 1
    for i in range(n_nodes):
        if rng.random() < 0.7:
            g = 1.0 / rng.uniform(0.5e6, 5e6)
            rail = rng.choice(["gnd", "vdd"])
            branches.append(_res(f"rr{k}", 1.0 / g, f"n{i}", rail))
            A[i, i] -= g / caps[i]
            b[i] += g * rails[rail] / caps[i]
            k += 1
        if rng.random() < 0.4:
            cur = rng.uniform(-200e-12, 200e-12)
            branches.append(_isrc(f"is{k}", cur, "gnd", f"n{i}"))
            b[i] += cur / caps[i]
            k += 1
    ckt = Circuit(nodes=nodes, rails=rails, branches=branches)
    return ckt, np.array(A), b, np.array(v0)


def _linear_solution(A, b, v0, t):
    """Closed-form x(t) = e^{At} v0 + A^{-1}(e^{At} - I) b."""
    n = len(v0)
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = A
    M[:n, n] = b
    E = expm(M * t)
    return E[:n, :n] @ v0 + E[:n, n]


class TestLinearOracle:
    def test_sup_norm_against_closed_form(self):
        rng = random.Random(42)
        for trial in range(10):
            ckt, A, b, v0 = _random_rc(rng, rng.randint(2, 5))
            t_stop = 20e-6
            trace, _ = simulate(ckt, SolverConfig(t_stop=t_stop, dt_max=1e-6))
            names = [n.name for n in ckt.nodes]
            worst = 0.0
            for frac in (0.1, 0.3, 0.5, 0.7, 1.0):
                t = t_stop * frac
                exact = _linear_solution(A, b, v0, t)
                for i, name in enumerate(names):
                    err = abs(trace.voltage_at(name, t) - exact[i])
                    worst = max(worst, err / max(0.05, abs(exact[i])))
            assert worst <= 0.005, f"trial {trial}: sup-norm {worst:.4%}"

    def test_energy_conservation_random_networks(self):
        rng = random.Random(20260810)
        for _ in range(100):
            ckt, *_ = _random_rc(rng, rng.randint(2, 6))
            t_stop = rng.uniform(5e-6, 50e-6)
            _, ledger = simulate(ckt, SolverConfig(t_stop=t_stop))
            scale = max(abs(ledger.total_supply), abs(ledger.stored_delta), 1e-18)
            assert abs(ledger.conservation_error()) <= 0.01 * scale


class TestDeterminism:
    def test_bit_identical_reruns(self):
        def run_hash():
            rng = random.Random(5)
            ckt, *_ = _random_rc(rng, 4)
            trace, ledger = simulate(ckt, SolverConfig(t_stop=20e-6))
            blob = repr(list(trace.times)) + repr(
                [list(trace.node_volts[n]) for n in trace.node_names]
            ) + ledger.to_json()
            return hashlib.sha256(blob.encode()).hexdigest()

        assert run_hash() == run_hash()


class TestValidate:
    def _lif(self):
        from neurosim.templates import NeuronBiases, build_lif

        return build_lif("hybrid", NeuronBiases())

    def test_well_formed_template_is_clean(self):
        assert validate(self._lif()) == []

    def test_unknown_node_diagnostic(self):
        ckt = self._lif()
        ckt.branches.append(_res("bad", 1e6, "Vmem2", "gnd"))
        diags = validate(ckt)
        assert len(diags) == 1 and "unknown node 'Vmem2'" in diags[0]

    def test_floating_node_diagnostic(self):
        ckt = Circuit(
            nodes=[Node("a", capacitance=0.0)],
            rails={"gnd": 0.0},
            branches=[_res("r", 1e6, "a", "gnd")],
        )
        diags = validate(ckt)
        assert len(diags) == 1 and "floating node" in diags[0]

    def test_missing_tag_diagnostic(self):
        ckt = Circuit(
            nodes=[Node("a", capacitance=1e-12)],
            rails={"gnd": 0.0},
            branches=[Branch("r", PassiveParams("resistor", 1e6), {"a": "a", "b": "gnd"})],
        )
        assert any("ledger tag" in d for d in validate(ckt))

    def test_floating_capacitor_rejected(self):
        ckt = Circuit(
            nodes=[Node("a", capacitance=1e-12), Node("b", capacitance=1e-12)],
            rails={"gnd": 0.0},
            branches=[
                Branch("c", PassiveParams("capacitor", 1e-12), {"a": "a", "b": "b"}, tag="c"),
                _res("ra", 1e6, "a", "gnd"),
                _res("rb", 1e6, "b", "gnd"),
            ],
        )
        assert any("floating capacitor" in d for d in validate(ckt))

    def test_simulate_rejects_invalid(self):
        ckt = Circuit(
            nodes=[Node("a", capacitance=0.0)],
            rails={"gnd": 0.0},
            branches=[_res("r", 1e6, "a", "gnd")],
        )
        with pytest.raises(CircuitValidationError):
            simulate(ckt, SolverConfig(t_stop=1e-6))

    def test_pulse_width_must_be_below_period(self):
        spec = StimulusSpec(kind="pulse-train", level=1.0, width=2.0, period=1.0)
        assert spec.validate()


class TestQuasiStatic:
    def test_resistor_divider_kcl(self):
        # Quasi-static midpoint of a divider lands on the exact ratio.
        ckt = Circuit(
            nodes=[Node("mid", quasi_static=True)],
            rails={"gnd": 0.0, "vdd": 0.5},
            branches=[_res("r1", 1e6, "vdd", "mid"), _res("r2", 3e6, "mid", "gnd")],
        )
        trace, _ = simulate(ckt, SolverConfig(t_stop=1e-6))
        assert trace.node_volts["mid"][-1] == pytest.approx(0.375, abs=1e-9)
        assert trace.max_kcl_residual <= 1e-16

    def test_kcl_residual_within_target_on_lif(self):
        from neurosim.templates import NeuronBiases, build_lif

        ckt = build_lif("hybrid", NeuronBiases())
        trace, _ = simulate(ckt, SolverConfig(t_stop=2e-3))
        assert trace.max_kcl_residual <= 1e-16

    def test_monitor_on_quasi_static_node_rejected(self):
        ckt = Circuit(
            nodes=[Node("mid", quasi_static=True)],
            rails={"gnd": 0.0, "vdd": 0.5},
            branches=[_res("r1", 1e6, "vdd", "mid"), _res("r2", 1e6, "mid", "gnd")],
            monitors=[Monitor("m", "mid", 0.2)],
        )
        assert any("quasi-static" in d for d in validate(ckt))


class TestStimuli:
    def test_pulse_train_values_and_edges(self):
        spec = StimulusSpec(kind="pulse-train", level=1.0, base=0.0, width=1e-6, period=10e-6, start=5e-6)
        assert spec.value(0.0) == 0.0
        assert spec.value(5.5e-6) == 1.0
        assert spec.value(6.5e-6) == 0.0
        assert spec.value(15.5e-6) == 1.0
        edges = spec.edges_until(26.5e-6)
        assert edges == pytest.approx([5e-6, 6e-6, 15e-6, 16e-6, 25e-6, 26e-6])

    def test_pwl_interpolation(self):
        spec = StimulusSpec(kind="pwl", points=((0.0, 0.0), (1e-6, 1.0), (2e-6, 0.5)))
        assert spec.value(0.5e-6) == pytest.approx(0.5)
        assert spec.value(1.5e-6) == pytest.approx(0.75)
        assert spec.value(5e-6) == 0.5

    def test_pulsed_current_charge(self):
        # One 1-us 100-pA pulse delivers 100 fC -> 0.1 V on 1 pF.
        spec = StimulusSpec(kind="pulse-train", level=100e-12, width=1e-6, period=1e-3, start=1e-6)
        ckt = Circuit(
            nodes=[Node("n1", capacitance=1e-12)],
            rails={"gnd": 0.0},
            branches=[
                Branch(
                    "ipulse",
                    PassiveParams("current-source", 0.0),
                    {"a": "gnd", "b": "n1"},
                    tag="source",
                    stimulus=spec,
                )
            ],
        )
        trace, _ = simulate(ckt, SolverConfig(t_stop=10e-6))
        assert trace.node_volts["n1"][-1] == pytest.approx(0.1, rel=1e-3)

    def test_compliant_source_saturates_at_clamp(self):
        ckt = Circuit(
            nodes=[Node("n1", capacitance=100e-15)],
            rails={"gnd": 0.0},
            branches=[_isrc("i1", 1e-9, "gnd", "n1", v_clamp=0.5)],
        )
        trace, _ = simulate(ckt, SolverConfig(t_stop=200e-6))
        assert trace.node_volts["n1"][-1] == pytest.approx(0.5, abs=0.01)


class TestEvents:
    def test_monitor_crossing_localized(self):
        # Ramp crosses 0.25 V at exactly t = C*V/I = 0.5 ms.
        fired = []

        class Probe:
            def start(self, api):
                pass

            def on_event(self, name, t, api):
                fired.append((name, t))
                api.emit("spike")

        ckt = Circuit(
            nodes=[Node("n1", capacitance=500e-15)],
            rails={"gnd": 0.0},
            branches=[_isrc("i1", 250e-12, "gnd", "n1")],
            monitors=[Monitor("cross", "n1", 0.25, direction="rising")],
            controllers=[Probe()],
        )
        trace, _ = simulate(ckt, SolverConfig(t_stop=1e-3))
        assert len(fired) == 1
        assert fired[0][1] == pytest.approx(0.5e-3, abs=5e-9)
        assert trace.event_times("spike") == [pytest.approx(0.5e-3, abs=5e-9)]

    def test_relay_switching_in_circuit(self):
        # Relay gate driven by a pulse rail: conductance appears t_switch
        # after the pulse edge and the events carry matching entries.
        relay = RelaySwitch(params=RelayParams(), v_body=0.0)
        gate = StimulusSpec(kind="pulse-train", level=0.5, width=50e-6, period=200e-6, start=10e-6)
        ckt = Circuit(
            nodes=[Node("n1", capacitance=1e-12, v_init=0.0)],
            rails={"gnd": 0.0, "vdd": 0.5, "g": 0.0},
            branches=[Branch("sw", relay, {"g": "g", "d": "vdd", "s": "n1"}, tag="switch")],
            rail_stimuli={"g": gate},
        )
        trace, ledger = simulate(ckt, SolverConfig(t_stop=200e-6))
        closes = trace.event_times("relay-close")
        opens = trace.event_times("relay-open")
        assert closes == [pytest.approx(10e-6 + 100e-9, abs=1e-12)]
        assert opens == [pytest.approx(60e-6 + 100e-9, abs=1e-12)]
        # n1 charged to vdd through the closed contact
        assert trace.voltage_at("n1", 60e-6) == pytest.approx(0.5, abs=1e-3)
        assert "relay-actuation" in ledger.dissipated

    def test_open_relay_passes_no_charge(self):
        relay = RelaySwitch(params=RelayParams(), v_body=0.0)
        ckt = Circuit(
            nodes=[Node("n1", capacitance=1e-12, v_init=0.0)],
            rails={"gnd": 0.0, "vdd": 0.5, "g": 0.0},
            branches=[Branch("sw", relay, {"g": "g", "d": "vdd", "s": "n1"}, tag="switch")],
        )
        trace, _ = simulate(ckt, SolverConfig(t_stop=100e-6))
        assert max(abs(v) for v in trace.node_volts["n1"]) == 0.0
        assert max(abs(i) for i in trace.branch_currents["sw"]) == 0.0


class TestStiffness:
    def test_fast_rc_handled_or_diagnosed(self):
        # tau = 1 ns against a 1 ms horizon: the implicit machinery must
        # carry it without step-size underflow.
        ckt = Circuit(
            nodes=[Node("n1", capacitance=1e-14)],
            rails={"gnd": 0.0, "vdd": 0.5},
            branches=[_res("r1", 100.0, "vdd", "n1")],
        )
        trace, _ = simulate(ckt, SolverConfig(t_stop=1e-3))
        assert trace.node_volts["n1"][-1] == pytest.approx(0.5, rel=1e-6)

    def test_stiffness_error_names_node(self):
        import neurosim.solver as solver_mod

        ckt = Circuit(
            nodes=[Node("nstiff", capacitance=2.1e-14)],  # above stiff_c_max
            rails={"gnd": 0.0, "vdd": 0.5},
            branches=[_res("r1", 1.0, "vdd", "nstiff")],
        )
        old = solver_mod.ENABLE_STIFF_MODE
        solver_mod.ENABLE_STIFF_MODE = False
        try:
            with pytest.raises(StiffnessError) as exc:
                simulate(ckt, SolverConfig(t_stop=1e-3, dt_min=1e-9))
            assert "nstiff" in str(exc.value)
        finally:
            solver_mod.ENABLE_STIFF_MODE = old


class TestIdlePower:
    def test_capacitors_only_is_zero(self):
        ckt = Circuit(
            nodes=[Node("n1", capacitance=1e-12, v_init=0.2)],
            rails={"gnd": 0.0},
            branches=[Branch("c1", PassiveParams("capacitor", 1e-12), {"a": "n1", "b": "gnd"}, tag="c")],
        )
        assert idle_power(ckt, 1e-4) == 0.0

    def test_resistive_idle_power(self):
        # vdd across 1 MOhm: P = V^2/R = 0.25 uW.
        ckt = Circuit(
            nodes=[Node("mid", quasi_static=True)],
            rails={"gnd": 0.0, "vdd": 0.5},
            branches=[_res("r1", 0.5e6, "vdd", "mid"), _res("r2", 0.5e6, "mid", "gnd")],
        )
        assert idle_power(ckt, 1e-4) == pytest.approx(0.25e-6, rel=1e-6)


class TestTraceSerialization:
    def test_csv_schema_and_monotone_times(self, tmp_path):
        rng = random.Random(3)
        ckt, *_ = _random_rc(rng, 3)
        trace, ledger = simulate(ckt, SolverConfig(t_stop=10e-6))
        path = tmp_path / "trace.csv"
        trace.to_csv(path)
        lines = path.read_text().splitlines()
        header = lines[0].split(",")
        assert header[0] == "t_s"
        assert header[-1] == "event"
        assert all(h.endswith("_V") for h in header[1 : 1 + len(trace.node_names)])
        assert all(h.endswith("_A") for h in header[1 + len(trace.node_names) : -1])
        ts = [float(l.split(",")[0]) for l in lines[1:]]
        assert all(b > a for a, b in zip(ts, ts[1:]))
        # no empty numeric cells anywhere
        for line in lines[1:]:
            cells = line.split(",")
            assert all(c != "" for c in cells[:-1])

    def test_ledger_json_17_digits(self):
        import json

        rng = random.Random(4)
        ckt, *_ = _random_rc(rng, 2)
        _, ledger = simulate(ckt, SolverConfig(t_stop=5e-6))
        doc = json.loads(ledger.to_json())
        assert "total_supply_j" in doc and "static_j" in doc
        for tag in ledger.tags:
            assert set(doc[tag]) == {"dissipated_j", "delivered_j"}
        # static + dynamic partition the total exactly
        assert doc["static_j"] + doc["dynamic_j"] == pytest.approx(
            doc["total_dissipated_j"], abs=1e-24
        )
