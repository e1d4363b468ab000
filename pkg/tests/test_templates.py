"""Neuron and synapse template behavior against analytic oracles."""

import math

import pytest

from neurosim.analysis import detect_spikes
from neurosim.devices import MosParams, mos_drain_current
from neurosim.solver import SolverConfig, simulate
from neurosim.templates import (
    DPI_DEVICE_DEFAULTS,
    IdealLifSettings,
    LIF_DEVICE_DEFAULTS,
    NeuronBiases,
    SynapseBiases,
    build_dpi,
    build_lif,
    build_lif_ideal,
    build_template,
)

UT = 0.02585


class TestLifBasics:
    def test_both_variants_validate(self):
        from neurosim.circuit import validate

        for variant in ("cmos", "hybrid"):
            assert validate(build_lif(variant, NeuronBiases())) == []

    def test_zero_injection_never_spikes(self):
        for variant in ("cmos", "hybrid"):
            ckt = build_lif(variant, NeuronBiases(i_inject=0.0))
            trace, _ = simulate(ckt, SolverConfig(t_stop=1.0, stop_after_spikes=1))
            assert trace.event_times("spike") == []
            assert max(trace.node_volts["Vmem"]) < 0.05

    def test_hybrid_spikes_with_refractory_plateaus(self):
        biases = NeuronBiases(i_inject=235e-12)
        ckt = build_lif("hybrid", biases)
        trace, _ = simulate(ckt, SolverConfig(t_stop=6e-3))
        train = detect_spikes(trace, threshold=biases.vdd / 2)
        assert train.count >= 3
        assert all(r > 0.2e-3 for r in train.refractory_periods)

    def test_membrane_bounded_by_rails(self):
        for variant in ("cmos", "hybrid"):
            ckt = build_lif(variant, NeuronBiases(i_inject=300e-12))
            trace, _ = simulate(ckt, SolverConfig(t_stop=4e-3))
            vm = trace.node_volts["Vmem"]
            assert min(vm) >= -0.01
            assert max(vm) <= 0.5 + 0.01

    def test_invalid_biases_rejected(self):
        with pytest.raises(ValueError):
            build_lif("cmos", NeuronBiases(v_lk=0.9))
        with pytest.raises(ValueError):
            build_lif("other", NeuronBiases())

    def test_template_dispatch(self):
        assert build_template("lif.hybrid") is not None
        assert build_template("dpi.cmos") is not None
        with pytest.raises(ValueError):
            build_template("lif.nmos")

    def test_relay_cycles_once_per_spike(self):
        ckt = build_lif("hybrid", NeuronBiases(i_inject=235e-12))
        trace, _ = simulate(ckt, SolverConfig(t_stop=6e-3))
        spikes = len(trace.event_times("spike"))
        closes = len(trace.event_times("relay-close"))
        assert spikes >= 3
        # three relays, each one close per spike (plus the initial input close)
        assert closes == pytest.approx(3 * spikes + 1, abs=3)


class TestGatingEfficacy:
    def test_comparison_power_lower_in_hybrid_during_integration(self):
        # Between acknowledge-fall and the next spike, the power-gated
        # comparison branch must dissipate strictly less in the hybrid.
        results = {}
        for variant in ("cmos", "hybrid"):
            ckt = build_lif(variant, NeuronBiases(i_inject=235e-12))
            trace, ledger = simulate(ckt, SolverConfig(t_stop=8e-3))
            falls = trace.event_times("ack-fall")
            spikes = trace.event_times("spike")
            assert len(spikes) >= 3
            # second integration phase: first ack-fall to second spike
            t0 = falls[0]
            t1 = min(s for s in spikes if s > t0)
            energy = ledger.dissipated_between(t0, t1, tags=["comparison"])
            results[variant] = energy / (t1 - t0)
        assert results["hybrid"] < results["cmos"]


class TestIdealizedLif:
    def test_period_matches_first_order_formula(self):
        # Ideal comparator-and-reset: T = C*Vth/(I - I_leak) + t_refr.
        biases = NeuronBiases(i_inject=150e-12, c_mem=500e-15)
        settings = IdealLifSettings(v_threshold=0.3, t_refractory=0.5e-3)
        leak = LIF_DEVICE_DEFAULTS["m_leak"]
        i_leak = mos_drain_current(leak, biases.v_lk, 0.0, 0.4)
        ckt = build_lif_ideal(biases, settings, leak=leak)
        trace, _ = simulate(ckt, SolverConfig(t_stop=20e-3))
        spikes = trace.event_times("spike")
        assert len(spikes) >= 4
        periods = [b - a for a, b in zip(spikes, spikes[1:])]
        measured = sum(periods) / len(periods)
        predicted = biases.c_mem * settings.v_threshold / (biases.i_inject - i_leak)
        predicted += settings.t_refractory
        assert measured == pytest.approx(predicted, rel=0.05)


class TestFICurve:
    def test_rate_nondecreasing_in_injection(self):
        # 20-point sweep per variant; rates must be nondecreasing.
        injs = [50e-12 + k * (500e-12 - 50e-12) / 19 for k in range(20)]
        for variant in ("cmos", "hybrid"):
            rates = []
            for inj in injs:
                ckt = build_lif(variant, NeuronBiases(i_inject=inj))
                trace, _ = simulate(
                    ckt,
                    SolverConfig(t_stop=120e-3, stop_after_spikes=5),
                )
                train = detect_spikes(trace, threshold=0.25)
                rates.append(train.mean_rate)
            for a, b in zip(rates, rates[1:]):
                assert b >= a * 0.995, (variant, rates)

    def test_rate_ceiling_from_refractory(self):
        for variant in ("cmos", "hybrid"):
            ckt = build_lif(variant, NeuronBiases(i_inject=400e-12))
            trace, _ = simulate(ckt, SolverConfig(t_stop=20e-3))
            train = detect_spikes(trace, threshold=0.25)
            assert train.count >= 3
            assert train.mean_rate <= 1.0 / train.mean_refractory


class TestDpi:
    def test_no_input_output_stays_near_zero(self):
        # Hybrid with no pulses: output current below 1% of a single-pulse
        # peak for the whole run.
        quiet = build_dpi("hybrid", SynapseBiases(pulse_rate=0.0))
        trace_q, _ = simulate(quiet, SolverConfig(t_stop=10e-3))
        i_quiet = max(abs(i) for i in trace_q.branch_currents["m_syn"])

        active = build_dpi("hybrid", SynapseBiases(pulse_rate=100.0))
        trace_a, _ = simulate(active, SolverConfig(t_stop=8e-3))
        i_peak = max(abs(i) for i in trace_a.branch_currents["m_syn"])
        assert i_peak > 0.0
        assert i_quiet < 0.01 * i_peak

    def test_recharge_time_constant_first_order(self):
        # After a single pulse, C_syn recharges toward vdd; the fitted tail
        # time constant must match tau = C*UT/I_tau within 2%.
        biases = SynapseBiases(pulse_rate=50.0)  # one pulse in the window
        ckt = build_dpi("hybrid", biases)
        trace, _ = simulate(ckt, SolverConfig(t_stop=19e-3))
        m_tau = DPI_DEVICE_DEFAULTS["m_tau"]
        i_tau = -mos_drain_current(m_tau, biases.v_tau, biases.vdd, 0.0)
        tau_pred = biases.c_syn * UT / i_tau

        ts, vs = trace.times, trace.node_volts["Vsyn"]
        # fit ln(vdd - Vsyn) on the deep tail where the recharge is linear
        pts = [
            (t, math.log(biases.vdd - v))
            for t, v in zip(ts, vs)
            if 2e-3 < t and 0.0002 < (biases.vdd - v) < 0.2 * UT
        ]
        assert len(pts) > 10
        n = len(pts)
        sx = sum(p[0] for p in pts)
        sy = sum(p[1] for p in pts)
        sxx = sum(p[0] * p[0] for p in pts)
        sxy = sum(p[0] * p[1] for p in pts)
        slope = (n * sxy - sx * sy) / (n * sxx - sx * sx)
        tau_fit = -1.0 / slope
        assert tau_fit == pytest.approx(tau_pred, rel=0.02)

    def test_discharge_monotone_in_pulse_width(self):
        lows = []
        for width in (0.5e-6, 1e-6, 2e-6):
            b = SynapseBiases(pulse_width=width, pulse_rate=50.0)
            ckt = build_dpi("cmos", b)
            trace, _ = simulate(ckt, SolverConfig(t_stop=3e-3))
            lows.append(min(trace.node_volts["Vsyn"]))
        assert lows[0] > lows[1] > lows[2]

    def test_cmos_input_leak_discharges_quiet_synapse(self):
        # The CMOS input switch leaks; with no activity the synapse node
        # sags measurably while the relay version holds.
        sag = {}
        for variant in ("cmos", "hybrid"):
            ckt = build_dpi(variant, SynapseBiases(pulse_rate=0.0))
            trace, _ = simulate(ckt, SolverConfig(t_stop=20e-3))
            sag[variant] = 0.5 - min(trace.node_volts["Vsyn"])
        assert sag["cmos"] > sag["hybrid"]
        assert sag["hybrid"] < 1e-3
