"""Config grammar: quantities, diagnostics, sweeps, round trips, fuzzing."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neurosim.config import (
    Quantity,
    expand_sweep,
    parse_config,
    parse_quantity,
    serialize_config,
)

VALID = """\
# hybrid neuron experiment
[circuit]
template = lif
variant = hybrid

[biases]
i_inject = 235 pA
c_mem = 500 fF
c_r = 150 fF
v_lk = 264 mV
ack_latency = 100 ns
ack_width = 1 us

[devices]
m_gate.i_off_ref = 90 pA
m_leak.i0 = 50 fA
relay.v_pull_in = 400 mV
relay.t_switch = 100 ns

[solver]
t_stop = 50 ms
dv_max = 5 mV

[sweep]
param = biases.i_inject
from = 50 pA
to = 500 pA
steps = 10
scale = linear

[output]
trace = out/trace.csv
ledger = out/ledger.json
"""

VALID_DPI = """\
[circuit]
template = dpi
variant = cmos
[biases]
v_w = 450 mV
v_tau = 350 mV
c_syn = 500 fF
pulse_width = 1 us
pulse_rate = 100 Hz
"""


class TestQuantities:
    @pytest.mark.parametrize(
        "text,expected,dim",
        [
            ("235 pA", 2.35e-10, "A"),
            ("500 fF", 5e-13, "F"),
            ("0.25 nA", 2.5e-10, "A"),
            ("1 us", 1e-6, "s"),
            ("100 mV", 0.1, "V"),
            ("10 kOhm", 1e4, "Ohm"),
            ("250 Hz", 250.0, "Hz"),
            ("1 MHz", 1e6, "Hz"),
            ("3", 3.0, ""),
            ("1e10", 1e10, ""),
            ("2.5 k", 2.5e3, ""),
            ("235pA", 2.35e-10, "A"),
            ("235 p A", 2.35e-10, "A"),
        ],
    )
    def test_parse(self, text, expected, dim):
        q, err = parse_quantity(text)
        assert not err
        assert q.magnitude == pytest.approx(expected, rel=1e-12)
        assert q.dimension == dim

    def test_case_sensitive_suffixes(self):
        milli, _ = parse_quantity("1 mV")
        mega, _ = parse_quantity("1 MHz")
        assert milli.magnitude == pytest.approx(1e-3)
        assert mega.magnitude == pytest.approx(1e6)

    def test_dimension_check(self):
        _, err = parse_quantity("100 mV", expected="A")
        assert "dimension mismatch" in err

    def test_garbage_rejected(self):
        for bad in ("", "volts", "1 xF", "1 2 3 V", "1 q"):
            q, err = parse_quantity(bad)
            assert q is None and err

    @settings(max_examples=200)
    @given(st.floats(allow_nan=False, allow_infinity=False, width=64))
    def test_print_parse_round_trip(self, mag):
        q = Quantity(mag, "A")
        q2, err = parse_quantity(str(q))
        assert not err
        assert q2.magnitude == mag  # exact: repr round-trips floats
        assert q2.dimension == "A"


class TestParse:
    def test_valid_fixture(self):
        res = parse_config(VALID)
        assert res.ok, [str(d) for d in res.diagnostics]
        cfg = res.config
        assert cfg.template_name() == "lif.hybrid"
        assert cfg.biases["i_inject"] == pytest.approx(2.35e-10)
        assert cfg.devices["relay"]["t_switch"] == pytest.approx(1e-7)
        assert cfg.sweep.steps == 10
        assert cfg.output["ledger"] == "out/ledger.json"

    def test_dpi_fixture(self):
        res = parse_config(VALID_DPI)
        assert res.ok
        assert res.config.biases["pulse_rate"] == pytest.approx(100.0)

    def test_dimension_mismatch_diagnostic(self):
        res = parse_config("[circuit]\ntemplate = lif\nvariant = cmos\n[biases]\nv_lk = 100 pA\n")
        assert res.config is None
        assert len(res.diagnostics) == 1
        d = res.diagnostics[0]
        assert d.line == 5 and "dimension mismatch" in d.message

    def test_unknown_key_diagnostic(self):
        res = parse_config("[circuit]\ntemplate = lif\nvariant = cmos\n[biases]\nv_zap = 1 V\n")
        assert res.config is None
        assert "unknown bias key" in res.diagnostics[0].message

    def test_unknown_device_instance(self):
        res = parse_config("[circuit]\ntemplate = dpi\nvariant = cmos\n[devices]\nm_gate.i0 = 1 pA\n")
        assert res.config is None
        assert "unknown device instance" in res.diagnostics[0].message

    def test_missing_circuit_section(self):
        res = parse_config("[biases]\nvdd = 0.5 V\n")
        assert res.config is None
        assert any("missing [circuit]" in d.message for d in res.diagnostics)

    def test_never_partial(self):
        res = parse_config(VALID + "\n[biases]\nbroken here\n")
        assert res.config is None

    def test_round_trip_serialize(self):
        cfg = parse_config(VALID).config
        text = serialize_config(cfg)
        cfg2 = parse_config(text).config
        assert cfg2 == cfg

    def test_round_trip_dpi(self):
        cfg = parse_config(VALID_DPI).config
        assert parse_config(serialize_config(cfg)).config == cfg


class TestSweep:
    def test_linear_grid(self):
        cfg = parse_config(VALID).config
        pts = expand_sweep(cfg)
        vals = [p.biases["i_inject"] for p in pts]
        assert len(vals) == 10
        assert vals[0] == pytest.approx(50e-12)
        assert vals[-1] == pytest.approx(500e-12)
        diffs = [b - a for a, b in zip(vals, vals[1:])]
        assert all(d == pytest.approx(diffs[0], rel=1e-9) for d in diffs)

    def test_log_grid_exact_endpoints(self):
        text = VALID.replace("scale = linear", "scale = log").replace(
            "from = 50 pA\nto = 500 pA\nsteps = 10", "from = 10 pA\nto = 250 pA\nsteps = 5"
        )
        cfg = parse_config(text).config
        pts = expand_sweep(cfg)
        vals = [p.biases["i_inject"] for p in pts]
        assert vals[0] == 10e-12 and vals[-1] == 250e-12  # exact endpoints

    def test_two_steps_is_just_endpoints(self):
        text = VALID.replace("steps = 10", "steps = 2")
        pts = expand_sweep(parse_config(text).config)
        assert [p.biases["i_inject"] for p in pts] == [50e-12, 500e-12]

    def test_degenerate_sweep_diagnostic(self):
        text = VALID.replace("to = 500 pA", "to = 50 pA")
        res = parse_config(text)
        assert res.config is None
        assert any("degenerate sweep" in d.message for d in res.diagnostics)

    def test_steps_below_two_diagnostic(self):
        text = VALID.replace("steps = 10", "steps = 1")
        res = parse_config(text)
        assert res.config is None
        assert any("steps >= 2" in d.message for d in res.diagnostics)

    def test_unknown_sweep_param(self):
        text = VALID.replace("param = biases.i_inject", "param = biases.zap")
        res = parse_config(text)
        assert res.config is None


def _mutate(text: str, rng: random.Random) -> tuple[str, int]:
    """Corrupt one line; returns the text and the 1-based line number."""
    lines = text.splitlines()
    k = rng.randrange(len(lines))
    mode = rng.randrange(5)
    if mode == 0:
        lines[k] = lines[k] + " $$$"
    elif mode == 1:
        lines[k] = "=" + lines[k]
    elif mode == 2:
        lines[k] = lines[k].replace("=", "", 1)
    elif mode == 3:
        lines[k] = "[nonsense"
    else:
        lines[k] = "zzz = 1 qq"
    return "\n".join(lines), k + 1


class TestFuzz:
    def test_parser_total_and_diagnostics_local(self):
        # 1000 mutated fixtures: the parser never raises, and no diagnostic
        # ever points above the corrupted line.
        rng = random.Random(1234)
        base_ok = parse_config(VALID)
        assert base_ok.ok
        for _ in range(1000):
            mutated, line = _mutate(VALID, rng)
            res = parse_config(mutated)  # must not raise
            if res.config is not None:
                continue  # mutation happened to stay valid
            for d in res.diagnostics:
                assert d.line >= line, (d, line, mutated.splitlines()[line - 1])

    def test_random_garbage_never_raises(self):
        rng = random.Random(99)
        alphabet = "abc[]=# \n0123.pnuV"
        for _ in range(300):
            blob = "".join(rng.choice(alphabet) for _ in range(rng.randrange(0, 200)))
            parse_config(blob)
