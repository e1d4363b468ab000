"""Circuit templates: LIF neuron and DPI synapse, CMOS and hybrid variants.

The two variants share every analog device; only the three digital switches
of the neuron (input gate, comparison-branch power gate, refractory-charge
enable) and the synapse input switch differ: MOSFETs with a finite
off-current in the CMOS variant, NEM relays in the hybrid variant.

Neuron operation, one cycle:

* integrate: the injection source charges the membrane against the leak
  device while the comparison branch sits power-gated, biased only by the
  weak pull-up.  As the membrane approaches the effective threshold the
  pull-down pair starts sinking pull-up current (the dominant static cost).
* fire: the comparison output collapses; the regenerative p-device dumps
  supply current onto the membrane, the refractory charge path tops up the
  refractory capacitor, and its voltage turns on the reset pull-down which
  drags the membrane to rest.  The handshake controller raises the request
  rail at the output crossing and answers with an acknowledge pulse that
  closes the power gate, which restores the comparison output high.
* refractory: the refractory capacitor discharges at the rate set by the
  refractory bias; the input stays gated off until it decays to the re-arm
  level, then integration restarts.

Default device values are the shipped 28 nm-flavored calibration; the
matching preset files expose every knob as config data.
"""

from __future__ import annotations

from dataclasses import dataclass

from .circuit import Branch, Circuit, ControllerApi, FALLING, Monitor, Node, RISING, StimulusSpec
from .devices import MosParams, PassiveParams
from .relay import RelayParams, relay_as_switch

CMOS = "cmos"
HYBRID = "hybrid"
VARIANTS = (CMOS, HYBRID)

# Fraction of vdd below which the membrane counts as "at rest" when
# measuring refractory dwell from a trace.
REST_FRACTION = 0.05

# Input re-arm level: the refractory-capacitor voltage at which the input
# switch is re-enabled.  Matches the relay release voltage so both variants
# share the same re-arm instant.
V_REARM = 0.2


@dataclass(frozen=True)
class NeuronBiases:
    """Operating point of one LIF neuron instance."""

    vdd: float = 0.5
    v_thrshld: float = 0.42
    v_lk: float = 0.264
    v_refr: float = 0.291
    i_inject: float = 250e-12
    c_mem: float = 500e-15
    c_r: float = 150e-15
    ack_latency: float = 100e-9
    ack_width: float = 1e-6

    def validate(self) -> list[str]:
        problems = []
        for key in ("v_thrshld", "v_lk", "v_refr"):
            v = getattr(self, key)
            if not (0.0 <= v <= self.vdd):
                problems.append(f"{key}={v} outside [0, vdd={self.vdd}]")
        if not self.vdd > 0.0:
            problems.append("vdd must be positive")
        if not (self.c_mem > 0.0 and self.c_r > 0.0):
            problems.append("c_mem and c_r must be positive")
        if self.i_inject < 0.0:
            problems.append("i_inject must be >= 0")
        if not (self.ack_latency > 0.0 and self.ack_width > 0.0):
            problems.append("ack_latency and ack_width must be positive")
        return problems


@dataclass(frozen=True)
class SynapseBiases:
    """Operating point of one DPI synapse instance."""

    vdd: float = 0.5
    v_w: float = 0.45
    v_tau: float = 0.35
    c_syn: float = 500e-15
    pulse_width: float = 1e-6
    pulse_rate: float = 100.0

    def validate(self) -> list[str]:
        problems = []
        for key in ("v_w", "v_tau"):
            v = getattr(self, key)
            if not (0.0 <= v <= self.vdd):
                problems.append(f"{key}={v} outside [0, vdd={self.vdd}]")
        if not self.c_syn > 0.0:
            problems.append("c_syn must be positive")
        if not (0.0 < self.pulse_width <= 20e-6):
            problems.append("pulse_width must be in (0, 20us]")
        if self.pulse_rate < 0.0:
            problems.append("pulse_rate must be >= 0")
        if self.pulse_rate > 0.0 and self.pulse_width >= 1.0 / self.pulse_rate:
            problems.append("pulse_width must be shorter than the pulse period")
        return problems


def _mos(polarity: str, i0: float, i_off_ref: float = 0.0, w_over_l: float = 1.0) -> MosParams:
    return MosParams(polarity=polarity, i0=i0, i_off_ref=i_off_ref, w_over_l=w_over_l)


# Shipped calibration for the LIF templates.  The CMOS energy anchors are
# fitted with these values; the hybrid variant uses the identical analog
# devices and replaces the three switches with relays.  Sizing constraints
# worth keeping in mind when retuning:
#   - m_pu's saturated current sets both the effective threshold (together
#     with m_spk2) and the dominant near-threshold static cost;
#   - m_spk1 must stay weaker than the pulldown at threshold so an early
#     acknowledge cannot abort a spike before the membrane resets;
#   - m_thr caps the crowbar current of the branch during the spike;
#   - m_gate's off-current is the main CMOS-only leak and shifts the CMOS
#     effective threshold upward, which is why the CMOS variant needs a
#     higher injection current for the same rate.
LIF_DEVICE_DEFAULTS: dict[str, MosParams] = {
    "m_in_gate": _mos("n", i0=5e-11, i_off_ref=6e-12),
    "m_leak": _mos("n", i0=5e-14, i_off_ref=0.5e-12),
    "m_feedback": _mos("p", i0=2e-14, i_off_ref=1e-12),
    "m_gate": _mos("p", i0=1e-11, i_off_ref=150e-12),
    "m_spk1": _mos("p", i0=1.5e-13, i_off_ref=2e-12),
    "m_pu": _mos("p", i0=3.4e-16),
    "m_spk2": _mos("n", i0=1e-13, i_off_ref=2e-12),
    "m_thr": _mos("n", i0=2e-14, i_off_ref=1e-12),
    "m_refr_p2": _mos("p", i0=3e-13, i_off_ref=20e-12),
    "m_refr_en": _mos("p", i0=1e-12, i_off_ref=20e-12),
    "m_refr_leak": _mos("n", i0=5e-14, i_off_ref=0.3e-12),
    "m_rst": _mos("n", i0=5e-12, i_off_ref=2e-12),
}

# Which LIF switches become relays in the hybrid variant, with their
# Fig.-3-style replacement topology and the rail the body ties to.  The
# refractory enable passes the high rail, so it is a "PMOS" replacement
# (and a p-device in the CMOS variant, which would otherwise choke while
# charging the refractory capacitor toward vdd).
LIF_RELAY_SWITCHES: dict[str, tuple[str, str]] = {
    "m_in_gate": ("nmos-no", "gnd"),
    "m_gate": ("nmos-no", "gnd"),
    "m_refr_en": ("pmos-no", "vdd"),
}

DPI_DEVICE_DEFAULTS: dict[str, MosParams] = {
    "m_in": _mos("n", i0=5e-12, i_off_ref=2e-12),
    "m_w": _mos("n", i0=1e-12, i_off_ref=0.5e-12),
    "m_tau": _mos("p", i0=5e-14, i_off_ref=0.3e-12),
    "m_syn": _mos("p", i0=1e-13, i_off_ref=0.1e-12),
}

# Node capacitance of the comparison-branch output: small but explicit, so
# the regenerative flip stays a dynamic trajectory instead of an algebraic
# jump.
C_COMP_OUT = 5e-15

TEMPLATE_NAMES = ("lif.cmos", "lif.hybrid", "dpi.cmos", "dpi.hybrid")


class LifHandshake:
    """AER receiver abstraction: fixed-latency acknowledge plus input gating.

    Drives four digital rails: ``req`` mirrors the comparison output (high
    while a spike is being generated), ``ack``/``ack_b`` form the
    acknowledge pulse that closes the comparison power gate, and ``in_en``
    gates the injection path from spike onset until the refractory
    capacitor decays to the re-arm level.
    """

    def __init__(self, vdd: float, latency: float, width: float, v_rearm: float):
        self.vdd = vdd
        self.latency = latency
        self.width = width
        self.v_rearm = v_rearm

    def start(self, api: ControllerApi) -> None:
        api.set_rail("req", 0.0)
        api.set_rail("req_b", self.vdd)
        api.set_rail("ack", 0.0)
        api.set_rail("ack_b", self.vdd)
        api.set_rail("in_en", self.vdd)

    def on_event(self, name: str, t: float, api: ControllerApi) -> None:
        if name == "spike_cross":
            api.emit("spike")
            api.set_rail("req", self.vdd)
            api.set_rail("req_b", 0.0)
            api.set_rail("in_en", 0.0)
            api.schedule("ack_rise", t + self.latency)
        elif name == "comp_restore":
            api.set_rail("req", 0.0)
            api.set_rail("req_b", self.vdd)
            # Ultra-short refractory settings never lift the refractory
            # capacitor above the re-arm level; re-enable immediately then.
            if api.voltage("VR") <= self.v_rearm:
                api.set_rail("in_en", self.vdd)
        elif name == "rearm_cross":
            if api.voltage("req") == 0.0:
                api.set_rail("in_en", self.vdd)
        elif name == "ack_rise":
            api.set_rail("ack", self.vdd)
            api.set_rail("ack_b", 0.0)
            api.emit("ack-rise")
            api.schedule("ack_fall", t + self.width)
        elif name == "ack_fall":
            api.set_rail("ack", 0.0)
            api.set_rail("ack_b", self.vdd)
            api.emit("ack-fall")


def _switch_branch(
    name: str,
    variant: str,
    relay_map: dict[str, tuple[str, str]],
    devices: dict[str, MosParams],
    rails: dict[str, float],
    gate: str,
    d: str,
    s: str,
    tag: str,
    relay_base: RelayParams,
) -> Branch:
    """A digital switch: MOSFET in the CMOS variant, relay in the hybrid."""
    if variant == HYBRID and name in relay_map:
        config, body_rail = relay_map[name]
        sw = relay_as_switch(config, rails[body_rail], relay_base)
        return Branch(name=name, device=sw, terminals={"g": gate, "d": d, "s": s}, tag=tag)
    return Branch(name=name, device=devices[name], terminals={"g": gate, "d": d, "s": s}, tag=tag)


def build_lif(
    variant: str,
    biases: NeuronBiases,
    devices: dict[str, MosParams] | None = None,
    relay_base: RelayParams | None = None,
) -> Circuit:
    """Construct the LIF neuron circuit for one variant.

    Node names: Vmem (membrane), Vcomp (comparison output), VR (refractory
    capacitor), plus the quasi-static internal nets Xin, Vpp, Ncmp, Xr.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    problems = biases.validate()
    if problems:
        raise ValueError("invalid neuron biases: " + "; ".join(problems))
    dev = dict(LIF_DEVICE_DEFAULTS)
    if devices:
        dev.update(devices)
    relay_base = relay_base if relay_base is not None else RelayParams()
    vdd = biases.vdd

    rails = {
        "vdd": vdd,
        "gnd": 0.0,
        "v_lk": biases.v_lk,
        "v_thr": biases.v_thrshld,
        "v_refr": biases.v_refr,
        # Digital rails owned by the handshake controller.
        "req": 0.0,
        "req_b": vdd,
        "ack": 0.0,
        "ack_b": vdd,
        "in_en": vdd,
    }

    nodes = [
        Node("Vmem", capacitance=biases.c_mem, v_init=0.0),
        Node("Vcomp", capacitance=C_COMP_OUT, v_init=vdd),
        Node("VR", capacitance=biases.c_r, v_init=0.0),
        Node("Xin", quasi_static=True, v_init=0.0),
        Node("Vpp", quasi_static=True, v_init=vdd),
        Node("Ncmp", quasi_static=True, v_init=0.0),
        Node("Xr", quasi_static=True, v_init=vdd),
    ]

    def sw(name, gate, d, s, tag):
        return _switch_branch(
            name, variant, LIF_RELAY_SWITCHES, dev, rails, gate, d, s, tag, relay_base
        )

    branches = [
        # Injection: compliant source into the gated input net.
        Branch(
            "inj",
            PassiveParams("current-source", biases.i_inject, v_clamp=vdd),
            {"a": "gnd", "b": "Xin"},
            tag="injection",
        ),
        sw("m_in_gate", "in_en", "Xin", "Vmem", "input-gate"),
        Branch("m_leak", dev["m_leak"], {"g": "v_lk", "d": "Vmem", "s": "gnd"}, tag="leak"),
        Branch("m_feedback", dev["m_feedback"], {"g": "Vcomp", "d": "vdd", "s": "Vmem"}, tag="feedback"),
        # Comparison branch: power gate, input pair, threshold limiter, pull-up.
        sw("m_gate", "ack", "vdd", "Vpp", "comparison"),
        Branch("m_spk1", dev["m_spk1"], {"g": "Vmem", "d": "Vpp", "s": "Vcomp"}, tag="comparison"),
        Branch("m_pu", dev["m_pu"], {"g": "gnd", "d": "vdd", "s": "Vcomp"}, tag="comparison"),
        Branch("m_spk2", dev["m_spk2"], {"g": "Vmem", "d": "Vcomp", "s": "Ncmp"}, tag="comparison"),
        Branch("m_thr", dev["m_thr"], {"g": "v_thr", "d": "Ncmp", "s": "gnd"}, tag="comparison"),
        # Refractory: charge path enabled during the acknowledge pulse, slow
        # leak sets the decay, reset device empties the membrane.  Tying the
        # charge to the handshake makes the reset depth independent of the
        # operating point, so the output is restored only after the neuron
        # has actually been reset.
        Branch("m_refr_p2", dev["m_refr_p2"], {"g": "ack_b", "d": "vdd", "s": "Xr"}, tag="refractory"),
        sw("m_refr_en", "ack_b", "Xr", "VR", "refractory"),
        Branch("m_refr_leak", dev["m_refr_leak"], {"g": "v_refr", "d": "VR", "s": "gnd"}, tag="refractory"),
        Branch("m_rst", dev["m_rst"], {"g": "VR", "d": "Vmem", "s": "gnd"}, tag="reset"),
    ]

    if variant == CMOS:
        # The CMOS power gate is a p-switch; drive it with the complement
        # rail so both variants close on acknowledge.
        for i, br in enumerate(branches):
            if br.name == "m_gate":
                branches[i] = Branch(
                    "m_gate", dev["m_gate"], {"g": "ack_b", "d": "vdd", "s": "Vpp"}, tag="comparison"
                )

    monitors = [
        Monitor("spike_cross", "Vcomp", vdd / 2.0, FALLING),
        Monitor("comp_restore", "Vcomp", vdd / 2.0, RISING),
        Monitor("rearm_cross", "VR", V_REARM, FALLING),
    ]
    controller = LifHandshake(vdd, biases.ack_latency, biases.ack_width, V_REARM)

    return Circuit(
        nodes=nodes,
        rails=rails,
        branches=branches,
        monitors=monitors,
        controllers=[controller],
        vdd=vdd,
    )


def build_dpi(
    variant: str,
    biases: SynapseBiases,
    devices: dict[str, MosParams] | None = None,
    relay_base: RelayParams | None = None,
) -> Circuit:
    """Construct the DPI synapse circuit for one variant.

    Node names: Vsyn (synaptic capacitor, starts charged to vdd) and the
    quasi-static discharge midpoint Xw.  The output device drives a virtual
    ground, so its branch current is the synaptic output current.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    problems = biases.validate()
    if problems:
        raise ValueError("invalid synapse biases: " + "; ".join(problems))
    dev = dict(DPI_DEVICE_DEFAULTS)
    if devices:
        dev.update(devices)
    relay_base = relay_base if relay_base is not None else RelayParams()
    vdd = biases.vdd

    rails = {
        "vdd": vdd,
        "gnd": 0.0,
        "v_w": biases.v_w,
        "v_tau": biases.v_tau,
        "pulse": 0.0,
    }
    if biases.pulse_rate > 0.0:
        stim = StimulusSpec(
            kind="pulse-train",
            level=vdd,
            base=0.0,
            width=biases.pulse_width,
            period=1.0 / biases.pulse_rate,
            start=1e-6,
        )
    else:
        stim = StimulusSpec(kind="dc", level=0.0)

    nodes = [
        Node("Vsyn", capacitance=biases.c_syn, v_init=vdd),
        Node("Xw", quasi_static=True, v_init=0.0),
    ]

    relay_map = {"m_in": ("nmos-no", "gnd")}
    branches = [
        Branch("m_tau", dev["m_tau"], {"g": "v_tau", "d": "vdd", "s": "Vsyn"}, tag="tau"),
        _switch_branch(
            "m_in", variant, relay_map, dev, rails, "pulse", "Vsyn", "Xw", "input-gate", relay_base
        ),
        Branch("m_w", dev["m_w"], {"g": "v_w", "d": "Xw", "s": "gnd"}, tag="weight"),
        Branch("m_syn", dev["m_syn"], {"g": "Vsyn", "d": "vdd", "s": "gnd"}, tag="synapse-output"),
    ]

    return Circuit(
        nodes=nodes,
        rails=rails,
        branches=branches,
        rail_stimuli={"pulse": stim},
        vdd=vdd,
    )


@dataclass(frozen=True)
class IdealLifSettings:
    """Settings for the idealized comparator-and-reset reference neuron."""

    v_threshold: float = 0.3
    t_refractory: float = 0.5e-3
    reset_width: float = 2e-6


class IdealComparatorReset:
    """Replaces spike generation and refractory with an ideal rule: on an
    upward threshold crossing, emit a spike, short the membrane to ground
    for reset_width, and block the input for t_refractory."""

    def __init__(self, vdd: float, settings: IdealLifSettings):
        self.vdd = vdd
        self.s = settings

    def start(self, api: ControllerApi) -> None:
        api.set_rail("in_en", self.vdd)
        api.set_rail("rst_gate", 0.0)

    def on_event(self, name: str, t: float, api: ControllerApi) -> None:
        if name == "threshold_cross":
            api.emit("spike")
            api.set_rail("in_en", 0.0)
            api.set_rail("rst_gate", self.vdd)
            api.schedule("reset_done", t + self.s.reset_width)
            api.schedule("refractory_done", t + self.s.t_refractory)
        elif name == "reset_done":
            api.set_rail("rst_gate", 0.0)
        elif name == "refractory_done":
            api.set_rail("in_en", self.vdd)


def build_lif_ideal(
    biases: NeuronBiases,
    settings: IdealLifSettings | None = None,
    leak: MosParams | None = None,
) -> Circuit:
    """LIF with the analog integrate-and-leak front end but an ideal
    comparator-and-reset back end; the oracle circuit for the spike-period
    law T = c_mem * v_th / (i_inject - i_leak) + t_refr."""
    problems = biases.validate()
    if problems:
        raise ValueError("invalid neuron biases: " + "; ".join(problems))
    settings = settings if settings is not None else IdealLifSettings()
    vdd = biases.vdd
    leak = leak if leak is not None else LIF_DEVICE_DEFAULTS["m_leak"]
    rails = {
        "vdd": vdd,
        "gnd": 0.0,
        "v_lk": biases.v_lk,
        "in_en": vdd,
        "rst_gate": 0.0,
    }
    nodes = [
        Node("Vmem", capacitance=biases.c_mem, v_init=0.0),
        Node("Xin", quasi_static=True, v_init=0.0),
    ]
    branches = [
        Branch(
            "inj",
            PassiveParams("current-source", biases.i_inject, v_clamp=vdd),
            {"a": "gnd", "b": "Xin"},
            tag="injection",
        ),
        Branch(
            "m_in_gate",
            MosParams(polarity="n", i0=1e-9),
            {"g": "in_en", "d": "Xin", "s": "Vmem"},
            tag="input-gate",
        ),
        Branch("m_leak", leak, {"g": "v_lk", "d": "Vmem", "s": "gnd"}, tag="leak"),
        Branch(
            "m_rst",
            MosParams(polarity="n", i0=1e-9),
            {"g": "rst_gate", "d": "Vmem", "s": "gnd"},
            tag="reset",
        ),
    ]
    monitors = [Monitor("threshold_cross", "Vmem", settings.v_threshold, RISING)]
    controller = IdealComparatorReset(vdd, settings)
    return Circuit(
        nodes=nodes,
        rails=rails,
        branches=branches,
        monitors=monitors,
        controllers=[controller],
        vdd=vdd,
    )


def build_template(name: str, biases=None, devices=None, relay_base=None) -> Circuit:
    """Dispatch on the stable template vocabulary lif.cmos / lif.hybrid /
    dpi.cmos / dpi.hybrid."""
    if name not in TEMPLATE_NAMES:
        raise ValueError(f"unknown template {name!r}; expected one of {TEMPLATE_NAMES}")
    kind, variant = name.split(".")
    if kind == "lif":
        return build_lif(variant, biases if biases is not None else NeuronBiases(), devices, relay_base)
    return build_dpi(variant, biases if biases is not None else SynapseBiases(), devices, relay_base)
