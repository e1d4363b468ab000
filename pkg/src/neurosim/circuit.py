"""Circuit graph: capacitive nodes, device branches, stimuli, event hooks.

A circuit is a list of nodes (each with a grounded capacitance or a
quasi-static flag), a set of named fixed-voltage rails, and branches whose
devices are behavioral MOSFETs, NEM relay switches, or ideal passives.
Stimuli bind time functions to current-source branches or to driven rails;
monitors watch node voltages for threshold crossings and hand events to
controllers (small deterministic automata such as the AER acknowledge
generator).  ``validate`` returns diagnostics instead of raising so that
config-driven front ends can report every problem at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .devices import MosParams, PassiveParams
from .relay import RelaySwitch

FALLING = "falling"
RISING = "rising"


@dataclass(frozen=True)
class StimulusSpec:
    """Time-dependent drive for a source branch or a driven rail.

    kind   'dc' | 'pulse-train' | 'pwl'
    level  dc value, or the active pulse level (amperes or volts)
    base   resting level between pulses
    width  pulse width, seconds (pulse trains)
    period pulse period, seconds (pulse trains)
    start  time of the first pulse edge / first pwl point
    points pwl breakpoints as (time, value), linearly interpolated
    """

    kind: str = "dc"
    level: float = 0.0
    base: float = 0.0
    width: float = 0.0
    period: float = 0.0
    start: float = 0.0
    points: tuple[tuple[float, float], ...] = ()

    def validate(self) -> list[str]:
        problems = []
        if self.kind not in ("dc", "pulse-train", "pwl"):
            problems.append(f"unknown stimulus kind {self.kind!r}")
        if self.kind == "pulse-train":
            if not (self.width > 0.0 and self.period > 0.0):
                problems.append("pulse-train needs width > 0 and period > 0")
            elif not self.width < self.period:
                problems.append(f"pulse width {self.width} must be < period {self.period}")
            if self.start < 0.0:
                problems.append("pulse start must be >= 0")
        if self.kind == "pwl":
            times = [t for t, _ in self.points]
            if not self.points:
                problems.append("pwl stimulus needs at least one point")
            elif any(t < 0.0 for t in times) or times != sorted(times):
                problems.append("pwl times must be nonnegative and increasing")
        return problems

    def value(self, t: float) -> float:
        if self.kind == "dc":
            return self.level
        if self.kind == "pulse-train":
            if t < self.start:
                return self.base
            phase = (t - self.start) % self.period
            return self.level if phase < self.width else self.base
        pts = self.points
        if t <= pts[0][0]:
            return pts[0][1]
        for (t0, v0), (t1, v1) in zip(pts, pts[1:]):
            if t <= t1:
                return v0 + (v1 - v0) * (t - t0) / (t1 - t0)
        return pts[-1][1]

    def edges_until(self, t_stop: float) -> list[float]:
        """Times at which the waveform has a corner; the solver never steps
        across one."""
        if self.kind == "dc":
            return []
        if self.kind == "pwl":
            return [t for t, _ in self.points if t <= t_stop]
        edges = []
        k = 0
        while True:
            t_on = self.start + k * self.period
            if t_on > t_stop:
                break
            edges.append(t_on)
            if t_on + self.width <= t_stop:
                edges.append(t_on + self.width)
            k += 1
        return edges


@dataclass(frozen=True)
class Node:
    """A circuit node with capacitance to ground.

    Quasi-static nodes carry no state: they are resolved algebraically each
    step to zero net current (used for fast internal nets whose dynamics
    are far below the solver's resolution of interest).
    """

    name: str
    capacitance: float = 0.0
    v_init: float = 0.0
    quasi_static: bool = False


@dataclass(frozen=True)
class Branch:
    """One device between circuit nodes/rails.

    terminals maps device terminal names to node or rail names:
      MOSFET      g, s, d    (drain current flows d -> s for n-type)
      RelaySwitch g, s, d    (body voltage lives in the RelaySwitch)
      passive     a, b       (branch current flows a -> b through the device)
    A current-source branch may carry a stimulus instead of a fixed level.
    """

    name: str
    device: MosParams | RelaySwitch | PassiveParams
    terminals: dict[str, str]
    tag: str = ""
    stimulus: StimulusSpec | None = None


@dataclass
class Monitor:
    """Threshold watch on a node voltage; fires a named event on crossing."""

    name: str
    node: str
    threshold: float
    direction: str = FALLING


class ControllerApi:
    """What a controller may do when handling an event.

    Implemented by the solver; declared here so controllers can be written
    and tested against a stub.
    """

    def set_rail(self, name: str, volts: float) -> None:
        raise NotImplementedError

    def schedule(self, tag: str, t_abs: float) -> None:
        raise NotImplementedError

    def emit(self, kind: str) -> None:
        raise NotImplementedError

    def voltage(self, name: str) -> float:
        raise NotImplementedError


@dataclass
class Circuit:
    """Node/branch graph plus rails, stimuli, monitors, and controllers."""

    nodes: list[Node] = field(default_factory=list)
    rails: dict[str, float] = field(default_factory=dict)
    branches: list[Branch] = field(default_factory=list)
    rail_stimuli: dict[str, StimulusSpec] = field(default_factory=dict)
    monitors: list[Monitor] = field(default_factory=list)
    controllers: list = field(default_factory=list)
    vdd: float = 0.5

    def node_names(self) -> list[str]:
        return [n.name for n in self.nodes]

    def find_node(self, name: str) -> Node | None:
        for n in self.nodes:
            if n.name == name:
                return n
        return None


def _is_dissipative(device) -> bool:
    if isinstance(device, (MosParams, RelaySwitch)):
        return True
    return isinstance(device, PassiveParams) and device.kind == "resistor"


def validate(circuit: Circuit) -> list[str]:
    """Check every circuit invariant; an empty list means simulatable.

    Each diagnostic names the offending node, branch, rail, or stimulus.
    """
    diags: list[str] = []
    names = circuit.node_names()
    seen = set()
    for name in names:
        if name in seen:
            diags.append(f"duplicate node name {name!r}")
        seen.add(name)
        if name in circuit.rails:
            diags.append(f"node {name!r} clashes with a rail of the same name")

    known = set(names) | set(circuit.rails)
    touched: dict[str, int] = {}
    for br in circuit.branches:
        expected = {"a", "b"} if isinstance(br.device, PassiveParams) else {"g", "s", "d"}
        if set(br.terminals) != expected:
            diags.append(
                f"branch {br.name!r}: terminals {sorted(br.terminals)} != expected {sorted(expected)}"
            )
        for term, ref in br.terminals.items():
            if ref not in known:
                diags.append(f"branch {br.name!r}: terminal {term!r} references unknown node {ref!r}")
            elif ref in seen:
                touched[ref] = touched.get(ref, 0) + 1
        if _is_dissipative(br.device) and not br.tag:
            diags.append(f"branch {br.name!r}: dissipative branch needs a nonempty ledger tag")
        if br.stimulus is not None:
            if not (isinstance(br.device, PassiveParams) and br.device.kind == "current-source"):
                diags.append(f"branch {br.name!r}: only current-source branches take a stimulus")
            for p in br.stimulus.validate():
                diags.append(f"branch {br.name!r} stimulus: {p}")
        if isinstance(br.device, PassiveParams) and br.device.kind == "capacitor":
            if all(ref not in circuit.rails for ref in br.terminals.values()):
                diags.append(
                    f"branch {br.name!r}: floating capacitor between two non-rail nodes "
                    "is unsupported; ground one terminal or fold it into node capacitance"
                )
        if isinstance(br.device, PassiveParams) and br.device.kind == "voltage-source":
            diags.append(
                f"branch {br.name!r}: voltage sources are expressed as rails or rail stimuli"
            )

    for node in circuit.nodes:
        if node.quasi_static:
            if node.capacitance != 0.0:
                diags.append(
                    f"node {node.name!r}: quasi-static nodes must not also carry capacitance"
                )
        elif touched.get(node.name) and not node.capacitance > 0.0:
            diags.append(
                f"node {node.name!r}: has branches but no capacitance and is not "
                "flagged quasi-static (floating node)"
            )
        if node.capacitance < 0.0:
            diags.append(f"node {node.name!r}: negative capacitance")
        if not math.isfinite(node.v_init):
            diags.append(f"node {node.name!r}: non-finite initial voltage")

    for rail, spec in circuit.rail_stimuli.items():
        if rail not in circuit.rails:
            diags.append(f"rail stimulus targets unknown rail {rail!r}")
        for p in spec.validate():
            diags.append(f"rail {rail!r} stimulus: {p}")

    qs_names = {n.name for n in circuit.nodes if n.quasi_static}
    for mon in circuit.monitors:
        if mon.node not in known:
            diags.append(f"monitor {mon.name!r} watches unknown node {mon.node!r}")
        elif mon.node in qs_names:
            diags.append(
                f"monitor {mon.name!r}: crossings on quasi-static node {mon.node!r} "
                "cannot be localized; watch an integrated node"
            )
        if mon.direction not in (FALLING, RISING):
            diags.append(f"monitor {mon.name!r}: bad direction {mon.direction!r}")

    return diags
