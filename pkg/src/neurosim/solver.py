"""Transient node-capacitor simulation with event localization.

Integration scheme: adaptive explicit Heun (trapezoidal predictor) with an
embedded Euler error estimate, a hard per-step |dV| cap per node, and a
damped fixed-point backward-Euler fallback when the explicit step
underflows.  Quasi-static nodes are resolved algebraically each stage by
bracketed root finding on their KCL residual.  Relay transition deadlines,
scheduled controller actions, and stimulus corners are never stepped
across; monitor threshold crossings are localized by bisection on the step
to the configured event tolerance.

Energy accounting is exact by construction: every accepted step books, for
each branch, the same stage-averaged current that produced the node update,
against mid-step terminal voltages.  Summing those bilinear terms over
branches regroups exactly into rail supply minus stored-energy change, so
the conservation identity holds to rounding error independent of step size.

The inner loop is compiled: every branch becomes a closure over float
constants and integer indices into a flat voltage list, which keeps the
per-step cost low enough for second-long neuron runs in pure Python.
"""

from __future__ import annotations

import heapq
import json
import math
from array import array
from dataclasses import dataclass

from .circuit import Branch, Circuit, ControllerApi, FALLING, validate
from .devices import MosParams, PassiveParams
from .relay import (
    CLOSED,
    CLOSING,
    OPEN,
    OPENING,
    RelaySwitch,
    initial_state,
    relay_command,
    relay_conductance,
)

EVENT_KINDS = ("spike", "relay-close", "relay-open", "ack-rise", "ack-fall")

# Thermal-voltage-scale rolloff for compliant current sources.
_V_COMPLIANCE = 0.02585

# The implicit stiff mode can be disabled to force the pure explicit
# integrator (slow on stiff circuits; used for cross-checking).
ENABLE_STIFF_MODE = True

_MOS, _RELAY, _RES, _ISRC, _CAP = range(5)


class CircuitValidationError(ValueError):
    """simulate() was handed a circuit with outstanding diagnostics."""

    def __init__(self, diagnostics: list[str]):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = diagnostics


class StiffnessError(RuntimeError):
    """Step control underflowed dt_min without meeting the error target."""

    def __init__(self, node: str, t: float):
        super().__init__(f"step size underflow at t={t:.9g}s; stiffest node: {node}")
        self.node = node
        self.t = t


@dataclass(frozen=True)
class SolverConfig:
    """Step control and tolerance settings for one transient run."""

    t_stop: float
    dt_min: float = 1e-12
    dt_max: float = 100e-6
    dv_max: float = 5e-3
    event_tol: float = 1e-9
    rel_tol: float = 1e-5
    abs_v_tol: float = 1e-7
    abs_i_tol: float = 1e-18
    quiet_window: float = 10e-6
    stop_after_spikes: int | None = None
    # Nodes with 0 < C <= stiff_c_max are advanced implicitly within each
    # stage (backward-Euler term in their KCL solve): fast nets whose time
    # constants sit far below the step sizes of interest would otherwise
    # pin the explicit step to their stability limit.
    stiff_c_max: float = 2e-14

    def __post_init__(self) -> None:
        if not (0.0 < self.dt_min <= self.dt_max):
            raise ValueError("need 0 < dt_min <= dt_max")
        if not self.dv_max > 0.0:
            raise ValueError("dv_max must be positive")
        if self.t_stop < 0.0:
            raise ValueError("t_stop must be >= 0")


def _interp(ts, ys, t: float) -> float:
    """Linear interpolation with flat extrapolation."""
    n = len(ts)
    if n == 0:
        raise ValueError("empty series")
    if t <= ts[0]:
        return ys[0]
    if t >= ts[-1]:
        return ys[-1]
    lo, hi = 0, n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ts[mid] <= t:
            lo = mid
        else:
            hi = mid
    t0, t1 = ts[lo], ts[hi]
    if t1 == t0:
        return ys[hi]
    w = (t - t0) / (t1 - t0)
    return ys[lo] * (1.0 - w) + ys[hi] * w


@dataclass
class SimTrace:
    """Sampled result of one transient run.

    Sample times are strictly increasing; one row per accepted step, with
    event annotations attached to the row at the event instant.  Relay
    contact changes always have a matching relay-close/relay-open event.
    """

    node_names: list[str]
    branch_names: list[str]
    times: array
    node_volts: dict[str, array]
    branch_currents: dict[str, array]
    events: list[tuple[float, str]]
    relay_timeline: list[tuple[float, str, str]]
    max_kcl_residual: float = 0.0
    steps_accepted: int = 0
    steps_rejected: int = 0

    def voltage_at(self, node: str, t: float) -> float:
        return _interp(self.times, self.node_volts[node], t)

    def event_times(self, kind: str) -> list[float]:
        return [t for t, k in self.events if k == kind]

    def to_csv(self, path) -> None:
        """Write the documented trace schema:
        ``t_s,<node>_V...,<branch>_A...,event``"""
        cols_v = [self.node_volts[n] for n in self.node_names]
        cols_i = [self.branch_currents[b] for b in self.branch_names]
        ev_by_row: dict[int, list[str]] = {}
        ev_idx = 0
        for row, t in enumerate(self.times):
            while ev_idx < len(self.events) and self.events[ev_idx][0] <= t:
                ev_by_row.setdefault(row, []).append(self.events[ev_idx][1])
                ev_idx += 1
        header = (
            ["t_s"]
            + [f"{n}_V" for n in self.node_names]
            + [f"{b}_A" for b in self.branch_names]
            + ["event"]
        )
        with open(path, "w", newline="") as fh:
            fh.write(",".join(header) + "\n")
            for row in range(len(self.times)):
                vals = [repr(self.times[row])]
                vals += [repr(c[row]) for c in cols_v]
                vals += [repr(c[row]) for c in cols_i]
                vals.append(";".join(ev_by_row.get(row, [])))
                fh.write(",".join(vals) + "\n")


@dataclass
class EnergyLedger:
    """Per-tag energy integrals plus the global static/dynamic split.

    ``dissipated`` covers device losses (including relay contact loss and
    booked actuation energy); ``delivered`` is energy injected by
    current-source branches.  ``total_supply`` adds rail-supplied energy,
    source-delivered energy, and actuation draw, and equals
    total_dissipated + stored_delta up to rounding.  Dissipation farther
    than the quiet window from every event counts as static; the remainder
    is dynamic, so the two halves sum to the total exactly.
    """

    tags: list[str]
    dissipated: dict[str, float]
    delivered: dict[str, float]
    total_supply: float
    stored_delta: float
    static_dissipated: float
    dynamic_dissipated: float
    snapshot_times: array
    _cum_dissipated: dict[str, array]
    _cum_supply: array

    @property
    def total_dissipated(self) -> float:
        return sum(self.dissipated.values())

    def conservation_error(self) -> float:
        return self.total_supply - self.total_dissipated - self.stored_delta

    def dissipated_between(self, t0: float, t1: float, tags=None) -> float:
        """Dissipated energy in [t0, t1], optionally restricted to tags."""
        use = self.tags if tags is None else [t for t in self.tags if t in set(tags)]
        ts = self.snapshot_times
        total = 0.0
        for tag in use:
            cum = self._cum_dissipated[tag]
            total += _interp(ts, cum, t1) - _interp(ts, cum, t0)
        return total

    def supply_between(self, t0: float, t1: float) -> float:
        cum = self._cum_supply
        return _interp(self.snapshot_times, cum, t1) - _interp(self.snapshot_times, cum, t0)

    def to_json(self, path=None) -> str:
        """Serialize with tags as keys; joule values at 17 significant digits."""

        def sig17(x: float) -> float:
            return float(format(x, ".17g"))

        doc: dict = {
            tag: {
                "dissipated_j": sig17(self.dissipated[tag]),
                "delivered_j": sig17(self.delivered[tag]),
            }
            for tag in self.tags
        }
        doc["total_supply_j"] = sig17(self.total_supply)
        doc["total_dissipated_j"] = sig17(self.total_dissipated)
        doc["static_j"] = sig17(self.static_dissipated)
        doc["dynamic_j"] = sig17(self.dynamic_dissipated)
        doc["stored_delta_j"] = sig17(self.stored_delta)
        text = json.dumps(doc, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def _compile_mos(params: MosParams, gi: int, si: int, di: int):
    """Closure over the subthreshold law; identical math to devices.py."""
    i_spec = params.i0 * params.w_over_l
    nut = params.slope_n * params.ut
    ut = params.ut
    floor = params.floor_prefactor()
    ve = params.v_early
    has_early = math.isfinite(ve)
    p_type = params.polarity == "p"
    exp = math.exp
    expm1 = math.expm1

    def cur(V, t):
        vg, vs, vd = V[gi], V[si], V[di]
        if p_type:
            vg, vs, vd = -vg, -vs, -vd
        if vd >= vs:
            sign, lo, vds = 1.0, vs, vd - vs
        else:
            sign, lo, vds = -1.0, vd, vs - vd
        if vds == 0.0:
            return 0.0
        x = (vg - lo) / nut
        pre = i_spec * exp(x if x < 345.0 else 345.0) + floor
        c = pre * -expm1(-vds / ut)
        if has_early:
            c *= 1.0 + vds / ve
        if p_type:
            sign = -sign
        return sign * c

    return cur


class _Api(ControllerApi):
    def __init__(self, sim: "_Sim"):
        self._sim = sim

    def set_rail(self, name: str, volts: float) -> None:
        sim = self._sim
        sim.V[sim.idx[name]] = volts

    def schedule(self, tag: str, t_abs: float) -> None:
        sim = self._sim
        sim.seq += 1
        heapq.heappush(sim.timers, (t_abs, sim.seq, tag, sim.active_controller))

    def emit(self, kind: str) -> None:
        self._sim.record_event(kind)

    def voltage(self, name: str) -> float:
        sim = self._sim
        return sim.V[sim.idx[name]]


class _Sim:
    def __init__(self, circuit: Circuit, cfg: SolverConfig):
        self.circuit = circuit
        self.cfg = cfg
        self.t = 0.0

        # Flat voltage vector: rails first, then nodes.
        self.names: list[str] = list(circuit.rails) + [n.name for n in circuit.nodes]
        self.idx: dict[str, int] = {n: i for i, n in enumerate(self.names)}
        self.V: list[float] = [0.0] * len(self.names)
        for rail, v in circuit.rails.items():
            self.V[self.idx[rail]] = v
        for node in circuit.nodes:
            self.V[self.idx[node.name]] = node.v_init

        self.qs_names = [n.name for n in circuit.nodes if n.quasi_static]
        self.qs_idx = [self.idx[n] for n in self.qs_names]

        # Compile branches.
        self.branch_names: list[str] = []
        self.branch_tags: list[str] = []
        self.branch_kinds: list[int] = []
        self.branch_ab: list[tuple[int, int]] = []
        self.branch_fns: list = []
        self.branch_caps: list[float] = []
        self.branch_gates: list[int] = []  # gate voltage index; -1 for two-terminal
        self.branch_relay: list[int] = []  # relay table index; -1 for non-relays
        self.relay_meta: list[tuple[int, RelaySwitch, int]] = []  # (branch i, switch, gate idx)
        self.relay_g: list[float] = []
        self.relay_names: list[str] = []
        for br in circuit.branches:
            self._compile_branch(br)
        self.n_branch = len(self.branch_names)

        # Fold rail-referenced capacitor branches into node capacitance.
        rail_set = set(circuit.rails)
        extra_cap: dict[str, float] = {}
        self.folded_caps: list[tuple[int, float, int, int]] = []  # (node i, C, rail i, branch i)
        for bi in range(self.n_branch):
            if self.branch_kinds[bi] != _CAP:
                continue
            ai, b_i = self.branch_ab[bi]
            na, nb = self.names[ai], self.names[b_i]
            if na in rail_set and nb in rail_set:
                continue
            node, rail = (na, nb) if nb in rail_set else ((nb, na) if na in rail_set else (None, None))
            # validate() rejects floating caps, so one side is a rail here
            extra_cap[node] = extra_cap.get(node, 0.0) + self.branch_caps[bi]
            self.folded_caps.append((self.idx[node], self.branch_caps[bi], self.idx[rail], bi))

        touched = set()
        for ai, bi_ in self.branch_ab:
            touched.add(self.names[ai])
            touched.add(self.names[bi_])
        self.dyn_names: list[str] = []
        self.dyn_idx: list[int] = []
        self.dyn_caps: list[float] = []
        for node in circuit.nodes:
            if node.quasi_static:
                continue
            if node.name in touched or node.name in extra_cap:
                self.dyn_names.append(node.name)
                self.dyn_idx.append(self.idx[node.name])
                self.dyn_caps.append(node.capacitance + extra_cap.get(node.name, 0.0))
        self.n_dyn = len(self.dyn_names)
        dyn_pos = {i: k for k, i in enumerate(self.dyn_idx)}

        # Per-branch accumulation targets into the dyn-node net-current array.
        self.acc: list[tuple[int, int]] = []
        for bi in range(self.n_branch):
            ai, b_i = self.branch_ab[bi]
            self.acc.append((dyn_pos.get(ai, -1), dyn_pos.get(b_i, -1)))

        # QS adjacency: per node, [(branch index, sign into node)], plus the
        # input signature used to skip re-solving unperturbed nodes: the
        # voltage indices of every adjacent branch terminal, whether any
        # adjacent branch is time-dependent, and adjacent relay indices.
        self.qs_adj: list[list[tuple[int, float]]] = []
        self.qs_inputs: list[tuple[list[int], bool, list[int]]] = []
        self.qs_cache: list[tuple | None] = []
        gate_of: dict[int, int] = {}
        for k, (bi, _, gi) in enumerate(self.relay_meta):
            gate_of[bi] = gi
        for qi in self.qs_idx:
            adj = []
            in_idx: set[int] = set()
            time_dep = False
            radj: list[int] = []
            for bi in range(self.n_branch):
                if self.branch_kinds[bi] == _CAP:
                    continue
                ai, b_i = self.branch_ab[bi]
                if ai != qi and b_i != qi:
                    continue
                if ai == qi:
                    adj.append((bi, -1.0))
                if b_i == qi:
                    adj.append((bi, 1.0))
                in_idx.update((ai, b_i))
                if self.branch_kinds[bi] == _MOS:
                    in_idx.add(self.branch_gates[bi])
                if self.branch_kinds[bi] == _RELAY:
                    radj.append(self.branch_relay[bi])
                if self.branch_kinds[bi] == _ISRC and (
                    circuit.branches[bi].stimulus is not None
                    and circuit.branches[bi].stimulus.kind != "dc"
                ):
                    time_dep = True
            in_idx.discard(qi)
            self.qs_adj.append(adj)
            self.qs_inputs.append((sorted(in_idx), time_dep, radj))
            self.qs_cache.append(None)
        self.qs_nets = [self._compile_net(adj) for adj in self.qs_adj]

        # Net-inflow closures for the integrated nodes, used by the
        # backward-Euler fallback and the in-stage implicit solve of fast
        # nodes (folded capacitor branches contribute through the node
        # capacitance, not the branch current).
        self.dyn_nets = []
        for di in self.dyn_idx:
            adj = []
            for bi in range(self.n_branch):
                if self.branch_kinds[bi] == _CAP:
                    continue
                ai, b_i = self.branch_ab[bi]
                if ai == di:
                    adj.append((bi, -1.0))
                if b_i == di:
                    adj.append((bi, 1.0))
            self.dyn_nets.append(self._compile_net(adj))
        # Fast nodes handled implicitly inside every stage evaluation.
        self.impl_pos = [
            pos
            for pos, cap in enumerate(self.dyn_caps)
            if 0.0 < cap <= cfg.stiff_c_max
        ]
        self._h_ref = cfg.dt_max
        self.impl_inputs = []
        self.impl_cache: list[tuple | None] = []
        for pos in self.impl_pos:
            di = self.dyn_idx[pos]
            in_idx: set[int] = set()
            time_dep = False
            radj: list[int] = []
            for bi in range(self.n_branch):
                if self.branch_kinds[bi] == _CAP:
                    continue
                ai, b_i = self.branch_ab[bi]
                if ai != di and b_i != di:
                    continue
                in_idx.update((ai, b_i))
                if self.branch_kinds[bi] == _MOS:
                    in_idx.add(self.branch_gates[bi])
                if self.branch_kinds[bi] == _RELAY:
                    radj.append(self.branch_relay[bi])
                if self.branch_kinds[bi] == _ISRC and (
                    circuit.branches[bi].stimulus is not None
                    and circuit.branches[bi].stimulus.kind != "dc"
                ):
                    time_dep = True
            in_idx.discard(di)
            self.impl_inputs.append((sorted(in_idx), time_dep, radj))
            self.impl_cache.append(None)

        # Rail-attached branch terminals for supply booking.
        self.rail_terms: list[tuple[int, int, float]] = []  # (branch i, rail idx, sign)
        for bi in range(self.n_branch):
            ai, b_i = self.branch_ab[bi]
            if self.names[ai] in rail_set:
                self.rail_terms.append((bi, ai, 1.0))
            if self.names[b_i] in rail_set:
                self.rail_terms.append((bi, b_i, -1.0))

        self.relay_states = [initial_state(sw.params) for _, sw, _ in self.relay_meta]
        for k, (_, sw, _) in enumerate(self.relay_meta):
            self.relay_g[k] = relay_conductance(sw.params, self.relay_states[k])

        self.rail_stim = [(self.idx[r], spec) for r, spec in circuit.rail_stimuli.items()]

        self.timers: list = []
        self.seq = 0
        self.active_controller = None
        self.api = _Api(self)

        self.events: list[tuple[float, str]] = []
        self.relay_timeline: list[tuple[float, str, str]] = []
        self.max_residual = 0.0

        edges: set[float] = set()
        for br in circuit.branches:
            if br.stimulus is not None:
                edges.update(br.stimulus.edges_until(cfg.t_stop))
        for spec in circuit.rail_stimuli.values():
            edges.update(spec.edges_until(cfg.t_stop))
        self.stim_edges = sorted(e for e in edges if 0.0 < e <= cfg.t_stop)
        self.edge_ptr = 0

        self.ts = array("d")
        self.sample_nodes = self.dyn_names + self.qs_names
        self.sample_idx = [self.idx[n] for n in self.sample_nodes]
        self.node_cols = [array("d") for _ in self.sample_nodes]
        self.branch_cols = [array("d") for _ in range(self.n_branch)]

        tags: list[str] = []
        for tag in self.branch_tags:
            if tag and tag not in tags:
                tags.append(tag)
        if self.relay_meta and "relay-actuation" not in tags:
            tags.append("relay-actuation")
        self.tags = tags
        self.diss = {tag: 0.0 for tag in tags}
        self.deliv = {tag: 0.0 for tag in tags}
        self.supply = 0.0
        self.e_cum_diss = {tag: array("d") for tag in tags}
        self.e_cum_supply = array("d")
        self.step_diss = array("d")
        self.step_t0 = array("d")
        self.step_t1 = array("d")
        self.accepted = 0
        self.rejected = 0
        self.spike_count = 0

        self.monitors = [
            (m.name, self.idx[m.node], m.threshold, m.direction == FALLING)
            for m in circuit.monitors
        ]
        self.monitor_dynpos = [dyn_pos.get(mi, -1) for _, mi, _, _ in self.monitors]
        self.monitor_sign: list[int] = [0] * len(self.monitors)

    def _compile_branch(self, br: Branch) -> None:
        dev = br.device
        bi = len(self.branch_names)
        self.branch_names.append(br.name)
        self.branch_tags.append(br.tag)
        self.branch_gates.append(-1)
        self.branch_relay.append(-1)
        if isinstance(dev, MosParams):
            gi, si, di = (self.idx[br.terminals[k]] for k in ("g", "s", "d"))
            self.branch_kinds.append(_MOS)
            self.branch_ab.append((di, si))
            self.branch_gates[bi] = gi
            self.branch_fns.append(_compile_mos(dev, gi, si, di))
            self.branch_caps.append(0.0)
            return
        if isinstance(dev, RelaySwitch):
            gi, si, di = (self.idx[br.terminals[k]] for k in ("g", "s", "d"))
            k = len(self.relay_meta)
            self.relay_meta.append((bi, dev, gi))
            self.relay_g.append(0.0)
            self.relay_names.append(br.name)
            self.branch_relay[bi] = k
            g_list = self.relay_g

            def cur(V, t, _k=k, _a=di, _b=si):
                g = g_list[_k]
                return 0.0 if g == 0.0 else g * (V[_a] - V[_b])

            self.branch_kinds.append(_RELAY)
            self.branch_ab.append((di, si))
            self.branch_fns.append(cur)
            self.branch_caps.append(0.0)
            return
        assert isinstance(dev, PassiveParams)
        ai, b_i = self.idx[br.terminals["a"]], self.idx[br.terminals["b"]]
        if dev.kind == "resistor":
            inv_r = 1.0 / dev.value

            def cur(V, t, _a=ai, _b=b_i, _g=inv_r):
                return (V[_a] - V[_b]) * _g

            self.branch_kinds.append(_RES)
            self.branch_ab.append((ai, b_i))
            self.branch_fns.append(cur)
            self.branch_caps.append(0.0)
            return
        if dev.kind == "capacitor":
            self.branch_kinds.append(_CAP)
            self.branch_ab.append((ai, b_i))
            self.branch_fns.append(lambda V, t: 0.0)
            self.branch_caps.append(dev.value)
            return
        # current source, possibly stimulus-driven, possibly compliant
        stim = br.stimulus
        clamp = dev.v_clamp
        level = dev.value
        expm1 = math.expm1
        if stim is None and math.isinf(clamp):

            def cur(V, t, _lvl=level):
                return _lvl

        elif stim is None:

            def cur(V, t, _lvl=level, _b=b_i, _cl=clamp):
                head = (_cl - V[_b]) / _V_COMPLIANCE
                if head <= 0.0:
                    return 0.0
                return _lvl * -expm1(-head)

        elif math.isinf(clamp):

            def cur(V, t, _s=stim.value):
                return _s(t)

        else:

            def cur(V, t, _s=stim.value, _b=b_i, _cl=clamp):
                head = (_cl - V[_b]) / _V_COMPLIANCE
                if head <= 0.0:
                    return 0.0
                return _s(t) * -expm1(-head)

        self.branch_kinds.append(_ISRC)
        self.branch_ab.append((ai, b_i))
        self.branch_fns.append(cur)
        self.branch_caps.append(0.0)

    # ---- quasi-static solve ----

    def _compile_net(self, adj):
        pairs = [(self.branch_fns[bi], sign) for bi, sign in adj]
        if len(pairs) == 1:
            f1, s1 = pairs[0]
            return lambda V, t: s1 * f1(V, t)
        if len(pairs) == 2:
            (f1, s1), (f2, s2) = pairs
            return lambda V, t: s1 * f1(V, t) + s2 * f2(V, t)
        if len(pairs) == 3:
            (f1, s1), (f2, s2), (f3, s3) = pairs
            return lambda V, t: s1 * f1(V, t) + s2 * f2(V, t) + s3 * f3(V, t)

        def net(V, t):
            return sum(s * f(V, t) for f, s in pairs)

        return net

    def _qs_net(self, qpos: int, t: float) -> float:
        return self.qs_nets[qpos](self.V, t)

    def _signature(self, inputs: tuple, t: float) -> tuple:
        in_idx, time_dep, radj = inputs
        V = self.V
        sig = [V[i] for i in in_idx]
        for k in radj:
            sig.append(self.relay_g[k])
        if time_dep:
            sig.append(t)
        return tuple(sig)

    def _solve_algebraic(self, t: float, impl_refs: list[float] | None) -> None:
        """Joint Gauss-Seidel sweep over quasi-static nodes and the fast
        implicitly-integrated nodes; per-node input signatures skip solves
        whose neighborhoods have not changed."""
        qs_idx = self.qs_idx
        impl_pos = self.impl_pos if impl_refs is not None else []
        if not qs_idx and not impl_pos:
            return
        V = self.V
        lo_all, hi_all = self._bracket()
        tol_i = self.cfg.abs_i_tol
        caps = self.dyn_caps
        h_ref = self._h_ref
        for sweep in range(12):
            moved = 0.0
            for k, pos in enumerate(impl_pos):
                di = self.dyn_idx[pos]
                g_lin = caps[pos] / h_ref
                ref = impl_refs[k]
                sig = self._signature(self.impl_inputs[k], t) + (g_lin, ref)
                if sig == self.impl_cache[k]:
                    continue
                v_old = V[di]
                v_new = self._solve_kcl(
                    self.dyn_nets[pos], di, t, lo_all, hi_all, tol_i, g_lin, ref
                )
                V[di] = v_new
                self.impl_cache[k] = self._signature(self.impl_inputs[k], t) + (g_lin, ref)
                d = abs(v_new - v_old)
                if d > moved:
                    moved = d
            for qpos, qi in enumerate(qs_idx):
                sig = self._signature(self.qs_inputs[qpos], t)
                if sig == self.qs_cache[qpos]:
                    continue
                v_old = V[qi]
                v_new = self._solve_node(qpos, qi, t, lo_all, hi_all, tol_i)
                V[qi] = v_new
                self.qs_cache[qpos] = self._signature(self.qs_inputs[qpos], t)
                d = abs(v_new - v_old)
                if d > moved:
                    moved = d
            if moved < 1e-12:
                break

    def _solve_quasi_static(self, t: float) -> None:
        self._solve_algebraic(t, None)

    def _solve_node(self, qpos: int, qi: int, t: float, lo: float, hi: float, tol_i: float) -> float:
        return self._solve_kcl(self.qs_nets[qpos], qi, t, lo, hi, tol_i, 0.0, 0.0)

    def _solve_kcl(
        self,
        net,
        qi: int,
        t: float,
        lo: float,
        hi: float,
        tol_i: float,
        g_lin: float,
        v_ref: float,
    ) -> float:
        """Scalar root of  net_inflow(v) - g_lin*(v - v_ref) = 0.

        With g_lin = 0 this is the quasi-static KCL condition; with
        g_lin = C/h it is the backward-Euler update of one node.  The
        residual is strictly decreasing in v for the device models here, so
        a warm start, a geometric march to a near bracket, and Illinois
        false position always converge (plain secant crawls on the
        exponential laws)."""
        V = self.V

        def f(v: float) -> float:
            V[qi] = v
            r = net(V, t)
            if g_lin != 0.0:
                r -= g_lin * (v - v_ref)
            return r

        x = V[qi]
        if not (lo <= x <= hi):
            x = 0.5 * (lo + hi)
        fx = f(x)
        if -tol_i <= fx <= tol_i:
            return x
        # March geometrically from the warm point toward the root.
        step = 1e-3
        if fx > 0.0:
            a, fa = x, fx
            while True:
                probe = a + step
                if probe >= hi:
                    fb = f(hi)
                    if fb >= 0.0:
                        return hi
                    b = hi
                    break
                fp = f(probe)
                if fp <= 0.0:
                    b, fb = probe, fp
                    break
                a, fa = probe, fp
                step *= 8.0
        else:
            b, fb = x, fx
            while True:
                probe = b - step
                if probe <= lo:
                    fa = f(lo)
                    if fa <= 0.0:
                        return lo
                    a = lo
                    break
                fp = f(probe)
                if fp >= 0.0:
                    a, fa = probe, fp
                    break
                b, fb = probe, fp
                step *= 8.0
        # Illinois: root in [a, b] with fa > 0 > fb.
        side = 0
        for _ in range(80):
            x = (a * fb - b * fa) / (fb - fa) if fb != fa else 0.5 * (a + b)
            if not (a < x < b):
                x = 0.5 * (a + b)
            fx = f(x)
            if (-tol_i <= fx <= tol_i) or (b - a) <= 1e-15:
                return x
            if fx > 0.0:
                a, fa = x, fx
                if side == 1:
                    fb *= 0.5
                side = 1
            else:
                b, fb = x, fx
                if side == -1:
                    fa *= 0.5
                side = -1
        V[qi] = x
        return x

    # ---- stage evaluation ----

    def _apply_rail_stimuli(self, t: float) -> None:
        V = self.V
        for ri, spec in self.rail_stim:
            V[ri] = spec.value(t)

    def _stage(self, dyn_v: list[float], t: float, impl_ref: list[float] | None = None):
        """Derivatives and branch currents at one integration stage.

        Fast (implicit) nodes are solved against their backward-Euler KCL
        condition with reference values ``impl_ref`` (the step's start
        state; defaults to the stage input for fresh stages).  Their
        derivative entries are (v_solved - v_ref) / h, which keeps the
        Heun update and the energy booking consistent for any h.
        """
        V = self.V
        for i, v in zip(self.dyn_idx, dyn_v):
            V[i] = v
        if self.rail_stim:
            self._apply_rail_stimuli(t)
        if self.impl_pos:
            refs = [
                (dyn_v[pos] if impl_ref is None else impl_ref[pos]) for pos in self.impl_pos
            ]
            self._solve_algebraic(t, refs)
        else:
            self._solve_algebraic(t, None)
        fns = self.branch_fns
        currents = [fns[bi](V, t) for bi in range(self.n_branch)]
        net = [0.0] * self.n_dyn
        for (pa, pb), i_br in zip(self.acc, currents):
            if pa >= 0:
                net[pa] -= i_br
            if pb >= 0:
                net[pb] += i_br
        caps = self.dyn_caps
        derivs = [net[i] / caps[i] for i in range(self.n_dyn)]
        # Stages are private: the implicit advances must not leak into the
        # externally visible state, which is always the booked trajectory.
        for pos in self.impl_pos:
            V[self.dyn_idx[pos]] = dyn_v[pos]
        return derivs, currents

    def _bracket(self) -> tuple[float, float]:
        V = self.V
        lo, hi = -0.6, 0.6
        for i in self.dyn_idx:
            v = V[i]
            if v - 0.1 < lo:
                lo = v - 0.1
            if v + 0.1 > hi:
                hi = v + 0.1
        for name in self.circuit.rails:
            v = V[self.idx[name]]
            if v - 0.1 < lo:
                lo = v - 0.1
            if v + 0.1 > hi:
                hi = v + 0.1
        return lo, hi

    # ---- energy ----

    def _stored_energy(self) -> float:
        V = self.V
        e = 0.0
        for i, cap in zip(self.dyn_idx, self.dyn_caps):
            e += 0.5 * cap * V[i] * V[i]
        # Folded caps store energy against their rail, not ground; the node
        # capacitance above counted them ground-referenced, so correct it.
        for ni, cap, ri, _ in self.folded_caps:
            v, vr = V[ni], V[ri]
            e += 0.5 * cap * ((v - vr) ** 2 - v * v)
        return e

    # ---- events ----

    def record_event(self, kind: str) -> None:
        self.events.append((self.t, kind))
        if kind == "spike":
            self.spike_count += 1

    def _advance_relays(self) -> bool:
        """Run every relay state machine at the current time; True if any
        conductance or state changed (invalidating cached stage data)."""
        changed = False
        t = self.t
        V = self.V
        for k, (bi, sw, gi) in enumerate(self.relay_meta):
            state = self.relay_states[k]
            v_gb = V[gi] - sw.v_body
            due = state.contact in (CLOSING, OPENING) and t >= state.transition_deadline
            new = relay_command(sw.params, state, v_gb, t)
            if new == state:
                continue
            changed = True
            if new.cycle_count > state.cycle_count:
                self.record_event("relay-close")
            if due and state.contact == OPENING and new.contact in (OPEN, CLOSING):
                self.record_event("relay-open")
            began_transition = new.contact in (CLOSING, OPENING) and (
                state.contact != new.contact or new.transition_deadline != state.transition_deadline
            )
            if began_transition:
                e_act = 0.5 * sw.params.c_gb * self.circuit.vdd**2
                self.diss["relay-actuation"] += e_act
                self.supply += e_act
            if new.contact != state.contact:
                self.relay_timeline.append((t, self.relay_names[k], new.contact))
            self.relay_states[k] = new
            self.relay_g[k] = relay_conductance(sw.params, new)
        return changed

    def _next_relay_deadline(self) -> float:
        t = math.inf
        for state in self.relay_states:
            if state.contact in (CLOSING, OPENING) and state.transition_deadline < t:
                t = state.transition_deadline
        return t

    def _fire_due_timers(self) -> bool:
        fired = False
        while self.timers and self.timers[0][0] <= self.t + 1e-18:
            _, _, tag, controller = heapq.heappop(self.timers)
            self.active_controller = controller
            controller.on_event(tag, self.t, self.api)
            self.active_controller = None
            fired = True
        return fired

    def _crossed_monitors(self, v1=None) -> list[int]:
        """Monitor indices whose sign would flip in the watched direction
        between the last accepted state and candidate dyn voltages v1."""
        out = []
        V = self.V
        for m, (name, mi, thr, falling) in enumerate(self.monitors):
            pos = self.monitor_dynpos[m]
            v = V[mi] if (v1 is None or pos < 0) else v1[pos]
            sign = 1 if v - thr > 0.0 else -1
            prev = self.monitor_sign[m]
            if prev == 0:
                continue
            if falling and prev > 0 and sign < 0:
                out.append(m)
            elif not falling and prev < 0 and sign > 0:
                out.append(m)
        return out

    def _update_monitor_signs(self) -> None:
        V = self.V
        for m, (name, mi, thr, falling) in enumerate(self.monitors):
            self.monitor_sign[m] = 1 if V[mi] - thr > 0.0 else -1

    # ---- sampling ----

    def _sample(self, currents, dt: float, dv) -> None:
        self.ts.append(self.t)
        V = self.V
        for col, i in zip(self.node_cols, self.sample_idx):
            col.append(V[i])
        for bi in range(self.n_branch):
            self.branch_cols[bi].append(currents[bi])
        for tag in self.tags:
            self.e_cum_diss[tag].append(self.diss[tag])
        self.e_cum_supply.append(self.supply)

    def _cap_branch_currents(self, currents, dt: float, dv) -> None:
        """Fill displacement currents of folded capacitor branches."""
        if not self.folded_caps or dt <= 0.0:
            return
        dyn_pos = {i: k for k, i in enumerate(self.dyn_idx)}
        for ni, cap, ri, bi in self.folded_caps:
            pos = dyn_pos.get(ni, -1)
            if pos < 0:
                continue
            i_cap = cap * dv[pos] / dt
            ai, b_i = self.branch_ab[bi]
            currents[bi] = i_cap if ai == ni else -i_cap

    # ---- stepping ----

    def _try_step(self, v0, k1, i1, h):
        """One Heun attempt; None when error control rejects the step.

        Implicitly-advanced fast nodes are exempt from the truncation-error
        test (their stage solves are already stable); the |dV| cap still
        applies to them, which is what bounds the step through fast swings.
        """
        cfg = self.cfg
        dv_cap = cfg.dv_max * 1.05
        impl = self.impl_pos
        dv_cap_impl = cfg.dv_max * 0.1 * 1.05
        if h <= cfg.dt_min * 2.0000001:
            dv_cap_impl = math.inf  # below resolution: accept the settled jump
        pred = [v + h * k for v, k in zip(v0, k1)]
        for i, (v, p) in enumerate(zip(v0, pred)):
            if abs(p - v) > (dv_cap_impl if i in impl else dv_cap):
                return None
        self._h_ref = h
        # Sources are constant inside a step (corners clip the horizon), so
        # the second stage samples them at the midpoint; a step that ends
        # exactly on a corner must not read the post-edge level.
        k2, i2 = self._stage(pred, self.t + 0.5 * h, impl_ref=v0)
        abs_tol = cfg.abs_v_tol
        rel = cfg.rel_tol
        v1 = [0.0] * self.n_dyn
        ratio = 0.0
        for i in range(self.n_dyn):
            v = v0[i] + 0.5 * h * (k1[i] + k2[i])
            v1[i] = v
            if abs(v - v0[i]) > (dv_cap_impl if i in impl else dv_cap):
                return None
            if i in impl:
                continue
            err = 0.5 * h * (k2[i] - k1[i])
            if err < 0.0:
                err = -err
            av, bv = abs(v0[i]), abs(v)
            tol = abs_tol + rel * (av if av > bv else bv)
            if err > tol:
                return None
            r = err / tol
            if r > ratio:
                ratio = r
        i_avg = [0.5 * (a + b) for a, b in zip(i1, i2)]
        return (h, v1, i_avg, ratio)

    def _be_try(self, v0, k0, h):
        """One backward-Euler attempt: Gauss-Seidel sweeps of scalar KCL
        solves over every unknown node (quasi-static and integrated alike),
        with a trapezoid-comparison error estimate.  Returns None when the
        sweeps do not settle, the |dV| cap is exceeded, or the error test
        fails; the caller halves h.  A converged solution satisfies
        C*dV = h*I(V1) to the KCL tolerance, so booking end-of-step
        currents keeps the energy identity exact."""
        cfg = self.cfg
        V = self.V
        t1 = self.t + 0.5 * h  # midpoint sampling for in-step source levels
        if self.rail_stim:
            self._apply_rail_stimuli(t1)
        dv_cap = cfg.dv_max * 1.05
        # Predictor start, capped so the solve begins inside the trust region.
        for pos, i in enumerate(self.dyn_idx):
            dv = h * k0[pos]
            if dv > cfg.dv_max:
                dv = cfg.dv_max
            elif dv < -cfg.dv_max:
                dv = -cfg.dv_max
            V[i] = v0[pos] + dv

        lo, hi = -0.6, 0.6
        for name in self.circuit.rails:
            v = V[self.idx[name]]
            if v - 0.2 < lo:
                lo = v - 0.2
            if v + 0.2 > hi:
                hi = v + 0.2
        for pos, v in enumerate(v0):
            if v - 0.2 < lo:
                lo = v - 0.2
            if v + 0.2 > hi:
                hi = v + 0.2
        tol_i = cfg.abs_i_tol
        caps = self.dyn_caps
        unknowns = [i for i in self.qs_idx] + [i for i in self.dyn_idx]
        settled = False
        moved_prev = math.inf
        accel_left = 3
        prev_vals: dict[int, float] = {}
        for _ in range(40):
            moved = 0.0
            for qpos, qi in enumerate(self.qs_idx):
                v_old = V[qi]
                v_new = self._solve_kcl(self.qs_nets[qpos], qi, t1, lo, hi, tol_i, 0.0, 0.0)
                d = abs(v_new - v_old)
                if d > moved:
                    moved = d
            for pos, di in enumerate(self.dyn_idx):
                v_old = V[di]
                v_new = self._solve_kcl(
                    self.dyn_nets[pos], di, t1, lo, hi, tol_i, caps[pos] / h, v0[pos]
                )
                d = abs(v_new - v_old)
                if d > moved:
                    moved = d
            if moved < 1e-12:
                settled = True
                break
            # Aitken acceleration: a strongly coupled pair (e.g. a closed
            # relay between a quasi-static net and a large capacitor when
            # C/h is small) relaxes geometrically with ratio near one; the
            # dominant mode is removed by extrapolating every unknown.
            ratio_sw = moved / moved_prev if moved_prev < math.inf else 0.0
            if accel_left > 0 and 0.5 < ratio_sw < 0.999 and prev_vals:
                f = ratio_sw / (1.0 - ratio_sw)
                for i in unknowns:
                    x = V[i] + (V[i] - prev_vals[i]) * f
                    if x < lo:
                        x = lo
                    elif x > hi:
                        x = hi
                    V[i] = x
                accel_left -= 1
                moved_prev = math.inf
            else:
                moved_prev = moved
            for i in unknowns:
                prev_vals[i] = V[i]
        if not settled:
            for pos, i in enumerate(self.dyn_idx):
                V[i] = v0[pos]
            return None
        v1 = [V[i] for i in self.dyn_idx]
        dv_cap_impl = cfg.dv_max * 0.1 * 1.05
        if h <= cfg.dt_min * 2.0000001:
            dv_cap_impl = math.inf
        for pos, (a, b) in enumerate(zip(v0, v1)):
            if abs(b - a) > (dv_cap_impl if pos in self.impl_pos else dv_cap):
                for ppos, i in enumerate(self.dyn_idx):
                    V[i] = v0[ppos]
                return None
        self.qs_cache = [None] * len(self.qs_idx)
        fns = self.branch_fns
        currents = [f(V, t1) for f in fns]
        net = [0.0] * self.n_dyn
        for (pa, pb), cb_kind, i_br in zip(self.acc, self.branch_kinds, currents):
            if cb_kind == _CAP:
                continue
            if pa >= 0:
                net[pa] -= i_br
            if pb >= 0:
                net[pb] += i_br
        k1 = [net[i] / caps[i] for i in range(self.n_dyn)]
        ratio = 0.0
        abs_tol = cfg.abs_v_tol
        rel = cfg.rel_tol
        impl = self.impl_pos
        for i in range(self.n_dyn):
            if i in impl:
                continue  # fast nodes are |dV|-capped, not truncation-tested
            err = v1[i] - v0[i] - 0.5 * h * (k0[i] + k1[i])
            if err < 0.0:
                err = -err
            av, bv = abs(v0[i]), abs(v1[i])
            tol = abs_tol + rel * (av if av > bv else bv)
            if err > tol:
                for pos, j in enumerate(self.dyn_idx):
                    V[j] = v0[pos]
                return None
            r = err / tol
            if r > ratio:
                ratio = r
        return (h, v1, currents, ratio, k1)

    def _stiffest_node(self, v0, k1, h) -> str:
        if not self.dyn_names:
            return "?"
        pred = [v + h * k for v, k in zip(v0, k1)]
        k2, _ = self._stage(pred, self.t + h)
        worst, name = -1.0, self.dyn_names[0]
        for i in range(self.n_dyn):
            err = 0.5 * h * abs(k2[i] - k1[i])
            if err > worst:
                worst, name = err, self.dyn_names[i]
        return name

    def _localize_crossing(self, h_acc, result, stepper):
        """Shrink the accepted step so the first monitor crossing lands
        within event_tol of the step end; stepper(h) re-integrates from the
        same start state with either integration mode."""
        cfg = self.cfg
        lo, hi = 0.0, h_acc
        best = result
        while hi - lo > cfg.event_tol and hi > cfg.dt_min * 2.0:
            mid = 0.5 * (lo + hi)
            r = stepper(mid)
            if r is None:
                break
            if self._crossed_monitors(r[1]):
                hi, best = mid, r
            else:
                lo = mid
        return best

    def _book_step(self, v0, v1, i_avg, h, t_new) -> None:
        """Book branch energies with the currents that moved the nodes and
        mid-step terminal voltages; conservative to rounding error."""
        V = self.V
        vmid = list(V)
        for i, a, b in zip(self.dyn_idx, v0, v1):
            vmid[i] = 0.5 * (a + b)
        for ri, spec in self.rail_stim:
            vmid[ri] = 0.5 * (spec.value(self.t) + spec.value(t_new))

        # Displacement currents for folded caps; device branches keep the
        # stage-averaged currents that produced the node update.
        i_book = i_avg
        if self.folded_caps:
            i_book = list(i_avg)
            dyn_pos = {i: k for k, i in enumerate(self.dyn_idx)}
            for ni, cap, ri, bi in self.folded_caps:
                pos = dyn_pos.get(ni, -1)
                if pos < 0:
                    continue
                i_c = cap * (v1[pos] - v0[pos]) / h
                ai, b_i = self.branch_ab[bi]
                i_book[bi] = i_c if ai == ni else -i_c

        step_d = 0.0
        diss = self.diss
        deliv = self.deliv
        kinds = self.branch_kinds
        tags = self.branch_tags
        ab = self.branch_ab
        for bi in range(self.n_branch):
            kind = kinds[bi]
            ai, b_i = ab[bi]
            e_abs = i_book[bi] * (vmid[ai] - vmid[b_i]) * h
            if kind == _ISRC:
                tag = tags[bi]
                if tag in deliv:
                    deliv[tag] -= e_abs
                self.supply -= e_abs
            elif kind != _CAP:
                tag = tags[bi]
                if tag in diss:
                    diss[tag] += e_abs
                    step_d += e_abs
        for bi, ri, sign in self.rail_terms:
            self.supply += vmid[ri] * sign * i_book[bi] * h
        self.step_diss.append(step_d)
        self.step_t0.append(self.t)
        self.step_t1.append(t_new)

    # ---- main loop ----

    def run(self) -> tuple[SimTrace, EnergyLedger]:
        cfg = self.cfg
        V = self.V
        self._apply_rail_stimuli(0.0)
        for controller in self.circuit.controllers:
            self.active_controller = controller
            controller.start(self.api)
            self.active_controller = None
        init_stage = self._stage([V[i] for i in self.dyn_idx], 0.0)
        self._update_monitor_signs()
        self._advance_relays()
        for (bi, _, _), st in zip(self.relay_meta, self.relay_states):
            self.relay_timeline.insert(0, (0.0, self.branch_names[bi], st.contact))
        stored_initial = self._stored_energy()
        self._sample(init_stage[1], 0.0, None)
        # The official integrated state; fast-node stage solves may leave V
        # slightly ahead of it, so the step start is tracked separately.
        state_v = [V[i] for i in self.dyn_idx]

        h = cfg.dt_max
        h_soft = math.inf  # recent stability/accuracy ceiling from rejections
        h_be = cfg.dt_max / 16.0
        stiff = False
        stiff_streak = 0
        calm_streak = 0
        t_stop = cfg.t_stop
        while self.t < t_stop:
            horizon = t_stop
            rd = self._next_relay_deadline()
            if rd < horizon:
                horizon = rd
            if self.timers and self.timers[0][0] < horizon:
                horizon = self.timers[0][0]
            while (
                self.edge_ptr < len(self.stim_edges)
                and self.stim_edges[self.edge_ptr] <= self.t + 1e-18
            ):
                self.edge_ptr += 1
            if self.edge_ptr < len(self.stim_edges) and self.stim_edges[self.edge_ptr] < horizon:
                horizon = self.stim_edges[self.edge_ptr]

            v0 = list(state_v)
            k1, i1 = self._stage(v0, self.t, impl_ref=v0)

            gap = horizon - self.t
            rate = 0.0
            for k in k1:
                ak = abs(k)
                if ak > rate:
                    rate = ak
            # Step the |dV| cap and the time limits would allow on their own.
            h_free = cfg.dt_max
            if rate > 0.0 and h_free * rate > cfg.dv_max:
                h_free = cfg.dv_max / rate
            clipped = h_free >= gap
            if clipped:
                h_free = gap

            if not stiff:
                h = min(h, h_soft, h_free)
                if h < cfg.dt_min:
                    h = cfg.dt_min
                if h >= gap:
                    h = gap
                result = None
                had_reject = False
                while result is None:
                    result = self._try_step(v0, k1, i1, h)
                    if result is not None:
                        break
                    self.rejected += 1
                    had_reject = True
                    if h <= cfg.dt_min * 1.0000001:
                        break
                    h = max(h * 0.5, cfg.dt_min)
                if result is None:
                    if not ENABLE_STIFF_MODE:
                        raise StiffnessError(self._stiffest_node(v0, k1, h), self.t)
                    # Explicit step underflowed: hand over to the implicit mode.
                    stiff = True
                    h_be = max(cfg.dt_min * 64.0, h)
                    stiff_streak = 0
                    calm_streak = 0
                    continue
                if had_reject:
                    h_soft = h * 1.4
                elif h_soft < math.inf:
                    h_soft *= 2.0
                h_used, v1, i_avg, err_ratio = result
                if self.monitors and self._crossed_monitors(v1):
                    stepper = lambda hh: self._try_step(v0, k1, i1, hh)
                    h_used, v1, i_avg, err_ratio = self._localize_crossing(h_used, result, stepper)[:4]
                i_book = i_avg
                # Sustained operation far below the free step size means a
                # stability ceiling, which the implicit mode removes.
                # Count only steps where the rejection ceiling itself sits far
                # below the free step size; h_soft doubles per clean step, so
                # ordinary post-event recovery stops the count within a few
                # steps while a genuine stability limit keeps it going.
                if not clipped and h_used < h_free / 16.0 and h_soft < h_free / 16.0:
                    stiff_streak += 1
                    if stiff_streak >= 6 and ENABLE_STIFF_MODE:
                        stiff = True
                        h_be = h_used * 8.0
                        calm_streak = 0
                else:
                    stiff_streak = 0
            else:
                h = min(h_be, h_free)
                if h < cfg.dt_min:
                    h = cfg.dt_min
                if h >= gap:
                    h = gap
                result = None
                while result is None:
                    result = self._be_try(v0, k1, h)
                    if result is not None:
                        break
                    self.rejected += 1
                    if h <= cfg.dt_min * 1.0000001:
                        raise StiffnessError(self._stiffest_node(v0, k1, h), self.t)
                    h = max(h * 0.5, cfg.dt_min)
                h_used, v1, cur1, err_ratio, k1_new = result
                if self.monitors and self._crossed_monitors(v1):
                    stepper = lambda hh: self._be_try(v0, k1, hh)
                    best = self._localize_crossing(h_used, result, stepper)
                    h_used, v1, cur1, err_ratio, k1_new = best
                i_book = cur1
                if not clipped and h_used >= 0.7 * h_free:
                    calm_streak += 1
                    if calm_streak >= 3:
                        stiff = False
                        h = h_used
                        h_soft = math.inf
                else:
                    calm_streak = 0

            t_new = horizon if h_used == gap else self.t + h_used
            self._book_step(v0, v1, i_book, h_used, t_new)
            for i, v in zip(self.dyn_idx, v1):
                V[i] = v
            state_v = v1
            self.t = t_new
            self._h_ref = h_used
            # Consistency pass at the official accepted state: quasi-static
            # nets re-solved, implicit nodes held at their booked values, so
            # samples and monitors always see the booked trajectory.
            if self.rail_stim:
                self._apply_rail_stimuli(t_new)
            self._solve_quasi_static(t_new)
            self._track_residual(t_new)
            self.accepted += 1
            dv = [b - a for a, b in zip(v0, v1)]
            cur_sample = [f(V, t_new) for f in self.branch_fns]
            self._cap_branch_currents(cur_sample, h_used, dv)
            self._sample(cur_sample, h_used, dv)

            fired = self._crossed_monitors()
            self._update_monitor_signs()
            for m in fired:
                name = self.monitors[m][0]
                for controller in self.circuit.controllers:
                    self.active_controller = controller
                    controller.on_event(name, self.t, self.api)
                    self.active_controller = None
            self._fire_due_timers()
            self._advance_relays()

            if (
                cfg.stop_after_spikes is not None
                and self.spike_count >= cfg.stop_after_spikes
            ):
                break

            # Error-headroom-based growth per mode.
            if err_ratio > 0.0:
                grow = 0.85 * err_ratio**-0.5
            else:
                grow = 2.0
            if grow > 2.0:
                grow = 2.0
            elif grow < 0.4:
                grow = 0.4
            if stiff:
                h_be = h_used * grow
            else:
                h = h_used * grow

        stored_delta = self._stored_energy() - stored_initial
        return self._finish(stored_delta)

    def _track_residual(self, t: float) -> None:
        for qpos in range(len(self.qs_idx)):
            r = abs(self._qs_net(qpos, t))
            if r > self.max_residual:
                self.max_residual = r

    def _finish(self, stored_delta: float) -> tuple[SimTrace, EnergyLedger]:
        event_times = sorted(t for t, _ in self.events)
        quiet = self.cfg.quiet_window
        static = 0.0
        for t0, t1, d in zip(self.step_t0, self.step_t1, self.step_diss):
            if _min_distance(event_times, t0, t1) > quiet:
                static += d
        total_d = sum(self.diss.values())
        ledger = EnergyLedger(
            tags=self.tags,
            dissipated=dict(self.diss),
            delivered=dict(self.deliv),
            total_supply=self.supply,
            stored_delta=stored_delta,
            static_dissipated=static,
            dynamic_dissipated=total_d - static,
            snapshot_times=self.ts,
            _cum_dissipated=self.e_cum_diss,
            _cum_supply=self.e_cum_supply,
        )
        trace = SimTrace(
            node_names=list(self.sample_nodes),
            branch_names=list(self.branch_names),
            times=self.ts,
            node_volts={n: col for n, col in zip(self.sample_nodes, self.node_cols)},
            branch_currents={n: col for n, col in zip(self.branch_names, self.branch_cols)},
            events=self.events,
            relay_timeline=self.relay_timeline,
            max_kcl_residual=self.max_residual,
            steps_accepted=self.accepted,
            steps_rejected=self.rejected,
        )
        return trace, ledger


def _min_distance(event_times: list[float], t0: float, t1: float) -> float:
    """Distance from interval [t0, t1] to the nearest event time."""
    if not event_times:
        return math.inf
    lo, hi = 0, len(event_times)
    while lo < hi:
        mid = (lo + hi) // 2
        if event_times[mid] < t0:
            lo = mid + 1
        else:
            hi = mid
    best = math.inf
    if lo < len(event_times):
        if event_times[lo] <= t1:
            return 0.0
        best = event_times[lo] - t1
    if lo > 0:
        best = min(best, t0 - event_times[lo - 1])
    return best


def simulate(circuit: Circuit, solver: SolverConfig) -> tuple[SimTrace, EnergyLedger]:
    """Run one transient analysis; the circuit must validate cleanly.

    Raises CircuitValidationError on diagnostics, StiffnessError when step
    control underflows, and LifetimeExceededError from any relay.
    """
    diags = validate(circuit)
    if diags:
        raise CircuitValidationError(diags)
    return _Sim(circuit, solver).run()


def idle_power(circuit: Circuit, window: float) -> float:
    """Average supply power over a stimulus-free window, watts."""
    if not window > 0.0:
        raise ValueError("window must be positive")
    _, ledger = simulate(circuit, SolverConfig(t_stop=window))
    return ledger.total_supply / window
