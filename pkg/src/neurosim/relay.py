"""Four-terminal NEM relay behavioral model.

The relay is a mechanical switch actuated by the gate-body voltage: once
|v_gb| reaches the pull-in voltage the suspended gate snaps toward the body
and (for a normally-open device) connects source and drain after a
mechanical transition time.  Release happens only when |v_gb| drops to the
release voltage, so the contact state carries hysteresis.  Open contacts
leak at most ``i_off`` (default exactly zero), and every completed close
counts against a finite mechanical lifetime.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .devices import InvalidArgumentError

SECONDS_PER_YEAR = 365.25 * 24 * 3600.0

# Open-state leakage is expressed as an equivalent conductance referenced
# to this bias, matching the convention used for MOSFET off-currents.
V_LEAK_REF = 0.5

OPEN = "open"
CLOSED = "closed"
CLOSING = "transitioning-to-closed"
OPENING = "transitioning-to-open"

NORMALLY_OPEN = "normally-open"
NORMALLY_CLOSED = "normally-closed"

# The four Fig.-3-style switch topologies: transistor type implemented by
# relay rest state.  Values are (rest_state, body tied to high rail?).
SWITCH_CONFIGS = {
    "nmos-no": (NORMALLY_OPEN, False),
    "nmos-nc": (NORMALLY_CLOSED, True),
    "pmos-no": (NORMALLY_OPEN, True),
    "pmos-nc": (NORMALLY_CLOSED, False),
}


class LifetimeExceededError(RuntimeError):
    """A close event would push the relay past its cycle budget."""


@dataclass(frozen=True)
class RelayParams:
    """Electromechanical parameters of one relay.

    rest_state  contact state at zero actuation
    v_pull_in   |v_gb| at which the contact actuates, volts
    v_release   |v_gb| below which an actuated contact lets go, volts
    t_switch    mechanical transition time, seconds
    r_on        closed-contact resistance, ohms
    i_off       open-state leakage bound, amperes (0 = ideal isolation)
    c_gb        gate-body actuation capacitance, farads
    max_cycles  close events before mechanical failure
    """

    rest_state: str = NORMALLY_OPEN
    v_pull_in: float = 0.4
    v_release: float = 0.2
    t_switch: float = 100e-9
    r_on: float = 10e3
    i_off: float = 0.0
    c_gb: float = 1e-15
    max_cycles: float = 1e10

    def __post_init__(self) -> None:
        if self.rest_state not in (NORMALLY_OPEN, NORMALLY_CLOSED):
            raise InvalidArgumentError(f"bad rest_state {self.rest_state!r}")
        if not (self.v_pull_in > 0.0):
            raise InvalidArgumentError("v_pull_in must be positive")
        if not (0.0 <= self.v_release < self.v_pull_in):
            raise InvalidArgumentError("need 0 <= v_release < v_pull_in (hysteresis window)")
        if self.t_switch < 0.0:
            raise InvalidArgumentError("t_switch must be >= 0")
        if not (self.r_on > 0.0):
            raise InvalidArgumentError("r_on must be positive")
        if self.i_off < 0.0:
            raise InvalidArgumentError("i_off must be >= 0")
        if self.c_gb < 0.0:
            raise InvalidArgumentError("c_gb must be >= 0")
        if not (self.max_cycles > 0):
            raise InvalidArgumentError("max_cycles must be positive")


@dataclass(frozen=True)
class RelayState:
    """Mechanical state of one relay instance.

    transition_deadline is an absolute simulation time, meaningful only
    while the contact is transitioning.  cycle_count counts completed
    open->closed events.
    """

    contact: str
    transition_deadline: float = 0.0
    cycle_count: int = 0


def initial_state(params: RelayParams) -> RelayState:
    return RelayState(contact=OPEN if params.rest_state == NORMALLY_OPEN else CLOSED)


def _wants_engaged(params: RelayParams, state_engaged: bool, v_gb: float) -> bool:
    """Schmitt decision: actuated above pull-in, released below v_release,
    previous state preserved inside the hysteresis window."""
    mag = abs(v_gb)
    if mag >= params.v_pull_in:
        return True
    if mag <= params.v_release:
        return False
    return state_engaged


def _complete_if_due(params: RelayParams, state: RelayState, t_now: float) -> RelayState:
    if state.contact == CLOSING and t_now >= state.transition_deadline:
        cycles = state.cycle_count + 1
        if cycles > params.max_cycles:
            raise LifetimeExceededError(
                f"relay close #{cycles} exceeds max_cycles={params.max_cycles:g}"
            )
        return RelayState(contact=CLOSED, cycle_count=cycles)
    if state.contact == OPENING and t_now >= state.transition_deadline:
        return RelayState(contact=OPEN, cycle_count=state.cycle_count)
    return state


def relay_command(params: RelayParams, state: RelayState, v_gb: float, t_now: float) -> RelayState:
    """Advance the relay state machine to time t_now under gate-body drive v_gb.

    Completes any due transition, then applies the hysteretic actuation
    decision.  A reversal during a transition retargets the deadline to a
    full t_switch from now (the mechanics are not modeled as partial
    travel).  Raises LifetimeExceededError when a close completes past the
    cycle budget.
    """
    if not (math.isfinite(v_gb) and math.isfinite(t_now)):
        raise InvalidArgumentError("v_gb and t_now must be finite")

    state = _complete_if_due(params, state, t_now)

    engaged_now = _is_engaged(params, state)
    engaged_next = _wants_engaged(params, engaged_now, v_gb)
    if engaged_next == engaged_now:
        return state

    closing = engaged_next == (params.rest_state == NORMALLY_OPEN)
    target = CLOSING if closing else OPENING
    state = RelayState(
        contact=target,
        transition_deadline=t_now + params.t_switch,
        cycle_count=state.cycle_count,
    )
    # Zero-t_switch relays complete in the same call.
    if params.t_switch == 0.0:
        state = _complete_if_due(params, state, t_now)
    return state


def _is_engaged(params: RelayParams, state: RelayState) -> bool:
    """Whether the gate is electrostatically pulled in (contact away from rest)."""
    if params.rest_state == NORMALLY_OPEN:
        return state.contact in (CLOSED, CLOSING)
    return state.contact in (OPEN, OPENING)


def relay_conductance(params: RelayParams, state: RelayState) -> float:
    """Source-drain conductance in siemens for the current mechanical state.

    A contact conducts only after its closing transition completes; open or
    transitioning contacts show at most the i_off-equivalent leakage.
    """
    if state.contact == CLOSED:
        return 1.0 / params.r_on
    return params.i_off / V_LEAK_REF


def relay_lifetime_estimate(switch_rate: float, max_cycles: float) -> float:
    """Seconds of operation before the cycle budget is spent at the given rate."""
    if not (switch_rate > 0.0 and math.isfinite(switch_rate)):
        raise InvalidArgumentError(f"switch_rate must be positive, got {switch_rate}")
    if not (max_cycles > 0.0):
        raise InvalidArgumentError(f"max_cycles must be positive, got {max_cycles}")
    return max_cycles / switch_rate


@dataclass(frozen=True)
class RelaySwitch:
    """A relay wired as one of the four transistor-replacement topologies.

    v_body is the rail the body terminal is tied to; the actuation input is
    v_gb = v_gate - v_body, so the pairing of rest state and body rail makes
    the contact respond to gate drive with the named transistor's polarity.
    """

    params: RelayParams
    v_body: float


def relay_as_switch(config: str, v_body: float, base: RelayParams | None = None) -> RelaySwitch:
    """Build the relay instance for one of the nmos/pmos switch topologies.

    config selects rest state per the replacement table; v_body must be the
    rail that gives the intended polarity (low rail for nmos-no/pmos-nc,
    high rail for nmos-nc/pmos-no).  Manufacturing spread is handled by
    letting every instance carry its own v_body.
    """
    if config not in SWITCH_CONFIGS:
        raise InvalidArgumentError(f"unknown switch config {config!r}")
    rest_state, _ = SWITCH_CONFIGS[config]
    base = base if base is not None else RelayParams()
    return RelaySwitch(params=replace(base, rest_state=rest_state), v_body=v_body)
