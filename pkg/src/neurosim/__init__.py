"""Behavioral mixed-signal simulator for hybrid CMOS-NEMS neuromorphic cells."""

from .analysis import InsufficientDataError, SpikeTrain, detect_spikes, energy_per_spike
from .circuit import Branch, Circuit, Monitor, Node, StimulusSpec, validate
from .devices import (
    InvalidArgumentError,
    MosParams,
    PassiveParams,
    bias_for_current,
    mos_drain_current,
    mos_off_current,
)
from .relay import (
    LifetimeExceededError,
    RelayParams,
    RelayState,
    RelaySwitch,
    relay_as_switch,
    relay_command,
    relay_conductance,
    relay_lifetime_estimate,
)
from .solver import (
    CircuitValidationError,
    EnergyLedger,
    SimTrace,
    SolverConfig,
    StiffnessError,
    idle_power,
    simulate,
)
from .templates import (
    CMOS,
    HYBRID,
    NeuronBiases,
    SynapseBiases,
    build_dpi,
    build_lif,
    build_lif_ideal,
    build_template,
)

__version__ = "0.1.0"
