"""Spike-train extraction and energy-per-spike accounting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .solver import EnergyLedger, SimTrace


class InsufficientDataError(ValueError):
    """Not enough spikes in the window to form the requested statistic."""


@dataclass(frozen=True)
class SpikeTrain:
    """Spike times plus per-cycle refractory measurements from one run."""

    spike_times: tuple[float, ...]
    refractory_periods: tuple[float, ...] = ()

    @property
    def count(self) -> int:
        return len(self.spike_times)

    @property
    def mean_rate(self) -> float:
        """(count - 1) / (last - first); zero for fewer than two spikes."""
        if self.count < 2:
            return 0.0
        span = self.spike_times[-1] - self.spike_times[0]
        return (self.count - 1) / span if span > 0.0 else 0.0

    @property
    def intervals(self) -> tuple[float, ...]:
        return tuple(b - a for a, b in zip(self.spike_times, self.spike_times[1:]))

    @property
    def mean_refractory(self) -> float:
        if not self.refractory_periods:
            return 0.0
        return sum(self.refractory_periods) / len(self.refractory_periods)


def _crossings(times, values, threshold: float, falling: bool) -> list[float]:
    """Sub-sample crossing times by linear interpolation."""
    out = []
    for i in range(1, len(times)):
        a, b = values[i - 1], values[i]
        if falling:
            hit = a > threshold >= b
        else:
            hit = a < threshold <= b
        if hit and a != b:
            frac = (threshold - a) / (b - a)
            out.append(times[i - 1] + frac * (times[i] - times[i - 1]))
    return out


def detect_spikes(
    trace: SimTrace,
    threshold: float = 0.25,
    signal_node: str = "Vcomp",
    membrane_node: str = "Vmem",
    rest_eps: float | None = None,
) -> SpikeTrain:
    """One spike per downward crossing of the comparison output through
    ``threshold``; refractory measured as membrane at-rest dwell per cycle.

    Works on any trace that has the named columns; synthetic traces may
    point signal_node at whatever waveform encodes their spikes.  An empty
    train (never an error) results when nothing crosses.
    """
    if len(trace.times) == 0:
        raise InsufficientDataError("empty trace")
    sig = trace.node_volts.get(signal_node)
    if sig is None:
        raise KeyError(f"trace has no node {signal_node!r}")
    spike_times = _crossings(trace.times, sig, threshold, falling=True)

    refractory: list[float] = []
    mem = trace.node_volts.get(membrane_node)
    if mem is not None and len(spike_times) >= 2:
        eps = rest_eps if rest_eps is not None else 0.05 * max(sig)
        ts = trace.times
        n_iv = len(spike_times) - 1
        dwell = [0.0] * n_iv
        k = 0
        for i in range(1, len(ts)):
            lo, hi = ts[i - 1], ts[i]
            if hi <= spike_times[0]:
                continue
            if lo >= spike_times[-1]:
                break
            a, b = mem[i - 1], mem[i]
            if a > eps and b > eps:
                continue
            # Clip the sample interval to the sub-threshold portion by
            # interpolating the eps crossing, so the dwell measurement does
            # not inherit the solver's step quantization.
            s_lo, s_hi = lo, hi
            if a > eps >= b:
                s_lo = lo + (hi - lo) * (eps - a) / (b - a)
            elif b > eps >= a:
                s_hi = lo + (hi - lo) * (eps - a) / (b - a)
            elif a > eps and b > eps:
                continue
            while k + 1 < n_iv and spike_times[k + 1] <= s_lo:
                k += 1
            for j in (k, k + 1):
                if j >= n_iv:
                    break
                seg = min(s_hi, spike_times[j + 1]) - max(s_lo, spike_times[j])
                if seg > 0.0:
                    dwell[j] += seg
        refractory = dwell
    return SpikeTrain(tuple(spike_times), tuple(refractory))


def energy_per_spike(ledger: EnergyLedger, train: SpikeTrain) -> float:
    """Total dissipated energy per spike over the steady-state window.

    The window runs from the first to the last spike, which drops the
    startup transient; the first spike opens the window and is excluded
    from the count.
    """
    if train.count < 2:
        raise InsufficientDataError(
            f"need at least 2 spikes to measure energy per spike, got {train.count}"
        )
    t0, t1 = train.spike_times[0], train.spike_times[-1]
    energy = ledger.dissipated_between(t0, t1)
    return energy / (train.count - 1)


@dataclass(frozen=True)
class IsiStats:
    mean: float
    minimum: float
    maximum: float
    cv: float  # coefficient of variation


def isi_stats(train: SpikeTrain) -> IsiStats:
    iv = train.intervals
    if not iv:
        raise InsufficientDataError("need at least 2 spikes for interval statistics")
    mean = sum(iv) / len(iv)
    var = sum((x - mean) ** 2 for x in iv) / len(iv)
    return IsiStats(mean=mean, minimum=min(iv), maximum=max(iv), cv=math.sqrt(var) / mean if mean else 0.0)
