"""Experiment drivers: operating-point tuning, rate/energy sweeps.

The paper-style comparisons fix a firing rate and ask for the energy per
spike of each variant, so the drivers here tune the injection current to a
target rate by bisection with a secant-informed first bracket, and tune the
refractory bias to a target at-rest dwell the same way.  Sweep points are
independent simulations; `run_many` can fan them out across processes.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

from .analysis import SpikeTrain, detect_spikes, energy_per_spike
from .solver import EnergyLedger, SimTrace, SolverConfig, simulate
from .templates import NeuronBiases, build_lif

RATE_TOL = 0.02
MAX_TUNE_ITERATIONS = 30


class TuningError(RuntimeError):
    """The requested operating point could not be reached."""


@dataclass(frozen=True)
class OperatingPoint:
    """One measured LIF operating point."""

    variant: str
    biases: NeuronBiases
    rate_hz: float
    energy_per_spike_j: float
    refractory_s: float
    relay_closes_per_spike: float
    trace: SimTrace
    ledger: EnergyLedger


def _solver_for(rate_guess: float, n_spikes: int, dt_max: float = 100e-6) -> SolverConfig:
    # t_stop covers the target rate with margin; the spike-count stop keeps
    # probes at much faster operating points from over-simulating.
    t_stop = (n_spikes + 1.5) / max(rate_guess, 1.0)
    return SolverConfig(t_stop=t_stop, dt_max=dt_max, stop_after_spikes=n_spikes + 1)


def run_point(
    variant: str,
    biases: NeuronBiases,
    rate_guess: float,
    n_spikes: int = 10,
    devices=None,
) -> OperatingPoint:
    """Simulate one operating point long enough for n_spikes spikes."""
    circuit = build_lif(variant, biases, devices=devices)
    trace, ledger = simulate(circuit, _solver_for(rate_guess, n_spikes))
    train = detect_spikes(trace, threshold=biases.vdd / 2.0)
    rate = train.mean_rate
    energy = energy_per_spike(ledger, train) if train.count >= 2 else math.nan
    closes = len(trace.event_times("relay-close"))
    per_spike = closes / max(train.count, 1)
    return OperatingPoint(
        variant=variant,
        biases=biases,
        rate_hz=rate,
        energy_per_spike_j=energy,
        refractory_s=train.mean_refractory,
        relay_closes_per_spike=per_spike,
        trace=trace,
        ledger=ledger,
    )


def _rate_at(variant: str, biases: NeuronBiases, inj: float, rate_guess: float, devices) -> tuple[float, OperatingPoint]:
    point = run_point(variant, replace(biases, i_inject=inj), rate_guess, n_spikes=8, devices=devices)
    return point.rate_hz, point


def tune_injection(
    variant: str,
    rate_target: float,
    biases: NeuronBiases | None = None,
    tol: float = RATE_TOL,
    max_iter: int = MAX_TUNE_ITERATIONS,
    devices=None,
) -> OperatingPoint:
    """Bisect i_inject until the measured rate is within tol of the target.

    Raises TuningError when no injection in the search range reaches the
    target or the iteration budget runs out.
    """
    biases = biases if biases is not None else NeuronBiases()
    lo, hi = 20e-12, 2000e-12
    rate_lo, pt = _rate_at(variant, biases, lo, rate_target, devices)
    if rate_lo > rate_target * (1 + tol):
        raise TuningError(f"{variant}: rate {rate_lo:.1f} Hz at minimum injection exceeds target {rate_target} Hz")
    if abs(rate_lo - rate_target) <= tol * rate_target:
        return pt
    rate_hi, pt_hi = _rate_at(variant, biases, hi, rate_target, devices)
    if rate_hi < rate_target * (1 - tol):
        raise TuningError(f"{variant}: rate {rate_hi:.1f} Hz at maximum injection below target {rate_target} Hz")
    best = pt_hi
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        rate_mid, best = _rate_at(variant, biases, mid, rate_target, devices)
        if abs(rate_mid - rate_target) <= tol * rate_target:
            return best
        if rate_mid < rate_target:
            lo = mid
        else:
            hi = mid
    raise TuningError(f"{variant}: rate bisection did not converge to {rate_target} Hz within {max_iter} iterations")


def tune_refractory(
    variant: str,
    t_refr_target: float,
    biases: NeuronBiases | None = None,
    tol: float = 0.03,
    max_iter: int = MAX_TUNE_ITERATIONS,
    devices=None,
) -> OperatingPoint:
    """Bisect v_refr until the measured at-rest dwell matches the target.

    Lower refractory bias means a slower refractory-capacitor discharge and
    a longer dwell, so the dwell is monotone decreasing in v_refr.
    """
    biases = biases if biases is not None else NeuronBiases()
    lo, hi = 0.15, 0.45  # volts; dwell(lo) long, dwell(hi) short

    def dwell_at(v: float) -> tuple[float, OperatingPoint]:
        b = replace(biases, v_refr=v)
        guess = 1.0 / (t_refr_target * 4.0)
        point = run_point(variant, b, rate_guess=guess, n_spikes=6, devices=devices)
        if point.rate_hz <= 0.0:
            raise TuningError(f"{variant}: no spikes while tuning refractory at v_refr={v:.3f}")
        return point.refractory_s, point

    d_lo, _ = dwell_at(lo)
    if d_lo < t_refr_target:
        raise TuningError(f"{variant}: longest refractory {d_lo * 1e3:.2f} ms below target")
    d_hi, _ = dwell_at(hi)
    if d_hi > t_refr_target:
        raise TuningError(f"{variant}: shortest refractory {d_hi * 1e3:.2f} ms above target")
    best = None
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        d_mid, best = dwell_at(mid)
        if abs(d_mid - t_refr_target) <= tol * t_refr_target:
            return best
        if d_mid > t_refr_target:
            lo = mid
        else:
            hi = mid
    raise TuningError(f"{variant}: refractory bisection did not converge within {max_iter} iterations")


@dataclass(frozen=True)
class EnergyRateRow:
    rate_hz: float
    variant: str
    pj_per_spike: float
    reduction_pct: float | None
    error: str = ""


def energy_vs_rate(
    rates: list[float],
    biases: NeuronBiases | None = None,
    tol: float = RATE_TOL,
    devices=None,
) -> list[EnergyRateRow]:
    """One row per (rate, variant) with the hybrid reduction per rate and a
    trailing mean-reduction row.  Untunable rates produce error rows and the
    sweep continues."""
    rows: list[EnergyRateRow] = []
    reductions: list[float] = []
    for rate in rates:
        cmos_e = hybrid_e = None
        for variant in ("cmos", "hybrid"):
            try:
                pt = tune_injection(variant, rate, biases=biases, tol=tol, devices=devices)
                e_pj = pt.energy_per_spike_j * 1e12
                if variant == "cmos":
                    cmos_e = e_pj
                else:
                    hybrid_e = e_pj
                rows.append(EnergyRateRow(rate, variant, e_pj, None))
            except TuningError as exc:
                rows.append(EnergyRateRow(rate, variant, math.nan, None, error=str(exc)))
        if cmos_e and hybrid_e and cmos_e > 0.0:
            red = 100.0 * (1.0 - hybrid_e / cmos_e)
            reductions.append(red)
            rows[-1] = replace(rows[-1], reduction_pct=red)
    if reductions:
        rows.append(
            EnergyRateRow(
                math.nan, "mean", math.nan, sum(reductions) / len(reductions)
            )
        )
    return rows


@dataclass(frozen=True)
class EfficiencyRow:
    i_inject_a: float
    variant: str
    rate_hz: float
    pj_per_spike: float
    error: str = ""


def efficiency_curve(
    injections: list[float],
    biases: NeuronBiases | None = None,
    devices=None,
) -> list[EfficiencyRow]:
    """Energy per spike versus injection current, both variants."""
    biases = biases if biases is not None else NeuronBiases()
    rows: list[EfficiencyRow] = []
    for inj in injections:
        for variant in ("cmos", "hybrid"):
            b = replace(biases, i_inject=inj)
            guess = max(30.0, 2e12 * inj)
            try:
                pt = run_point(variant, b, rate_guess=guess, n_spikes=8, devices=devices)
                if pt.rate_hz <= 0.0 or math.isnan(pt.energy_per_spike_j):
                    rows.append(EfficiencyRow(inj, variant, 0.0, math.nan, error="no spikes"))
                else:
                    rows.append(EfficiencyRow(inj, variant, pt.rate_hz, pt.energy_per_spike_j * 1e12))
            except Exception as exc:  # noqa: BLE001 - sweep rows carry errors
                rows.append(EfficiencyRow(inj, variant, 0.0, math.nan, error=str(exc)))
    return rows


def _run_job(args):
    fn, kwargs = args
    return fn(**kwargs)


def run_many(jobs, workers: int = 1):
    """Run (callable, kwargs) jobs, optionally across processes, preserving
    job order in the results."""
    if workers <= 1:
        return [fn(**kw) for fn, kw in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs))
