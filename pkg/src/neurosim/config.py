"""Experiment configuration files: line-oriented sections with SI quantities.

Grammar::

    [section]              # circuit | biases | devices | stimulus |
                           # solver | sweep | output
    key = value            # '#' starts a comment anywhere
    i_inject = 235 pA      # number, optional SI suffix, optional unit word

SI suffixes are case-sensitive (m = milli, M = mega); `u` stands in for
micro.  Whitespace may appear between the number, the suffix, and the unit
word.  Every key has a declared dimension and a wrong unit is a diagnostic,
as is any key the target template does not define.  The parser never raises
on malformed input: it returns the full diagnostics list and no config.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

from .circuit import StimulusSpec

SI_SUFFIXES = {
    "f": 1e-15,
    "p": 1e-12,
    "n": 1e-9,
    "u": 1e-6,
    "m": 1e-3,
    "k": 1e3,
    "M": 1e6,
    "G": 1e9,
}

UNIT_DIMENSIONS = {
    "V": "V",
    "A": "A",
    "F": "F",
    "s": "s",
    "Hz": "Hz",
    "Ohm": "Ohm",
}

DIMENSIONLESS = ""

_NUMBER_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?")

# Key vocabulary per template.  Values are expected dimensions; WORD marks
# a bare identifier, PATH a file path.
WORD = "<word>"
PATH = "<path>"

LIF_BIAS_KEYS = {
    "vdd": "V",
    "v_thrshld": "V",
    "v_lk": "V",
    "v_refr": "V",
    "i_inject": "A",
    "c_mem": "F",
    "c_r": "F",
    "ack_latency": "s",
    "ack_width": "s",
}
DPI_BIAS_KEYS = {
    "vdd": "V",
    "v_w": "V",
    "v_tau": "V",
    "c_syn": "F",
    "pulse_width": "s",
    "pulse_rate": "Hz",
}
LIF_DEVICE_NAMES = (
    "m_in_gate", "m_leak", "m_feedback", "m_gate", "m_spk1", "m_pu",
    "m_spk2", "m_thr", "m_refr_p2", "m_refr_en", "m_refr_leak", "m_rst",
)
DPI_DEVICE_NAMES = ("m_in", "m_w", "m_tau", "m_syn")
MOS_PARAM_KEYS = {
    "i0": "A",
    "i_off_ref": "A",
    "w_over_l": DIMENSIONLESS,
    "slope_n": DIMENSIONLESS,
    "ut": "V",
    "v_early": "V",
}
RELAY_PARAM_KEYS = {
    "v_pull_in": "V",
    "v_release": "V",
    "t_switch": "s",
    "r_on": "Ohm",
    "i_off": "A",
    "c_gb": "F",
    "max_cycles": DIMENSIONLESS,
}
STIMULUS_KEYS = {
    "kind": WORD,
    "level": "V|A",
    "base": "V|A",
    "width": "s",
    "period": "s",
    "start": "s",
}
SOLVER_KEYS = {
    "t_stop": "s",
    "dt_min": "s",
    "dt_max": "s",
    "dv_max": "V",
    "event_tol": "s",
    "rel_tol": DIMENSIONLESS,
    "abs_v_tol": "V",
    "abs_i_tol": "A",
    "quiet_window": "s",
}
SWEEP_KEYS = {
    "param": WORD,
    "from": None,  # dimension of the swept key
    "to": None,
    "steps": DIMENSIONLESS,
    "scale": WORD,
}
OUTPUT_KEYS = {"trace": PATH, "ledger": PATH}
CIRCUIT_KEYS = {"template": WORD, "variant": WORD}

SECTIONS = ("circuit", "biases", "devices", "stimulus", "solver", "sweep", "output")


@dataclass(frozen=True)
class Quantity:
    """A magnitude with a unit dimension; parse/print round-trip stable."""

    magnitude: float
    dimension: str = DIMENSIONLESS

    def __str__(self) -> str:
        if self.dimension:
            return f"{self.magnitude!r} {self.dimension}"
        return repr(self.magnitude)


@dataclass(frozen=True)
class Diagnostic:
    line: int
    col: int
    message: str

    def __str__(self) -> str:
        return f"line {self.line}, col {self.col}: {self.message}"


@dataclass(frozen=True)
class SweepSpec:
    param: str
    start: float
    stop: float
    steps: int
    scale: str = "linear"


@dataclass
class ExperimentConfig:
    """Parsed experiment description in SI magnitudes."""

    template: str = "lif"
    variant: str = "cmos"
    biases: dict = field(default_factory=dict)
    devices: dict = field(default_factory=dict)  # instance -> {param: value}
    stimulus: StimulusSpec | None = None
    solver: dict = field(default_factory=dict)
    sweep: SweepSpec | None = None
    output: dict = field(default_factory=dict)

    def template_name(self) -> str:
        return f"{self.template}.{self.variant}"


@dataclass
class ParseResult:
    config: ExperimentConfig | None
    diagnostics: list[Diagnostic]

    @property
    def ok(self) -> bool:
        return self.config is not None and not self.diagnostics


def parse_quantity(text: str, expected: str | None = None) -> tuple[Quantity | None, str]:
    """Parse `number [suffix] [unit]`; returns (quantity, error message)."""
    raw = text.strip()
    m = _NUMBER_RE.match(raw)
    if not m:
        return None, f"expected a number, got {raw!r}"
    magnitude = float(m.group(0))
    rest = raw[m.end():].strip()
    scale = 1.0
    dimension = DIMENSIONLESS
    if rest:
        tokens = rest.split()
        if len(tokens) == 1:
            tok = tokens[0]
            if tok in UNIT_DIMENSIONS:
                dimension = UNIT_DIMENSIONS[tok]
            elif tok[0] in SI_SUFFIXES and tok[1:] in UNIT_DIMENSIONS:
                scale = SI_SUFFIXES[tok[0]]
                dimension = UNIT_DIMENSIONS[tok[1:]]
            elif tok in SI_SUFFIXES:
                scale = SI_SUFFIXES[tok]
            else:
                return None, f"unrecognized unit {tok!r}"
        elif len(tokens) == 2:
            suffix, unit = tokens
            if suffix not in SI_SUFFIXES:
                return None, f"unrecognized SI suffix {suffix!r}"
            if unit not in UNIT_DIMENSIONS:
                return None, f"unrecognized unit {unit!r}"
            scale = SI_SUFFIXES[suffix]
            dimension = UNIT_DIMENSIONS[unit]
        else:
            return None, f"cannot parse quantity {raw!r}"
    q = Quantity(magnitude * scale, dimension)
    if expected is not None and expected not in (WORD, PATH):
        allowed = expected.split("|") if expected else [DIMENSIONLESS]
        if q.dimension and q.dimension not in allowed:
            return None, f"dimension mismatch: got {q.dimension}, expected {expected or 'dimensionless'}"
        # A bare number is accepted for any dimension (SI base units).
    return q, ""


def _bias_keys(template: str) -> dict:
    return LIF_BIAS_KEYS if template == "lif" else DPI_BIAS_KEYS


def _device_names(template: str) -> tuple:
    return LIF_DEVICE_NAMES if template == "lif" else DPI_DEVICE_NAMES


def _sweep_target_dimension(config: ExperimentConfig, param: str) -> str | None:
    parts = param.split(".")
    if len(parts) == 2 and parts[0] == "biases":
        return _bias_keys(config.template).get(parts[1])
    if len(parts) == 2 and parts[0] == "solver":
        return SOLVER_KEYS.get(parts[1])
    if len(parts) == 3 and parts[0] == "devices":
        table = RELAY_PARAM_KEYS if parts[1] == "relay" else MOS_PARAM_KEYS
        if parts[1] == "relay" or parts[1] in _device_names(config.template):
            return table.get(parts[2])
    return None


def parse_config(text: str) -> ParseResult:
    """Parse a config; on any error returns diagnostics and no config."""
    diags: list[Diagnostic] = []
    cfg = ExperimentConfig()
    section = None
    raw_sweep: dict[str, tuple[str, int, int]] = {}
    saw_circuit = False
    lines = text.splitlines()

    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        stripped = line.strip()
        col = line.index(stripped[0]) + 1
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                diags.append(Diagnostic(lineno, col, f"unterminated section header {stripped!r}"))
                section = None
                continue
            name = stripped[1:-1].strip()
            if name not in SECTIONS:
                diags.append(Diagnostic(lineno, col, f"unknown section [{name}]"))
                section = None
                continue
            section = name
            if name == "circuit":
                saw_circuit = True
            continue
        if "=" not in stripped:
            diags.append(Diagnostic(lineno, col, f"expected 'key = value', got {stripped!r}"))
            continue
        if section is None:
            diags.append(Diagnostic(lineno, col, "key outside of any [section]"))
            continue
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        vcol = line.index("=") + 2
        if not value:
            diags.append(Diagnostic(lineno, vcol, f"missing value for {key!r}"))
            continue
        _parse_kv(cfg, section, key, value, lineno, col, vcol, diags, raw_sweep)

    if not saw_circuit:
        diags.append(Diagnostic(len(lines) + 1, 1, "missing [circuit] section"))
    if raw_sweep:
        _finish_sweep(cfg, raw_sweep, diags, len(lines) + 1)
    if diags:
        return ParseResult(None, diags)
    return ParseResult(cfg, [])


def _parse_kv(cfg, section, key, value, lineno, col, vcol, diags, raw_sweep) -> None:
    if section == "circuit":
        if key not in CIRCUIT_KEYS:
            diags.append(Diagnostic(lineno, col, f"unknown key {key!r} in [circuit]"))
        elif key == "template":
            if value not in ("lif", "dpi"):
                diags.append(Diagnostic(lineno, vcol, f"unknown template {value!r} (lif | dpi)"))
            else:
                cfg.template = value
        else:
            if value not in ("cmos", "hybrid"):
                diags.append(Diagnostic(lineno, vcol, f"unknown variant {value!r} (cmos | hybrid)"))
            else:
                cfg.variant = value
        return

    if section == "biases":
        table = _bias_keys(cfg.template)
        if key not in table:
            diags.append(Diagnostic(lineno, col, f"unknown bias key {key!r} for template {cfg.template!r}"))
            return
        q, err = parse_quantity(value, table[key])
        if err:
            diags.append(Diagnostic(lineno, vcol, err))
        else:
            cfg.biases[key] = q.magnitude
        return

    if section == "devices":
        if "." not in key:
            diags.append(Diagnostic(lineno, col, f"device key must be instance.param, got {key!r}"))
            return
        inst, _, param = key.partition(".")
        if inst == "relay":
            table = RELAY_PARAM_KEYS
        elif inst in _device_names(cfg.template):
            table = MOS_PARAM_KEYS
        else:
            diags.append(
                Diagnostic(lineno, col, f"unknown device instance {inst!r} for template {cfg.template!r}")
            )
            return
        if param == "polarity" and inst != "relay":
            if value not in ("n", "p"):
                diags.append(Diagnostic(lineno, vcol, f"polarity must be n or p, got {value!r}"))
            else:
                cfg.devices.setdefault(inst, {})[param] = value
            return
        if param == "rest_state" and inst == "relay":
            if value not in ("normally-open", "normally-closed"):
                diags.append(Diagnostic(lineno, vcol, f"bad rest_state {value!r}"))
            else:
                cfg.devices.setdefault(inst, {})[param] = value
            return
        if param not in table:
            diags.append(Diagnostic(lineno, col, f"unknown device parameter {param!r} for {inst!r}"))
            return
        if value == "inf" and param == "v_early":
            cfg.devices.setdefault(inst, {})[param] = float("inf")
            return
        q, err = parse_quantity(value, table[param])
        if err:
            diags.append(Diagnostic(lineno, vcol, err))
        else:
            cfg.devices.setdefault(inst, {})[param] = q.magnitude
        return

    if section == "stimulus":
        if key not in STIMULUS_KEYS:
            diags.append(Diagnostic(lineno, col, f"unknown stimulus key {key!r}"))
            return
        if key == "kind":
            if value not in ("dc", "pulse-train", "pwl"):
                diags.append(Diagnostic(lineno, vcol, f"unknown stimulus kind {value!r}"))
            else:
                cfg.stimulus = replace(cfg.stimulus or StimulusSpec(), kind=value)
            return
        q, err = parse_quantity(value, STIMULUS_KEYS[key])
        if err:
            diags.append(Diagnostic(lineno, vcol, err))
            return
        cfg.stimulus = replace(cfg.stimulus or StimulusSpec(), **{key: q.magnitude})
        return

    if section == "solver":
        if key not in SOLVER_KEYS:
            diags.append(Diagnostic(lineno, col, f"unknown solver key {key!r}"))
            return
        q, err = parse_quantity(value, SOLVER_KEYS[key])
        if err:
            diags.append(Diagnostic(lineno, vcol, err))
        else:
            cfg.solver[key] = q.magnitude
        return

    if section == "sweep":
        if key not in SWEEP_KEYS:
            diags.append(Diagnostic(lineno, col, f"unknown sweep key {key!r}"))
            return
        raw_sweep[key] = (value, lineno, vcol)
        return

    if section == "output":
        if key not in OUTPUT_KEYS:
            diags.append(Diagnostic(lineno, col, f"unknown output key {key!r}"))
            return
        cfg.output[key] = value


def _finish_sweep(cfg: ExperimentConfig, raw: dict, diags: list[Diagnostic], eof_line: int) -> None:
    missing = [k for k in ("param", "from", "to", "steps") if k not in raw]
    if missing:
        # Incompleteness is only known at end of input; point there so the
        # diagnostic never lands above whichever line caused the gap.
        diags.append(Diagnostic(eof_line, 1, f"sweep section missing keys: {', '.join(missing)}"))
        return
    param, pline, pcol = raw["param"]
    dim = _sweep_target_dimension(cfg, param)
    if dim is None:
        diags.append(Diagnostic(pline, pcol, f"sweep param {param!r} does not name a known key"))
        return
    values = {}
    for bound in ("from", "to"):
        text, line, col = raw[bound]
        q, err = parse_quantity(text, dim)
        if err:
            diags.append(Diagnostic(line, col, err))
            return
        values[bound] = q.magnitude
    text, line, col = raw["steps"]
    q, err = parse_quantity(text, DIMENSIONLESS)
    if err or q.magnitude != int(q.magnitude):
        diags.append(Diagnostic(line, col, err or f"steps must be an integer, got {text!r}"))
        return
    steps = int(q.magnitude)
    if steps < 2:
        diags.append(Diagnostic(line, col, f"sweep needs steps >= 2, got {steps}"))
        return
    scale = "linear"
    if "scale" in raw:
        text, line, col = raw["scale"]
        if text not in ("linear", "log"):
            diags.append(Diagnostic(line, col, f"scale must be linear or log, got {text!r}"))
            return
        scale = text
    if values["from"] == values["to"]:
        diags.append(Diagnostic(pline, pcol, "degenerate sweep: from == to with steps > 1"))
        return
    if scale == "log" and (values["from"] <= 0.0 or values["to"] <= 0.0):
        diags.append(Diagnostic(pline, pcol, "log sweep requires positive endpoints"))
        return
    cfg.sweep = SweepSpec(param, values["from"], values["to"], steps, scale)


def expand_sweep(config: ExperimentConfig) -> list[ExperimentConfig]:
    """Expand the sweep axis into `steps` configs with exact endpoints."""
    sweep = config.sweep
    if sweep is None:
        raise ValueError("config has no [sweep] section")
    n = sweep.steps
    values = []
    if sweep.scale == "log":
        import math

        la, lb = math.log(sweep.start), math.log(sweep.stop)
        values = [math.exp(la + (lb - la) * i / (n - 1)) for i in range(n)]
    else:
        values = [sweep.start + (sweep.stop - sweep.start) * i / (n - 1) for i in range(n)]
    values[0] = sweep.start
    values[-1] = sweep.stop

    out = []
    for v in values:
        clone = ExperimentConfig(
            template=config.template,
            variant=config.variant,
            biases=dict(config.biases),
            devices={k: dict(p) for k, p in config.devices.items()},
            stimulus=config.stimulus,
            solver=dict(config.solver),
            sweep=None,
            output=dict(config.output),
        )
        _assign_path(clone, sweep.param, v)
        out.append(clone)
    return out


def _assign_path(cfg: ExperimentConfig, path: str, value: float) -> None:
    parts = path.split(".")
    if parts[0] == "biases":
        cfg.biases[parts[1]] = value
    elif parts[0] == "solver":
        cfg.solver[parts[1]] = value
    elif parts[0] == "devices":
        cfg.devices.setdefault(parts[1], {})[parts[2]] = value


def serialize_config(cfg: ExperimentConfig) -> str:
    """Emit a config that parses back to an equal ExperimentConfig."""
    out = ["[circuit]", f"template = {cfg.template}", f"variant = {cfg.variant}", ""]
    bias_dims = _bias_keys(cfg.template)
    if cfg.biases:
        out.append("[biases]")
        for key, mag in cfg.biases.items():
            out.append(f"{key} = {Quantity(mag, bias_dims.get(key, ''))}")
        out.append("")
    if cfg.devices:
        out.append("[devices]")
        for inst, params in cfg.devices.items():
            table = RELAY_PARAM_KEYS if inst == "relay" else MOS_PARAM_KEYS
            for param, val in params.items():
                if isinstance(val, str):
                    out.append(f"{inst}.{param} = {val}")
                elif val == float("inf"):
                    out.append(f"{inst}.{param} = inf")
                else:
                    out.append(f"{inst}.{param} = {Quantity(val, table.get(param, ''))}")
        out.append("")
    if cfg.stimulus is not None:
        s = cfg.stimulus
        out.append("[stimulus]")
        out.append(f"kind = {s.kind}")
        for key in ("level", "base", "width", "period", "start"):
            val = getattr(s, key)
            if val:
                out.append(f"{key} = {Quantity(val, 's' if key in ('width', 'period', 'start') else '')}")
        out.append("")
    if cfg.solver:
        out.append("[solver]")
        for key, mag in cfg.solver.items():
            out.append(f"{key} = {Quantity(mag, SOLVER_KEYS.get(key) or '')}")
        out.append("")
    if cfg.sweep is not None:
        sw = cfg.sweep
        dim = _sweep_target_dimension(cfg, sw.param) or ""
        out.append("[sweep]")
        out.append(f"param = {sw.param}")
        out.append(f"from = {Quantity(sw.start, dim)}")
        out.append(f"to = {Quantity(sw.stop, dim)}")
        out.append(f"steps = {sw.steps}")
        out.append(f"scale = {sw.scale}")
        out.append("")
    if cfg.output:
        out.append("[output]")
        for key, val in cfg.output.items():
            out.append(f"{key} = {val}")
        out.append("")
    return "\n".join(out)
