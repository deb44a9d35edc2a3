"""Scenario configuration: one flat dataclass, serialised as key=value text."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

MODES = ("parallel", "parallel_no_correction", "status_unaware", "smart")
PROFILES = ("platoon", "sdr", "constant", "impulse", "random")
CHANNELS = ("cv2x", "ideal")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    """Every field is a scalar; durations and intervals are in 1 ms slots."""

    mode: str = "parallel"
    update_interval: int = 40          # status_unaware period
    platoons: int = 3
    vehicles: int = 8                  # per platoon, leader included
    road_length: float = 1500.0
    platoon_gap: float = 30.0          # spacing between consecutive platoons (m)
    slot_ms: int = 1
    duration: int = 40000
    warmup: int = 2000
    include_warmup: bool = False
    profile: str = "platoon"
    v0: float = 10.0
    d_des: float = 10.0
    vehicle_length: float = 5.0
    a_min: float = -2.94
    a_max: float = 4.0
    w1: float = -1.0
    w2: float = -1.5
    w3: float = -0.5
    w4: float = 0.5
    w5: float = 0.5
    control_every: int = 10
    sigma_d: float = 0.01
    sigma_v: float = 0.01
    threshold: float = 0.1
    norm: str = "l1"
    decide_every: int = 10
    model_every: int = 500
    bootstrap_every: int = 100         # calibration cadence before the first confirmation
    correction_every: int = 500
    correction_phase: int = -1         # -1: half an interval after the calibration phase
    random_phases: bool = True
    window: int = 100
    calibration_resync: str = "first"  # none | first | always: which calibrations re-anchor the estimate
    lms_ridge: float = 100.0           # shrink the LMS fit towards the hold model (0: plain pinv)
    confirm_repetitions: int = 3
    confirm_timeout: int = 10
    horizon: int = 1000
    known_input: bool = True
    ack_feedback: bool = False
    channel: str = "cv2x"
    latency: int = 0
    rri: int = 10
    subchannels: int = 2
    persistence: int = 1
    exempt_handshake: bool = False
    m_init: float = 2.0
    m_min: float = 0.1
    m_max: float = 2.0
    m_int: float = 0.1
    eva_int: int = 1000
    adapt: bool = True
    delta_base: float = 0.1
    m_ref: float = 1.0
    delta_cost_frac: float = 0.05
    seed: int = 0
    trace_every: int = 10
    keep_logs: bool = False

    def __post_init__(self):
        self.validate()

    # --------------------------------------------------------------- checks
    def validate(self) -> None:
        def need(cond: bool, msg: str):
            if not cond:
                raise ConfigError(msg)

        need(self.mode in MODES, f"mode must be one of {MODES}")
        need(self.profile in PROFILES, f"profile must be one of {PROFILES}")
        need(self.channel in CHANNELS, f"channel must be one of {CHANNELS}")
        need(self.norm in ("l1", "l2"), "norm must be l1 or l2")
        need(self.slot_ms == 1, "only 1 ms slots are supported")
        need(self.platoons >= 1, "platoons must be >= 1")
        need(self.vehicles >= 2, "vehicles must be >= 2")
        for name in ("duration", "control_every", "decide_every", "window", "horizon",
                     "rri", "subchannels", "persistence", "eva_int", "trace_every",
                     "confirm_timeout"):
            need(getattr(self, name) >= 1, f"{name} must be a positive number of slots")
        for name in ("model_every", "bootstrap_every", "correction_every", "update_interval"):
            need(getattr(self, name) >= 0, f"{name} must be >= 0 (0 disables)")
        if self.mode == "status_unaware":
            need(self.update_interval >= 1, "status_unaware mode needs update_interval >= 1")
        need(self.window >= 3, "window must be >= 3")
        need(self.calibration_resync in ("none", "first", "always"),
             "calibration_resync must be none, first or always")
        need(self.lms_ridge >= 0, "lms_ridge must be >= 0")
        need(0 <= self.warmup < self.duration, "warmup must lie inside the run")
        need(self.latency >= 0 and self.confirm_repetitions >= 0, "latency and repetitions must be >= 0")
        need(self.threshold >= 0 and self.delta_base >= 0, "thresholds must be >= 0")
        need(self.sigma_d >= 0 and self.sigma_v >= 0, "noise deviations must be >= 0")
        need(self.a_min < 0 < self.a_max, "need a_min < 0 < a_max")
        need(self.d_des > 0 and self.vehicle_length > 0 and self.v0 >= 0, "bad geometry")
        need(self.m_int > 0 and self.m_min <= self.m_init <= self.m_max,
             "need m_int > 0 and m_min <= m_init <= m_max")
        need(self.m_ref > 0, "m_ref must be > 0")
        span = self.platoons * self.vehicles * (self.d_des + self.vehicle_length) \
            + (self.platoons - 1) * self.platoon_gap
        need(span <= self.road_length, "platoons do not fit on the road")

    # --------------------------------------------------------- serialisation
    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    def replace(self, **changes) -> ScenarioConfig:
        return dataclasses.replace(self, **changes)

    @property
    def label(self) -> str:
        if self.mode == "status_unaware":
            return f"status_unaware:{self.update_interval}"
        return self.mode


_FIELDS = {f.name: f for f in fields(ScenarioConfig)}


def coerce(name: str, raw: Any) -> Any:
    """Convert a textual value to the type of field ``name``."""
    if name not in _FIELDS:
        raise ConfigError(f"unknown config key '{name}'")
    kind = type(getattr(ScenarioConfig(), name))
    if not isinstance(raw, str):
        if isinstance(raw, bool) and kind is not bool:
            raise ConfigError(f"{name}: expected {kind.__name__}, got {raw!r}")
        if kind is float and isinstance(raw, int) and not isinstance(raw, bool):
            return float(raw)
        if kind is int and isinstance(raw, float) and raw.is_integer():
            return int(raw)
        if isinstance(raw, kind):
            return raw
        raise ConfigError(f"{name}: expected {kind.__name__}, got {raw!r}")
    s = raw.strip()
    try:
        if kind is bool:
            low = s.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(s)
        if kind is int:
            f = float(s)
            if not f.is_integer():
                raise ValueError(s)
            return int(f)
        if kind is float:
            return float(s)
        return s
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_mode(spec: str) -> dict:
    """``'status_unaware:40'`` -> mode and update interval overrides."""
    name, _, arg = spec.strip().partition(":")
    out: dict = {"mode": name}
    if arg:
        if name != "status_unaware":
            raise ConfigError(f"mode '{name}' takes no argument")
        out["update_interval"] = coerce("update_interval", arg)
    return out


def parse_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, val = (x.strip() for x in line.split("=", 1))
        values[key] = coerce(key, val)
    return values


def load_config(path, **overrides) -> ScenarioConfig:
    text = Path(path).read_text(encoding="utf-8")
    values = parse_text(text)
    values.update({k: coerce(k, v) for k, v in overrides.items()})
    return make_config(**values)


def make_config(**values) -> ScenarioConfig:
    values = {k: coerce(k, v) for k, v in values.items()}
    try:
        return ScenarioConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
