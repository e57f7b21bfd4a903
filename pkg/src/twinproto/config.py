"""Scenario and run configuration: JSON in, validated dataclasses out.

A scenario file describes one session: which deployment shape to run, which
clock, the operator's timed steps, and what the session must look like when
it ends. A config file carries tuning knobs that are not part of the
scenario's meaning (twinning period, settle behavior, output paths).

Validation is strict and upfront; anything malformed raises ConfigError (or
ScenarioError for semantic problems), which the command line maps to exit
code 2 so broken inputs are distinguishable from failed runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, ScenarioError
from .messages import COMMAND_MAX, COMMAND_MIN
from .runtime import ClockMode
from .statemachine import State

MODES = ("pt", "dtp", "shadow", "twin")
STEP_ACTIONS = ("command", "inject", "set_model")

# step actions that only make sense when a model exists to edit
MODEL_ACTIONS = ("inject", "set_model")


@dataclass
class ScenarioStep:
    at_ms: int
    action: str
    value: int


@dataclass
class Expectations:
    final_status: str | None = None   # counterpart's last reported state
    model_state: str | None = None
    converged: bool | None = None
    uplink_frames: int | None = None
    min_statuses: int | None = None
    gate_rejections_min: int | None = None
    thread_sha256: str | None = None


@dataclass
class Scenario:
    name: str
    mode: str
    clock: ClockMode
    seed: int
    duration_ms: int
    steps: list = field(default_factory=list)
    measurements: list = field(default_factory=list)  # (t_ms, value)
    recording: str | None = None
    expect: Expectations = field(default_factory=Expectations)
    path: Path | None = None

    def resolve(self, rel) -> Path:
        p = Path(rel)
        if p.is_absolute() or self.path is None:
            return p
        return self.path.parent / p


@dataclass
class RunConfig:
    twinning_period_ms: int = 40
    queue_capacity: int = 4096
    run_timeout_s: float = 30.0
    thread_file: str | None = None
    record_file: str | None = None
    # run the plant in a separate OS process over loopback TCP (wall clock only)
    isolate: bool = False


def _require(cond, msg):
    if not cond:
        raise ScenarioError(msg)


def _state_name(raw, where):
    names = tuple(s.name for s in State)
    _require(raw in names, f"{where}: unknown state {raw!r}, want one of {names}")
    return raw


def parse_scenario(data, path=None) -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError("scenario root must be an object")
    name = data.get("name", "")
    _require(isinstance(name, str) and name, "scenario needs a non-empty name")
    mode = data.get("mode")
    _require(mode in MODES, f"{name}: mode must be one of {MODES}, got {mode!r}")
    clock_raw = data.get("clock", "wall")
    try:
        clock = ClockMode(clock_raw)
    except ValueError:
        raise ScenarioError(f"{name}: unknown clock {clock_raw!r}") from None
    seed = data.get("seed", 0)
    _require(isinstance(seed, int), f"{name}: seed must be an integer")
    duration = data.get("duration_ms", 0)
    _require(isinstance(duration, int) and duration > 0,
             f"{name}: duration_ms must be a positive integer")

    steps = []
    last_t = 0
    for i, raw in enumerate(data.get("steps", [])):
        where = f"{name}: steps[{i}]"
        _require(isinstance(raw, dict), f"{where} must be an object")
        t = raw.get("at_ms")
        _require(isinstance(t, int) and t >= 0, f"{where}: bad at_ms {t!r}")
        _require(t >= last_t, f"{where}: at_ms {t} goes backwards")
        last_t = t
        action = raw.get("do")
        _require(action in STEP_ACTIONS,
                 f"{where}: do must be one of {STEP_ACTIONS}, got {action!r}")
        value = raw.get("value")
        _require(isinstance(value, int), f"{where}: value must be an integer")
        if action in ("command", "inject"):
            _require(COMMAND_MIN <= value <= COMMAND_MAX,
                     f"{where}: command value {value} out of range")
        if action == "set_model":
            _require(value in tuple(int(s) for s in State),
                     f"{where}: set_model value {value} is not a state code")
        if action in MODEL_ACTIONS:
            _require(mode == "twin",
                     f"{where}: {action} requires twin mode, scenario is {mode}")
        steps.append(ScenarioStep(t, action, value))
    _require(last_t <= duration,
             f"{name}: duration_ms {duration} ends before the last step")

    measurements = []
    for i, raw in enumerate(data.get("measurements", [])):
        where = f"{name}: measurements[{i}]"
        _require(isinstance(raw, (list, tuple)) and len(raw) == 2,
                 f"{where} must be [t_ms, value]")
        t, v = raw
        _require(isinstance(t, int) and t >= 0, f"{where}: bad time {t!r}")
        _require(isinstance(v, int), f"{where}: bad value {v!r}")
        measurements.append((t, v))

    recording = data.get("recording")
    if mode == "dtp":
        _require(isinstance(recording, str) and recording,
                 f"{name}: dtp mode needs a recording path")

    raw_exp = data.get("expect", {})
    _require(isinstance(raw_exp, dict), f"{name}: expect must be an object")
    exp = Expectations()
    for key in ("final_status", "model_state"):
        if raw_exp.get(key) is not None:
            setattr(exp, key, _state_name(raw_exp[key], f"{name}: expect.{key}"))
    if raw_exp.get("converged") is not None:
        _require(isinstance(raw_exp["converged"], bool),
                 f"{name}: expect.converged must be a boolean")
        exp.converged = raw_exp["converged"]
    for key in ("uplink_frames", "min_statuses", "gate_rejections_min"):
        if raw_exp.get(key) is not None:
            _require(isinstance(raw_exp[key], int) and raw_exp[key] >= 0,
                     f"{name}: expect.{key} must be a non-negative integer")
            setattr(exp, key, raw_exp[key])
    if raw_exp.get("thread_sha256") is not None:
        h = raw_exp["thread_sha256"]
        _require(isinstance(h, str) and len(h) == 64,
                 f"{name}: expect.thread_sha256 must be a sha256 hex digest")
        exp.thread_sha256 = h
    if exp.thread_sha256 is not None:
        _require(clock is ClockMode.LOCKSTEP,
                 f"{name}: thread hashes are only stable under the lockstep clock")

    known = {"name", "mode", "clock", "seed", "duration_ms", "steps",
             "measurements", "recording", "expect"}
    extra = set(data) - known
    _require(not extra, f"{name}: unknown scenario keys {sorted(extra)}")

    return Scenario(name=name, mode=mode, clock=clock, seed=seed,
                    duration_ms=duration, steps=steps,
                    measurements=measurements, recording=recording,
                    expect=exp, path=Path(path) if path else None)


def load_scenario(path) -> Scenario:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read scenario: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scenario is not valid JSON: {exc}") from None
    return parse_scenario(data, path=path)


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    cfg = RunConfig()
    for key in ("twinning_period_ms", "queue_capacity"):
        if key in data:
            if not isinstance(data[key], int) or data[key] <= 0:
                raise ConfigError(f"config.{key} must be a positive integer")
            setattr(cfg, key, data[key])
    if "run_timeout_s" in data:
        if not isinstance(data["run_timeout_s"], (int, float)) \
                or data["run_timeout_s"] <= 0:
            raise ConfigError("config.run_timeout_s must be positive")
        cfg.run_timeout_s = float(data["run_timeout_s"])
    for key in ("thread_file", "record_file"):
        if data.get(key) is not None:
            if not isinstance(data[key], str):
                raise ConfigError(f"config.{key} must be a path string")
            setattr(cfg, key, data[key])
    if "isolate" in data:
        if not isinstance(data["isolate"], bool):
            raise ConfigError("config.isolate must be a boolean")
        cfg.isolate = data["isolate"]
    known = {"twinning_period_ms", "queue_capacity", "run_timeout_s",
             "thread_file", "record_file", "isolate"}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown config keys {sorted(extra)}")
    return cfg
