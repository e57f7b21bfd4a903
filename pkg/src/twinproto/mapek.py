"""Twin-side engine: monitor, analyze, plan, execute around a state model.

The engine consumes the physical side's traffic from one ingest connection
and keeps a model of the counterpart device. Four stages run as independent
tasks chained by bus topics:

    ingest driver -> monitor  (classify: status observation / measurement)
    monitor       -> analyze  (compare observation against the model)
    analyze       -> plan     (derive a corrective command on divergence)
    plan          -> execute  (simulation gate, then the uplink driver)

Two deployment shapes share this code. A shadow wires monitor and analyze
only and holds NO uplink connection object: nothing in the process is
capable of writing toward the physical side, so the one-way property is
structural rather than a policy that could regress. A full twin adds plan,
execute, an uplink driver and a periodic re-check, making model edits
propagate to the device and device drift propagate back into the model.

Divergence handling follows one rule: the side that changed last wins. An
observed state change with no pending goal updates the model (the model
follows its counterpart). An operator model edit marks a goal; observations
stop updating the model until the counterpart reports the goal state, and
the plan/execute stages push it there.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

from .bus import (
    TOPIC_DT_ANALYSIS,
    TOPIC_DT_EXECUTE,
    TOPIC_DT_INGEST,
    TOPIC_DT_MEASUREMENT,
    TOPIC_DT_PLAN,
    TOPIC_DT_STATUS,
)
from .devices import DeviceDriver
from .errors import GateRejected
from .messages import OP_COMMAND, Message, MessageKind, command, status
from .statemachine import State, TwinState, process_event, transition

# corrective command toward ACTIVE uses this sampling period
PLAN_DEFAULT_PERIOD = 50
DEFAULT_TWINNING_PERIOD_MS = 40


@dataclass
class AnalysisResult:
    """One comparison of the counterpart against the model."""

    ts: int
    pt_state: State
    model_state: State      # after resolution (mirror updates included)
    equal: bool
    mirrored: bool = False  # agreement came from following the counterpart


@dataclass
class PlanResult:
    ts: int
    command: Message
    goal: State
    observed: State


@dataclass
class MonitorStats:
    statuses: int = 0
    measurements: int = 0
    strays: int = 0  # inbound frames that make no sense from a counterpart


@dataclass
class PlanStats:
    noop: int = 0
    planned: int = 0


class ModelKeeper:
    """Serialized access to the model state and its history."""

    def __init__(self, initial: TwinState | None = None):
        self._lock = threading.Lock()
        self.model = initial if initial is not None else TwinState()
        self.goal_pending = False
        self.last_observed = None  # State reported most recently, or None
        self.trajectory = []       # (ts, State) at every model change
        self.mirrored_count = 0

    def note_observation(self, state: State):
        with self._lock:
            self.last_observed = state

    def observe(self, obs: State, ts: int) -> AnalysisResult:
        """Resolve one observation against the model.

        Match: done (a pending goal is hereby reached). Mismatch with a goal
        pending: hold the model, report divergence. Mismatch without a goal:
        the model follows the counterpart.
        """
        with self._lock:
            if obs is self.model.current:
                self.goal_pending = False
                return AnalysisResult(ts, obs, self.model.current, True)
            if self.goal_pending:
                return AnalysisResult(ts, obs, self.model.current, False)
            self.model = process_event(self.model, status(int(obs)))
            self.trajectory.append((ts, self.model.current))
            self.mirrored_count += 1
            return AnalysisResult(ts, obs, self.model.current, True,
                                  mirrored=True)

    def inject(self, cmd: Message, ts: int) -> State:
        """Operator edit: apply a command to the model only."""
        with self._lock:
            self.model = process_event(self.model, cmd)
            self.trajectory.append((ts, self.model.current))
            self.goal_pending = self.last_observed is not self.model.current
            return self.model.current

    def snapshot(self) -> TwinState:
        with self._lock:
            return self.model

    @property
    def converged(self) -> bool:
        with self._lock:
            return not self.goal_pending


def command_for_goal(goal: State) -> Message:
    if goal is State.ACTIVE:
        return command(PLAN_DEFAULT_PERIOD)
    if goal is State.STANDBY:
        return command(0)
    return command(-1)


class ExecuteGate:
    """Commit gate: a corrective command must prove itself on a copy first.

    The candidate is applied to a throwaway copy of the counterpart's last
    reported state using the pure transition rule; only an exact landing on
    the goal state lets it through to the uplink.
    """

    def __init__(self, keeper: ModelKeeper):
        self.keeper = keeper
        self.committed = 0
        self.rejected = 0

    def enforce(self, plan: PlanResult, observed: State | None = None) -> Message:
        pt = observed if observed is not None else self.keeper.last_observed
        if pt is None:
            pt = plan.observed
        simulated = transition(pt, plan.command.value)
        if simulated is not plan.goal:
            self.rejected += 1
            raise GateRejected(
                f"simulated {pt.name} + cmd({plan.command.value}) -> "
                f"{simulated.name}, want {plan.goal.name}"
            )
        self.committed += 1
        return plan.command


# ---------------------------------------------------------------------------
# Stage loops (each runs as one task)
# ---------------------------------------------------------------------------

def monitor_loop(keeper, sub, out_status, out_measurement, stats):
    while True:
        msg = sub.consume()
        if msg.kind is MessageKind.STATUS:
            stats.statuses += 1
            keeper.note_observation(State(msg.value))
            out_status.emit(msg)
        elif msg.kind is MessageKind.MEASUREMENT:
            stats.measurements += 1
            out_measurement.emit(msg)
        else:
            stats.strays += 1  # commands never arrive from the counterpart


def analyze_loop(runtime, keeper, sub, out_analysis, analyses):
    while True:
        msg = sub.consume()
        res = keeper.observe(State(msg.value), runtime.now_ns())
        analyses.append(res)
        out_analysis.emit(res)


def plan_loop(runtime, sub, out_plan, stats):
    while True:
        res = sub.consume()
        if res.equal:
            stats.noop += 1
            continue
        cmd = command_for_goal(res.model_state)
        out_plan.emit(PlanResult(runtime.now_ns(), cmd, res.model_state,
                                 res.pt_state))
        stats.planned += 1


def execute_loop(runtime, gate, sub, out_execute, thread_log=None):
    while True:
        plan = sub.consume()
        try:
            out_execute.emit(gate.enforce(plan))
        except GateRejected as exc:
            if thread_log is not None:
                thread_log.append_note(runtime.now_ns(), f"gate rejected: {exc}")


def collect_loop(runtime, sub, series):
    while True:
        msg = sub.consume()
        series.append((runtime.now_ns(), msg.value))


# ---------------------------------------------------------------------------
# Deployments
# ---------------------------------------------------------------------------

class DigitalTwin:
    """Handle on one running twin or shadow deployment."""

    def __init__(self, runtime, bus, keeper, ingest_driver, uplink_driver=None,
                 gate=None, twinning_period_ms=None):
        self._rt = runtime
        self._bus = bus
        self.keeper = keeper
        self.ingest_driver = ingest_driver
        self.uplink_driver = uplink_driver
        self.gate = gate
        self.twinning_period_ms = twinning_period_ms
        self.monitor_stats = MonitorStats()
        self.plan_stats = PlanStats()
        self.analyses = []
        self.measurements = []
        self._status_out = bus.producer(TOPIC_DT_STATUS)
        self._execute_out = bus.producer(TOPIC_DT_EXECUTE)

    @property
    def has_uplink(self) -> bool:
        return self.uplink_driver is not None

    @property
    def converged(self) -> bool:
        return self.keeper.converged

    def model_state(self) -> State:
        return self.keeper.snapshot().current

    def recheck(self):
        """Re-run analysis against the latest report from the counterpart."""
        obs = self.keeper.last_observed
        if obs is not None:
            self._status_out.emit(status(int(obs)))

    def inject_model_change(self, cmd: Message) -> State:
        """Apply a command to the model; the engine pushes the device after it."""
        if not self.has_uplink:
            raise RuntimeError("deployment has no uplink; model edits cannot "
                               "propagate")
        goal = self.keeper.inject(cmd, self._rt.now_ns())
        self.recheck()
        return goal

    def send_command(self, cmd: Message):
        """Operator passthrough: straight to the uplink, no goal bookkeeping."""
        if not self.has_uplink:
            raise RuntimeError("deployment has no uplink")
        self._execute_out.emit(cmd)

    def describe(self):
        info = {
            "ingest": self.ingest_driver.describe(),
            "stages": ["monitor", "analyze"],
            "uplink": None,
        }
        if self.has_uplink:
            info["stages"] += ["plan", "execute"]
            info["uplink"] = self.uplink_driver.describe()
            info["twinning_period_ms"] = self.twinning_period_ms
        return info


def assemble_shadow(runtime, bus, ingest_conn, name="shadow"):
    """Monitor + analyze over an ingest link. No uplink object exists."""
    keeper = ModelKeeper()
    ingest_driver = DeviceDriver(ingest_conn, bus, emit_topic=TOPIC_DT_INGEST,
                                 command_set=frozenset(), name=f"{name}-ingest")
    twin = DigitalTwin(runtime, bus, keeper, ingest_driver)

    # every subscription exists before the source task starts pumping
    sub_ingest = bus.subscribe(TOPIC_DT_INGEST, name=f"{name}-monitor")
    sub_status = bus.subscribe(TOPIC_DT_STATUS, name=f"{name}-analyze")
    sub_meas = bus.subscribe(TOPIC_DT_MEASUREMENT, name=f"{name}-knowledge")
    out_status = bus.producer(TOPIC_DT_STATUS)
    out_meas = bus.producer(TOPIC_DT_MEASUREMENT)
    out_analysis = bus.producer(TOPIC_DT_ANALYSIS)

    runtime.spawn(lambda: monitor_loop(keeper, sub_ingest, out_status,
                                       out_meas, twin.monitor_stats),
                  name=f"{name}:monitor")
    runtime.spawn(lambda: analyze_loop(runtime, keeper, sub_status,
                                       out_analysis, twin.analyses),
                  name=f"{name}:analyze")
    runtime.spawn(lambda: collect_loop(runtime, sub_meas, twin.measurements),
                  name=f"{name}:knowledge")
    runtime.spawn(ingest_driver.receive_loop, name=f"{name}:ingest")
    return twin


def assemble_twin(runtime, bus, ingest_conn, uplink_conn, thread_log=None,
                  twinning_period_ms=DEFAULT_TWINNING_PERIOD_MS, name="twin"):
    """Full closed loop: shadow stages plus plan, execute, uplink, re-check."""
    keeper = ModelKeeper()
    ingest_driver = DeviceDriver(ingest_conn, bus, emit_topic=TOPIC_DT_INGEST,
                                 command_set=frozenset(), name=f"{name}-ingest")
    uplink_driver = DeviceDriver(uplink_conn, bus,
                                 consume_topic=TOPIC_DT_EXECUTE,
                                 command_set=frozenset({OP_COMMAND}),
                                 name=f"{name}-uplink")
    gate = ExecuteGate(keeper)
    twin = DigitalTwin(runtime, bus, keeper, ingest_driver,
                       uplink_driver=uplink_driver, gate=gate,
                       twinning_period_ms=twinning_period_ms)

    sub_ingest = bus.subscribe(TOPIC_DT_INGEST, name=f"{name}-monitor")
    sub_status = bus.subscribe(TOPIC_DT_STATUS, name=f"{name}-analyze")
    sub_meas = bus.subscribe(TOPIC_DT_MEASUREMENT, name=f"{name}-knowledge")
    sub_analysis = bus.subscribe(TOPIC_DT_ANALYSIS, name=f"{name}-plan")
    sub_plan = bus.subscribe(TOPIC_DT_PLAN, name=f"{name}-execute")
    out_status = bus.producer(TOPIC_DT_STATUS)
    out_meas = bus.producer(TOPIC_DT_MEASUREMENT)
    out_analysis = bus.producer(TOPIC_DT_ANALYSIS)
    out_plan = bus.producer(TOPIC_DT_PLAN)
    out_execute = bus.producer(TOPIC_DT_EXECUTE)

    runtime.spawn(lambda: monitor_loop(keeper, sub_ingest, out_status,
                                       out_meas, twin.monitor_stats),
                  name=f"{name}:monitor")
    runtime.spawn(lambda: analyze_loop(runtime, keeper, sub_status,
                                       out_analysis, twin.analyses),
                  name=f"{name}:analyze")
    runtime.spawn(lambda: plan_loop(runtime, sub_analysis, out_plan,
                                    twin.plan_stats),
                  name=f"{name}:plan")
    runtime.spawn(lambda: execute_loop(runtime, gate, sub_plan, out_execute,
                                       thread_log=thread_log),
                  name=f"{name}:execute")
    runtime.spawn(lambda: collect_loop(runtime, sub_meas, twin.measurements),
                  name=f"{name}:knowledge")
    runtime.spawn(uplink_driver.send_loop, name=f"{name}:uplink")
    runtime.spawn(ingest_driver.receive_loop, name=f"{name}:ingest")

    def twinning_poll():
        while True:
            runtime.sleep_ms(twinning_period_ms)
            twin.recheck()

    runtime.spawn(twinning_poll, name=f"{name}:poll")
    return twin
