"""Session harness: stand up a deployment, run the operator script, judge it.

One entry point per concern:

    run_scenario   execute a scenario end to end, return a SessionResult
    replay_thread  rebuild a counterpart's trajectory from a record file
    run_suite      execute every scenario in a directory (the bundled gate)

The harness owns everything the component modules deliberately do not:
wiring links between the physical side and the twin side, tapping those
links into the interchange record, pacing the operator's steps, tearing the
whole thing down, and reducing the run to a machine-checkable verdict.

Mode map (who hangs off the plant's two external links):

    pt      real sensor, operator holds both links
    dtp     emulated sensor behind the bridge, operator holds both links
    shadow  ingest link feeds a monitor/analyze deployment; the command
            link stays with the operator; no uplink object exists
    twin    ingest link feeds the full engine; the command link IS the
            engine's uplink; the operator talks to the model only
"""

from __future__ import annotations

import hashlib
import json
import subprocess
import sys
import time
from dataclasses import dataclass, field, replace

from .bus import EventBus
from .config import RunConfig, Scenario
from .control import SensorBacking, assemble_plant
from .errors import CodecError, ConfigError, ThreadLogError
from .mapek import assemble_shadow, assemble_twin
from .messages import MessageKind, command, encode_message, decode_message, status
from .runtime import ClockMode, make_runtime
from .statemachine import State
from .thread_log import (
    TappedEndpoint,
    ThreadDirection,
    ThreadLog,
    load_recordings,
    read_thread_file,
    write_recording_file,
)
from .transport import Protocol, TcpListener, connect_pair, tcp_connect


@dataclass
class SessionResult:
    name: str
    mode: str
    clock: str
    seed: int
    ok: bool = True
    failures: list = field(default_factory=list)
    final_status: str | None = None
    model_state: str | None = None
    converged: bool | None = None
    statuses_seen: int = 0
    measurements_seen: int = 0
    pt2dt_frames: int = 0
    dt2pt_frames: int = 0
    gate_committed: int = 0
    gate_rejected: int = 0
    thread_lines: int = 0
    thread_sha256: str | None = None
    elapsed_s: float = 0.0

    def fail(self, msg):
        self.ok = False
        self.failures.append(msg)

    def summary_line(self) -> str:
        verdict = "PASS" if self.ok else "FAIL"
        tail = "" if self.ok else "  [" + "; ".join(self.failures) + "]"
        return (f"{verdict} {self.name} mode={self.mode} clock={self.clock} "
                f"seed={self.seed} status={self.final_status} "
                f"frames={self.pt2dt_frames}/{self.dt2pt_frames} "
                f"({self.elapsed_s:.2f}s){tail}")


def thread_digest(log: ThreadLog) -> str:
    """Stable content hash of a whole interchange record."""
    h = hashlib.sha256()
    for rec in log.records:
        h.update(rec.format_line().encode("utf-8"))
    return h.hexdigest()


def run_scenario(scenario: Scenario, config: RunConfig | None = None) -> SessionResult:
    cfg = config if config is not None else RunConfig()
    result = SessionResult(scenario.name, scenario.mode, scenario.clock.value,
                           scenario.seed)
    started = time.monotonic()

    rt = make_runtime(scenario.clock, scenario.seed)

    # the plant's two external links; who holds the far ends depends on mode.
    # With isolation on, the plant lives in a child OS process and the links
    # are real loopback TCP; otherwise everything shares this runtime.
    child = None
    if cfg.isolate:
        if scenario.clock is not ClockMode.WALL:
            raise ConfigError("isolated runs need the wall clock; "
                              "lockstep scheduling cannot cross processes")
        up_listener = TcpListener("127.0.0.1", 0)
        down_listener = TcpListener("127.0.0.1", 0)
        child = _spawn_plant_process(scenario, up_listener.address[1],
                                     down_listener.address[1])
        try:
            up_peer = up_listener.accept(name="link:peer-up", timeout=15.0)
            down_peer = down_listener.accept(name="link:peer-down",
                                             timeout=15.0)
        except Exception:
            child.kill()
            child.wait()
            raise ConfigError("plant process never connected") from None
        finally:
            up_listener.close()
            down_listener.close()
        up_plant = down_plant = None
    else:
        up_plant, up_peer = connect_pair(rt, "link:pt-up", "link:peer-up",
                                         Protocol.TCP)
        down_peer, down_plant = connect_pair(rt, "link:peer-down",
                                             "link:pt-down", Protocol.TCP)
    raw_up, raw_down = up_peer, down_peer

    log = None
    twin = None
    operator_up = None
    operator_down = None
    if scenario.mode in ("shadow", "twin"):
        log = ThreadLog(path=cfg.thread_file)
        dt_bus = EventBus(rt, cfg.queue_capacity)
        ingest = TappedEndpoint(up_peer, log, rt,
                                read_dir=ThreadDirection.PT2DT)
        if scenario.mode == "twin":
            uplink = TappedEndpoint(down_peer, log, rt,
                                    write_dir=ThreadDirection.DT2PT)
            twin = assemble_twin(rt, dt_bus, ingest, uplink, thread_log=log,
                                 twinning_period_ms=cfg.twinning_period_ms)
        else:
            twin = assemble_shadow(rt, dt_bus, ingest)
            operator_down = down_peer
    else:
        operator_up = up_peer
        operator_down = down_peer

    plant = None
    if not cfg.isolate:
        pt_bus = EventBus(rt, cfg.queue_capacity)
        # a recording means the plant runs on the emulator, whatever is
        # attached above it; dtp is just the bare-operator case of that
        if scenario.mode == "dtp" or scenario.recording:
            backing = SensorBacking.EMULATED
            recording = load_recordings(scenario.resolve(scenario.recording))
        else:
            backing = SensorBacking.REAL
            recording = None
        plant = assemble_plant(rt, pt_bus, backing, recording=recording,
                               outbound=up_plant, inbound=down_plant,
                               measurement_script=scenario.measurements or None)

    observed = []  # status codes seen by the operator (pt/dtp modes)

    def watch_up():
        while True:
            payload = operator_up.read_frame()
            try:
                msg = decode_message(payload)
            except CodecError:
                continue
            if msg.kind is MessageKind.STATUS:
                observed.append(State(msg.value))

    if operator_up is not None:
        rt.spawn(watch_up, name="op:watch")

    def observed_state():
        if twin is not None:
            return twin.keeper.last_observed
        return observed[-1] if observed else None

    def expectations_settled():
        exp = scenario.expect
        waitable = False
        if exp.final_status is not None:
            waitable = True
            got = observed_state()
            if got is None or got.name != exp.final_status:
                return False
        if exp.model_state is not None:
            waitable = True
            if twin is None or twin.model_state().name != exp.model_state:
                return False
        if exp.converged is True:
            waitable = True
            if twin is None or not twin.converged:
                return False
        if exp.uplink_frames is not None:
            waitable = True
            if log is None or \
                    log.frame_counts()[ThreadDirection.DT2PT] < exp.uplink_frames:
                return False
        if exp.min_statuses is not None:
            waitable = True
            seen = twin.monitor_stats.statuses if twin is not None \
                else len(observed)
            if seen < exp.min_statuses:
                return False
        if exp.gate_rejections_min is not None:
            waitable = True
            if twin is None or twin.gate is None \
                    or twin.gate.rejected < exp.gate_rejections_min:
                return False
        return waitable

    def apply_step(step):
        if step.action == "command":
            if twin is not None and twin.has_uplink:
                twin.send_command(command(step.value))
            else:
                operator_down.write_frame(encode_message(command(step.value)))
        elif step.action == "inject":
            twin.inject_model_change(command(step.value))
        else:  # set_model: direct model-state edit
            twin.inject_model_change(status(step.value))

    def operator():
        t0 = rt.now_ns()
        for step in scenario.steps:
            delay = step.at_ms - rt.ms_since(t0)
            if delay > 0:
                rt.sleep_ms(delay)
            apply_step(step)
        while rt.ms_since(t0) < scenario.duration_ms:
            if expectations_settled():
                break
            rt.sleep_ms(2)
        if plant is not None:
            plant.stop()
        else:
            raw_up.close()
            raw_down.close()
        rt.shutdown()

    rt.spawn(operator, name="op:script")
    stragglers = rt.run(timeout=cfg.run_timeout_s)
    if stragglers:
        result.fail(f"tasks never finished: {stragglers}")
    for task_name, err in rt.task_errors():
        result.fail(f"task {task_name} crashed: {err!r}")
    if child is not None:
        try:
            rc = child.wait(timeout=cfg.run_timeout_s)
        except subprocess.TimeoutExpired:
            child.kill()
            child.wait()
            result.fail("plant process never exited")
        else:
            if rc != 0:
                result.fail(f"plant process exit code {rc}")

    # -- collect -----------------------------------------------------------
    final = observed_state()
    result.final_status = final.name if final is not None else None
    if twin is not None:
        result.model_state = twin.model_state().name
        result.converged = twin.converged
        result.statuses_seen = twin.monitor_stats.statuses
        result.measurements_seen = twin.monitor_stats.measurements
        if twin.gate is not None:
            result.gate_committed = twin.gate.committed
            result.gate_rejected = twin.gate.rejected
    else:
        result.statuses_seen = len(observed)

    if log is not None:
        log.close()
        counts = log.frame_counts()
        result.pt2dt_frames = counts[ThreadDirection.PT2DT]
        result.dt2pt_frames = counts[ThreadDirection.DT2PT]
        result.thread_lines = len(log.records)
        result.thread_sha256 = thread_digest(log)
        _check_thread_invariants(scenario.mode, twin, counts, result)
        if cfg.record_file:
            write_recording_file(log.records, cfg.record_file)

    _check_expectations(scenario, result)
    result.elapsed_s = time.monotonic() - started
    return result


def _check_thread_invariants(mode, twin, counts, result):
    """The record must be complete and the mode's direction rules must hold."""
    ingested = (twin.ingest_driver.stats.relayed_in
                + twin.ingest_driver.stats.skipped_in)
    if counts[ThreadDirection.PT2DT] != ingested:
        result.fail(f"record incomplete: {counts[ThreadDirection.PT2DT]} "
                    f"ingest frames recorded, driver saw {ingested}")
    if mode == "shadow":
        if twin.has_uplink:
            result.fail("shadow deployment holds an uplink object")
        if counts[ThreadDirection.DT2PT] != 0:
            result.fail(f"shadow produced {counts[ThreadDirection.DT2PT]} "
                        f"uplink frames")
    if mode == "twin":
        sent = twin.uplink_driver.stats.relayed_out
        if counts[ThreadDirection.DT2PT] != sent:
            result.fail(f"record incomplete: {counts[ThreadDirection.DT2PT]} "
                        f"uplink frames recorded, driver sent {sent}")


def _check_expectations(scenario: Scenario, result: SessionResult):
    exp = scenario.expect
    if exp.final_status is not None and result.final_status != exp.final_status:
        result.fail(f"final status {result.final_status}, "
                    f"want {exp.final_status}")
    if exp.model_state is not None and result.model_state != exp.model_state:
        result.fail(f"model state {result.model_state}, want {exp.model_state}")
    if exp.converged is not None and result.converged is not exp.converged:
        result.fail(f"converged is {result.converged}, want {exp.converged}")
    if exp.uplink_frames is not None and result.dt2pt_frames != exp.uplink_frames:
        result.fail(f"{result.dt2pt_frames} uplink frames, "
                    f"want {exp.uplink_frames}")
    if exp.min_statuses is not None and result.statuses_seen < exp.min_statuses:
        result.fail(f"saw {result.statuses_seen} statuses, "
                    f"want at least {exp.min_statuses}")
    if exp.gate_rejections_min is not None \
            and result.gate_rejected < exp.gate_rejections_min:
        result.fail(f"{result.gate_rejected} gate rejections, "
                    f"want at least {exp.gate_rejections_min}")
    if exp.thread_sha256 is not None and result.thread_sha256 != exp.thread_sha256:
        result.fail(f"record digest {result.thread_sha256}, "
                    f"want {exp.thread_sha256}")


def record_session(scenario: Scenario, config: RunConfig | None = None,
                   record_path=None) -> SessionResult:
    """Run a real-backed observing session and persist the ingest half.

    The output file loads straight back as emulator recordings, which is
    the whole point: capture once against the real sensor, replay forever.
    """
    if scenario.mode == "dtp" or scenario.recording:
        raise ConfigError("recording needs a real-backed run, "
                          "not an emulator-backed one")
    for step in scenario.steps:
        if step.action != "command":
            raise ConfigError("recording scenarios may only use command steps")
    lifted = scenario if scenario.mode in ("shadow", "twin") \
        else replace(scenario, mode="shadow")
    cfg = replace(config if config is not None else RunConfig())
    if record_path is not None:
        cfg.record_file = str(record_path)
    if not cfg.record_file:
        raise ConfigError("record needs an output path")
    return run_scenario(lifted, cfg)


# ---------------------------------------------------------------------------
# Isolated plant process
# ---------------------------------------------------------------------------

_CHILD_CODE = ("import sys\n"
               "from twinproto.harness import plant_process_main\n"
               "sys.exit(plant_process_main(sys.argv[1]))\n")


def _spawn_plant_process(scenario: Scenario, up_port: int, down_port: int):
    opts = {
        "seed": scenario.seed,
        "duration_ms": scenario.duration_ms,
        "up_port": up_port,
        "down_port": down_port,
        "measurements": [list(p) for p in scenario.measurements],
    }
    if scenario.mode == "dtp" or scenario.recording:
        opts["recording"] = str(scenario.resolve(scenario.recording))
    return subprocess.Popen([sys.executable, "-c", _CHILD_CODE,
                             json.dumps(opts)])


def plant_process_main(raw: str) -> int:
    """Child half of an isolated run: the whole plant behind two TCP links.

    Lives until the scenario duration plus a grace period, then tears itself
    down. The parent hanging up early just makes the link drivers exit; the
    deadline still bounds the process lifetime.
    """
    opts = json.loads(raw)
    rt = make_runtime(ClockMode.WALL, opts.get("seed", 0))
    bus = EventBus(rt)
    up = tcp_connect("127.0.0.1", opts["up_port"], name="plant:up")
    down = tcp_connect("127.0.0.1", opts["down_port"], name="plant:down")
    if opts.get("recording"):
        backing = SensorBacking.EMULATED
        recording = load_recordings(opts["recording"])
    else:
        backing = SensorBacking.REAL
        recording = None
    script = [tuple(p) for p in opts.get("measurements", [])] or None
    plant = assemble_plant(rt, bus, backing, recording=recording,
                           outbound=up, inbound=down,
                           measurement_script=script)

    def deadline():
        rt.sleep_ms(opts["duration_ms"] + 2000)
        plant.stop()
        rt.shutdown()

    def hangup_watch():
        # the parent closing either link is the end of the session
        while not (up.closed or down.closed):
            rt.sleep_ms(100)
        plant.stop()
        rt.shutdown()

    rt.spawn(deadline, name="plant:deadline")
    rt.spawn(hangup_watch, name="plant:hangup")
    stragglers = rt.run(timeout=opts["duration_ms"] / 1000.0 + 10.0)
    bad = False
    for task_name, err in rt.task_errors():
        print(f"plant task {task_name}: {err!r}", file=sys.stderr)
        bad = True
    if stragglers:
        print(f"plant stragglers: {stragglers}", file=sys.stderr)
        bad = True
    return 1 if bad else 0


# ---------------------------------------------------------------------------
# Replay
# ---------------------------------------------------------------------------

@dataclass
class ReplayResult:
    path: str
    ok: bool = True
    failures: list = field(default_factory=list)
    frames_fed: int = 0
    statuses_seen: int = 0
    measurements_seen: int = 0
    final_state: str | None = None
    trajectory: list = field(default_factory=list)  # state names, in order

    def fail(self, msg):
        self.ok = False
        self.failures.append(msg)

    def summary_line(self) -> str:
        verdict = "PASS" if self.ok else "FAIL"
        tail = "" if self.ok else "  [" + "; ".join(self.failures) + "]"
        return (f"{verdict} replay {self.path} frames={self.frames_fed} "
                f"final={self.final_state} "
                f"trajectory={'>'.join(self.trajectory)}{tail}")


def reference_trajectory(records) -> list:
    """State walk a record file implies: distinct changes from the initial."""
    walk = []
    current = State.STANDBY
    for rec in records:
        if rec.direction is ThreadDirection.PT2DT and rec.kind == "STA":
            s = State(decode_message(rec.payload).value)
            if s is not current:
                walk.append(s)
                current = s
    return walk


def replay_thread(path, clock: ClockMode = ClockMode.LOCKSTEP, seed: int = 0,
                  paced: bool | None = None, timeout_s: float = 30.0) -> ReplayResult:
    """Feed a record file into a fresh offline shadow deployment.

    The shadow sees exactly what the original one saw, so its model must
    walk the same states. `paced` sleeps the recorded gaps between frames
    (defaults on for the wall clock, off for lockstep, where the logical
    clock makes pacing meaningless).
    """
    result = ReplayResult(str(path))
    try:
        records = read_thread_file(path)  # grammar and ordering enforced here
    except OSError as exc:
        raise ConfigError(f"cannot read record file: {exc}") from None
    except ThreadLogError as exc:
        raise ConfigError(f"record file rejected: {exc}") from None
    frames = [r for r in records
              if r.direction is ThreadDirection.PT2DT and r.is_frame]
    if paced is None:
        paced = clock is ClockMode.WALL

    rt = make_runtime(clock, seed)
    bus = EventBus(rt)
    feed_end, dt_end = connect_pair(rt, "replay:feed", "replay:ingest",
                                    Protocol.TCP)
    shadow = assemble_shadow(rt, bus, dt_end, name="replay")

    def feeder():
        prev_ts = None
        for rec in frames:
            if paced and prev_ts is not None:
                delta = rec.ts - prev_ts
                # wall records carry nanoseconds, lockstep records ticks
                ms = delta // 1_000_000 if delta > 1_000_000 else delta
                if ms > 0:
                    rt.sleep_ms(min(int(ms), 1000))
            prev_ts = rec.ts
            feed_end.write_frame(rec.payload)
        stats = shadow.monitor_stats
        while (stats.statuses + stats.measurements + stats.strays) < len(frames):
            rt.sleep_ms(1)
        rt.shutdown()

    rt.spawn(feeder, name="replay:feeder")
    stragglers = rt.run(timeout=timeout_s)
    if stragglers:
        result.fail(f"tasks never finished: {stragglers}")
    for task_name, err in rt.task_errors():
        result.fail(f"task {task_name} crashed: {err!r}")

    result.frames_fed = len(frames)
    result.statuses_seen = shadow.monitor_stats.statuses
    result.measurements_seen = shadow.monitor_stats.measurements
    result.final_state = shadow.model_state().name
    result.trajectory = [s.name for _, s in shadow.keeper.trajectory]

    consumed = (shadow.monitor_stats.statuses
                + shadow.monitor_stats.measurements
                + shadow.monitor_stats.strays)
    if consumed != len(frames):
        result.fail(f"consumed {consumed} of {len(frames)} frames")
    want_walk = [s.name for s in reference_trajectory(records)]
    if result.trajectory != want_walk:
        result.fail(f"trajectory {result.trajectory} != record walk {want_walk}")
    return result


# ---------------------------------------------------------------------------
# Bundled scenario suite
# ---------------------------------------------------------------------------

def run_suite(suite_dir, config: RunConfig | None = None,
              force_lockstep: bool = False):
    """Run every scenario file in a directory, sorted by name.

    `force_lockstep` is what the CI gate uses: every case runs on the
    logical clock no matter what the file says, so the whole suite is
    deterministic and fast.
    """
    from pathlib import Path

    from .config import load_scenario

    paths = sorted(Path(suite_dir).glob("*.json"))
    if not paths:
        raise ConfigError(f"no scenario files in {suite_dir}")
    results = []
    for p in paths:
        scenario = load_scenario(p)
        if force_lockstep and scenario.clock is not ClockMode.LOCKSTEP:
            scenario = replace(scenario, clock=ClockMode.LOCKSTEP)
        results.append(run_scenario(scenario, config))
    return results
