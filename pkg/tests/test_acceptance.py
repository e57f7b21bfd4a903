"""Acceptance gate: one test per shipped claim, tolerances pinned up front.

Each test is a full statement of one user-facing guarantee. Everything runs
on one machine, loopback only, no hardware. Budgets are wall-clock seconds
measured around the interesting part, not around pytest overhead.
"""

import random
import subprocess
import sys
import time

from reference_fsm import all_sequences, ref_fold, ref_step

from twinproto.bus import EventBus, TOPIC_DT_EXECUTE, TOPIC_DT_PLAN
from twinproto.config import RunConfig, parse_scenario
from twinproto.control import SensorBacking, assemble_plant
from twinproto.harness import record_session, replay_thread, run_scenario
from twinproto.mapek import (
    DEFAULT_TWINNING_PERIOD_MS,
    ExecuteGate,
    ModelKeeper,
    PlanResult,
    assemble_twin,
    execute_loop,
)
from twinproto.messages import (
    COMMAND_MAX,
    COMMAND_MIN,
    MEASUREMENT_MAX,
    MEASUREMENT_MIN,
    STATUS_CODES,
    command,
    decode_message,
    encode_message,
    measurement,
    status,
)
from twinproto.runtime import ClockMode, make_runtime
from twinproto.statemachine import State, fold_commands
from twinproto.thread_log import (
    TappedEndpoint,
    ThreadDirection,
    ThreadLog,
    read_thread_file,
)
from twinproto.transport import Protocol, connect_pair, frame_payload, unframe

# pinned tolerances, one place to read them all
MIN_SCRIPTED_COMMANDS = 100
INDISTINGUISHABILITY_BUDGET_S = 5.0
ORACLE_ALPHABET = (-1, 0, 1, 50)
ORACLE_MAX_LEN = 6
ORACLE_BUDGET_S = 1.0
SHADOW_EVENT_FLOOR = 1000
CONVERGENCE_TRIALS = 20                      # 10 wall + 10 lockstep
WALL_CONVERGENCE_BUDGET_MS = 2 * DEFAULT_TWINNING_PERIOD_MS
LOCKSTEP_CONVERGENCE_ROUNDS = 3
GATE_FUZZ_PLANS = 1000
THREAD_REPLAY_BUDGET_S = 5.0
DETERMINISM_SEED_PAIRS = 10
CODEC_ROUND_TRIPS = 10_000
CODEC_BUDGET_S = 1.0
CI_SUITE_BUDGET_S = 60.0
CI_SUITE_MIN_SCENARIOS = 5

MISSION_STEPS = [
    {"at_ms": 0, "do": "command", "value": 50},
    {"at_ms": 500, "do": "command", "value": 0},
    {"at_ms": 900, "do": "command", "value": -1},
]


def scenario(**over):
    data = {
        "name": "acceptance",
        "mode": "twin",
        "clock": "lockstep",
        "seed": 1,
        "duration_ms": 1200,
        "steps": list(MISSION_STEPS),
        "expect": {"final_status": "OFF"},
    }
    data.update(over)
    return parse_scenario(data)


def frame_walk(thread_path, direction):
    return [rec.payload for rec in read_thread_file(thread_path)
            if rec.is_frame and rec.direction is direction]


# ---------------------------------------------------------------------------
# 1. A recorded real session replays through the emulator byte-for-byte.
# ---------------------------------------------------------------------------

def test_c1_emulator_indistinguishable_from_real_device(tmp_path):
    rng = random.Random(101)
    values = [rng.randrange(0, 61) for _ in range(MIN_SCRIPTED_COMMANDS - 1)]
    values.append(-1)
    steps = [{"at_ms": 10 * i, "do": "command", "value": v}
             for i, v in enumerate(values)]
    expect = {"min_statuses": len(values) + 1}  # boot plus one ack each

    started = time.monotonic()
    real_thread = tmp_path / "real.thread"
    rec_file = tmp_path / "capture.rec"
    real = record_session(
        scenario(mode="shadow", steps=steps, duration_ms=1100, expect=expect),
        RunConfig(thread_file=str(real_thread)),
        record_path=rec_file,
    )
    assert real.ok, real.failures

    emu_thread = tmp_path / "emulated.thread"
    emulated = run_scenario(
        scenario(mode="shadow", steps=steps, duration_ms=1100, expect=expect,
                 recording=str(rec_file)),
        RunConfig(thread_file=str(emu_thread)),
    )
    assert emulated.ok, emulated.failures
    elapsed = time.monotonic() - started

    real_bytes = frame_walk(real_thread, ThreadDirection.PT2DT)
    emu_bytes = frame_walk(emu_thread, ThreadDirection.PT2DT)
    assert len(real_bytes) == MIN_SCRIPTED_COMMANDS + 1
    assert emu_bytes == real_bytes  # zero diff, byte for byte
    assert elapsed <= INDISTINGUISHABILITY_BUDGET_S


# ---------------------------------------------------------------------------
# 2. The event processor agrees with a brute-force fold of the pure rule.
# ---------------------------------------------------------------------------

def test_c2_state_machine_matches_brute_force_oracle():
    started = time.monotonic()
    sequences = all_sequences(ORACLE_ALPHABET, ORACLE_MAX_LEN)
    assert len(sequences) >= 4 ** ORACLE_MAX_LEN
    for seq in sequences:
        want = ref_fold(seq)
        got = fold_commands(seq).current
        assert got.name == want, (seq, got, want)
    # absorption spot check the oracle must have covered
    assert fold_commands((-1, 50, 1)).current is State.OFF
    assert time.monotonic() - started <= ORACLE_BUDGET_S


# ---------------------------------------------------------------------------
# 3. A shadow deployment never sends anything down, tap-verified.
# ---------------------------------------------------------------------------

def test_c3_shadow_sends_nothing_over_a_thousand_events(tmp_path):
    measurements = [[10 + i, i] for i in range(SHADOW_EVENT_FLOOR)]
    sc = scenario(mode="shadow", duration_ms=1300,
                  steps=[{"at_ms": 0, "do": "command", "value": 50},
                         {"at_ms": 1150, "do": "command", "value": 0}],
                  measurements=measurements,
                  expect={"final_status": "STANDBY", "min_statuses": 3,
                          "uplink_frames": 0})
    result = run_scenario(sc, RunConfig(thread_file=str(tmp_path / "s.thread")))
    assert result.ok, result.failures
    assert result.pt2dt_frames == SHADOW_EVENT_FLOOR + 3
    assert result.dt2pt_frames == 0
    assert frame_walk(tmp_path / "s.thread", ThreadDirection.DT2PT) == []


# ---------------------------------------------------------------------------
# 4. An injected model change reaches the counterpart inside the bound.
# ---------------------------------------------------------------------------

def _await(rt, pred, tries=8000):
    for _ in range(tries):
        if pred():
            return
        rt.sleep_ms(1)
    raise AssertionError("condition never settled")


def _convergence_trial(clock, seed):
    rt = make_runtime(clock, seed)
    pt_bus, dt_bus = EventBus(rt), EventBus(rt)
    log = ThreadLog()
    up_plant, up_peer = connect_pair(rt, "pt-up", "dt-in", Protocol.TCP)
    down_peer, down_plant = connect_pair(rt, "dt-out", "pt-down", Protocol.TCP)
    twin = assemble_twin(
        rt, dt_bus,
        TappedEndpoint(up_peer, log, rt, read_dir=ThreadDirection.PT2DT),
        TappedEndpoint(down_peer, log, rt, write_dir=ThreadDirection.DT2PT),
        thread_log=log,
    )
    plant = assemble_plant(rt, pt_bus, SensorBacking.REAL,
                           outbound=up_plant, inbound=down_plant)
    out = {}

    def op():
        _await(rt, lambda: twin.keeper.last_observed is State.STANDBY)
        t0 = rt.now_ns()
        goal = twin.inject_model_change(command(50))
        assert goal is State.ACTIVE
        _await(rt, lambda: twin.converged
               and twin.keeper.last_observed is State.ACTIVE)
        out["elapsed"] = rt.now_ns() - t0
        plant.stop()
        rt.shutdown()

    rt.spawn(op, name="op")
    assert rt.run(timeout=10.0) == []
    assert rt.task_errors() == []
    return out["elapsed"]


def test_c4_twin_convergence_bound_holds_in_every_trial():
    half = CONVERGENCE_TRIALS // 2
    for seed in range(half):
        elapsed_ns = _convergence_trial(ClockMode.WALL, seed)
        assert elapsed_ns <= WALL_CONVERGENCE_BUDGET_MS * 1_000_000, seed
    for seed in range(half):
        rounds = _convergence_trial(ClockMode.LOCKSTEP, seed)
        assert rounds <= LOCKSTEP_CONVERGENCE_ROUNDS, seed


# ---------------------------------------------------------------------------
# 5. Every uplinked command passed the simulation gate; no reject leaks.
# ---------------------------------------------------------------------------

def test_c5_gate_soundness_under_plan_fuzz():
    rt = make_runtime(ClockMode.WALL, 0)
    bus = EventBus(rt)
    keeper = ModelKeeper()  # no observation yet: gate falls back to the plan
    gate = ExecuteGate(keeper)
    log = ThreadLog()
    plan_in = bus.producer(TOPIC_DT_PLAN)
    plan_sub = bus.subscribe(TOPIC_DT_PLAN, name="exec")
    exec_out = bus.producer(TOPIC_DT_EXECUTE)
    exec_sub = bus.subscribe(TOPIC_DT_EXECUTE, name="uplink")
    sent = []
    rt.spawn(lambda: execute_loop(rt, gate, plan_sub, exec_out,
                                  thread_log=log), name="exec")

    def uplink():
        while True:
            sent.append(exec_sub.consume())

    rt.spawn(uplink, name="uplink")

    rng = random.Random(505)
    plans = []
    for i in range(GATE_FUZZ_PLANS):
        observed = State(rng.randrange(3))
        value = rng.choice((-1, 0, 1, 50,
                            rng.randint(COMMAND_MIN, COMMAND_MAX)))
        plans.append(PlanResult(i, command(value), State(rng.randrange(3)),
                                observed))
    for plan in plans:
        plan_in.emit(plan)
    deadline = time.monotonic() + 10.0
    while gate.committed + gate.rejected < GATE_FUZZ_PLANS:
        assert time.monotonic() < deadline
        time.sleep(0.001)
    rt.shutdown()
    assert rt.run(timeout=5.0) == []
    assert rt.task_errors() == []

    passing = [p for p in plans
               if ref_step(p.observed.name, p.command.value) == p.goal.name]
    assert gate.committed == len(passing)
    assert gate.rejected == GATE_FUZZ_PLANS - len(passing)
    # the uplink saw exactly the passing commands, in order, nothing else
    assert [m.value for m in sent] == [p.command.value for p in passing]
    notes = [rec for rec in log.records if rec.kind == "NOTE"]
    assert len(notes) == gate.rejected
    assert log.frame_counts()[ThreadDirection.DT2PT] == 0


# ---------------------------------------------------------------------------
# 6. The record is complete and replays to the identical trajectory.
# ---------------------------------------------------------------------------

def test_c6_thread_completeness_and_replay(tmp_path):
    started = time.monotonic()
    thread = tmp_path / "mission.thread"
    run = run_scenario(scenario(expect={"final_status": "OFF",
                                        "model_state": "OFF",
                                        "uplink_frames": 3}),
                       RunConfig(thread_file=str(thread)))
    assert run.ok, run.failures

    # counts in the file equal the per-direction counts the run reported
    assert len(frame_walk(thread, ThreadDirection.PT2DT)) == run.pt2dt_frames
    assert len(frame_walk(thread, ThreadDirection.DT2PT)) == run.dt2pt_frames

    replay = replay_thread(thread, clock=ClockMode.LOCKSTEP)
    assert replay.ok, replay.failures
    assert replay.frames_fed == run.pt2dt_frames
    # the mission's command fold says where the walk must go
    fold = [fold_commands([50]).current.name,
            fold_commands([50, 0]).current.name,
            fold_commands([50, 0, -1]).current.name]
    assert replay.trajectory == fold == ["ACTIVE", "STANDBY", "OFF"]
    assert replay.final_state == "OFF"
    assert time.monotonic() - started <= THREAD_REPLAY_BUDGET_S


# ---------------------------------------------------------------------------
# 7. Lockstep runs are deterministic per seed, outcome-stable across seeds.
# ---------------------------------------------------------------------------

def test_c7_lockstep_determinism_across_seed_pairs():
    finals = set()
    for seed in range(DETERMINISM_SEED_PAIRS):
        first = run_scenario(scenario(seed=seed))
        second = run_scenario(scenario(seed=seed))
        assert first.ok and second.ok, (first.failures, second.failures)
        assert first.thread_sha256 == second.thread_sha256, seed
        finals.add(first.final_status)
    assert finals == {"OFF"}  # seeds may reorder ticks, never the outcome


# ---------------------------------------------------------------------------
# 8. Codec and framing round-trip every valid message unchanged.
# ---------------------------------------------------------------------------

def test_c8_codec_and_framing_round_trip():
    rng = random.Random(808)
    started = time.monotonic()
    for _ in range(CODEC_ROUND_TRIPS):
        pick = rng.randrange(3)
        if pick == 0:
            msg = command(rng.randint(COMMAND_MIN, COMMAND_MAX))
        elif pick == 1:
            msg = measurement(rng.randint(MEASUREMENT_MIN, MEASUREMENT_MAX))
        else:
            msg = status(rng.choice(STATUS_CODES))
        back = decode_message(unframe(frame_payload(encode_message(msg))))
        assert back == msg
    assert time.monotonic() - started <= CODEC_BUDGET_S


# ---------------------------------------------------------------------------
# 9. The bundled CI suite passes from a clean checkout, fast.
# ---------------------------------------------------------------------------

def test_c9_bundled_ci_suite_exits_zero():
    started = time.monotonic()
    proc = subprocess.run(
        [sys.executable, "-m", "twinproto", "ci-test"],
        capture_output=True, text=True, timeout=CI_SUITE_BUDGET_S,
    )
    elapsed = time.monotonic() - started
    assert proc.returncode == 0, proc.stdout + proc.stderr
    lines = [ln for ln in proc.stdout.splitlines() if ln.startswith("PASS")]
    assert len(lines) >= CI_SUITE_MIN_SCENARIOS
    # the three-command power-down mission is in there, both plant backings
    assert any("mission-twin-emulated" in ln for ln in lines)
    assert any("mission-pt" in ln for ln in lines)
    assert elapsed <= CI_SUITE_BUDGET_S
