"""State machine tests against the independent reference fold."""

from __future__ import annotations

import random

import pytest

from reference_fsm import all_sequences, ref_fold, ref_step
from twinproto.errors import KindRejected
from twinproto.messages import command, measurement, status
from twinproto.statemachine import (
    BUILTIN_MACHINE,
    State,
    TwinState,
    fold_commands,
    process_event,
    transition,
)


def test_initial_state_is_standby_with_period_zero():
    ts = TwinState()
    assert ts.current is State.STANDBY
    assert ts.period == 0


@pytest.mark.parametrize(
    "start,value,expect",
    [
        (State.STANDBY, 50, State.ACTIVE),
        (State.STANDBY, 1, State.ACTIVE),
        (State.STANDBY, 0, State.STANDBY),
        (State.STANDBY, -1, State.OFF),
        (State.ACTIVE, 0, State.STANDBY),
        (State.ACTIVE, 7, State.ACTIVE),
        (State.ACTIVE, -5, State.OFF),
        (State.OFF, 50, State.OFF),
        (State.OFF, 0, State.OFF),
        (State.OFF, -1, State.OFF),
    ],
)
def test_transition_table(start, value, expect):
    assert transition(start, value) is expect


def test_transition_matches_reference_on_random_values():
    rng = random.Random(42)
    for _ in range(2000):
        start = rng.choice(list(State))
        value = rng.randint(-(2 ** 15), 2 ** 15 - 1)
        assert transition(start, value).name == ref_step(start.name, value)


def test_exhaustive_fold_matches_reference():
    # every command sequence of length <= 6 over a sign-covering alphabet
    alphabet = (-1, 0, 1, 50)
    seqs = all_sequences(alphabet, 6)
    assert len(seqs) == sum(4 ** n for n in range(7))
    for seq in seqs:
        got = fold_commands(seq)
        assert got.current.name == ref_fold(seq)
        if seq:
            assert got.period == seq[-1]


def test_command_updates_period_even_when_absorbed_in_off():
    ts = fold_commands([-1])
    assert ts == TwinState(State.OFF, -1)
    ts = process_event(ts, command(50))
    assert ts == TwinState(State.OFF, 50)  # state stuck, period tracked


def test_status_sets_state_directly():
    ts = TwinState(State.STANDBY, 10)
    ts = process_event(ts, status(int(State.ACTIVE)))
    assert ts == TwinState(State.ACTIVE, 10)  # period untouched
    ts = process_event(ts, status(int(State.OFF)))
    assert ts.current is State.OFF


def test_status_observation_overrides_off_absorption():
    ts = fold_commands([-1])
    assert ts.current is State.OFF
    ts = process_event(ts, status(int(State.ACTIVE)))
    assert ts.current is State.ACTIVE


def test_measurement_is_rejected():
    with pytest.raises(KindRejected):
        process_event(TwinState(), measurement(123))


def test_mission_scenario_folds_to_off():
    assert fold_commands([50, 0, -1]).current is State.OFF


def test_builtin_machine_descriptor():
    assert BUILTIN_MACHINE.states == ("STANDBY", "ACTIVE", "OFF")
    assert BUILTIN_MACHINE.initial == "STANDBY"
    assert BUILTIN_MACHINE.terminal == ("OFF",)
    assert BUILTIN_MACHINE.codes == (("STANDBY", 0), ("ACTIVE", 1), ("OFF", 2))


def test_wire_codes_match_status_payload_range():
    from twinproto.messages import STATUS_CODES

    assert tuple(int(s) for s in State) == STATUS_CODES
