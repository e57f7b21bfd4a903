"""Plant state machine and twin state.

The device (and its digital model) is a three-state machine over signed
integer command values:

    value > 0   -> ACTIVE    (sampling at `value` ms)
    value == 0  -> STANDBY
    value < 0   -> OFF       (power down)

OFF is terminal: once entered, no command leaves it. The commanded period is
tracked alongside the state and updates on every command, even when the state
is stuck in OFF.

Events are processed in two modes. COMMAND events run the transition function
above. STATUS events carry an externally observed state and set it directly,
which is the one way out of OFF (the observation wins over the model's own
absorption). MEASUREMENT events carry sensor data, not state, and are
rejected.

State codes on the wire are the IntEnum values: STANDBY=0, ACTIVE=1, OFF=2.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import IntEnum

from .errors import KindRejected
from .messages import Message, MessageKind


class State(IntEnum):
    STANDBY = 0
    ACTIVE = 1
    OFF = 2


TERMINAL_STATES = frozenset({State.OFF})


def transition(state: State, value: int) -> State:
    """One COMMAND transition. Total on non-terminal states; OFF absorbs."""
    if state in TERMINAL_STATES:
        return State.OFF
    if value > 0:
        return State.ACTIVE
    if value == 0:
        return State.STANDBY
    return State.OFF


@dataclass(frozen=True)
class TwinState:
    """Immutable snapshot of the modeled device: state plus commanded period."""

    current: State = State.STANDBY
    period: int = 0


def process_event(ts: TwinState, msg: Message) -> TwinState:
    """Apply one message to a twin state, returning the successor state.

    COMMAND: transition on the signed value; period always becomes the value.
    STATUS: set the state to the observed code directly (may leave OFF).
    MEASUREMENT: raises KindRejected.
    """
    if msg.kind is MessageKind.COMMAND:
        return TwinState(transition(ts.current, msg.value), msg.value)
    if msg.kind is MessageKind.STATUS:
        return replace(ts, current=State(msg.value))
    raise KindRejected(f"state machine does not process {msg.kind.name}")


def fold_commands(values, start: TwinState | None = None) -> TwinState:
    """Run a whole command sequence from `start` (default: fresh STANDBY)."""
    ts = start if start is not None else TwinState()
    for v in values:
        ts = process_event(ts, Message(MessageKind.COMMAND, v))
    return ts


@dataclass(frozen=True)
class StateMachineDef:
    """Declarative descriptor of the machine, for manifests and validation."""

    states: tuple = tuple(s.name for s in State)
    initial: str = State.STANDBY.name
    terminal: tuple = tuple(s.name for s in TERMINAL_STATES)
    codes: tuple = field(default_factory=lambda: tuple(
        (s.name, int(s)) for s in State
    ))


BUILTIN_MACHINE = StateMachineDef()
