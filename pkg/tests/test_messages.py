from __future__ import annotations

import json
import random

import pytest

from conftest import station_id
from nde4.identity import TypeId
from nde4.messages import (
    Ack,
    ErrorMessage,
    InspectionOrder,
    MalformedMessage,
    OrderState,
    ReportedValues,
    StatusEvent,
    TERMINAL_STATES,
    Verdict,
    decode_message,
    encode_message,
    is_legal_transition,
    validate_order,
    validate_report,
)


def make_order(**overrides) -> InspectionOrder:
    fields = dict(
        order_id="ORD-7",
        component_serial="SN-1",
        component_type=TypeId("acme", "pipe-weld"),
        procedure_id="proc-1",
        due="20200301T000000",
        priority=5,
        station=station_id(),
    )
    fields.update(overrides)
    return InspectionOrder(**fields)


def test_order_round_trip():
    order = make_order()
    assert decode_message(encode_message(order)) == order


def test_order_round_trip_without_station():
    order = make_order(station=None, priority=0)
    assert decode_message(encode_message(order)) == order


def test_status_round_trip():
    event = StatusEvent("ORD-7", OrderState.ASSIGNED, "20200101T000100")
    assert decode_message(encode_message(event)) == event


def test_report_round_trip_with_extras():
    rv = ReportedValues(
        order_id="ORD-7",
        verdict=Verdict.REJECT,
        indication_count=2,
        max_amplitude=61.5,
        archived_refs=("obj-1", "obj-2"),
        extras={"payloadRef": "obj-3"},
    )
    decoded = decode_message(encode_message(rv))
    assert decoded == rv
    assert decoded.extras == {"payloadRef": "obj-3"}


def test_ack_and_error_round_trip():
    assert decode_message(encode_message(Ack("order", "ORD-7"))) == Ack("order", "ORD-7")
    err = ErrorMessage("DuplicateOrder", "already submitted")
    assert decode_message(encode_message(err)) == err


def test_wire_field_names():
    doc = json.loads(encode_message(make_order()))
    assert doc["kind"] == "order"
    assert set(doc) >= {
        "kind", "orderId", "componentSerial", "componentType",
        "procedureId", "due", "priority", "station",
    }
    rv = ReportedValues("ORD-7", Verdict.ACCEPT, 0)
    doc = json.loads(encode_message(rv))
    assert doc["kind"] == "report"
    assert set(doc) >= {"orderId", "verdict", "indicationCount", "archivedRefs"}


def test_encoding_is_canonical():
    # compact separators, sorted keys: one byte form per message
    raw = encode_message(make_order())
    assert b" " not in raw
    doc = json.loads(raw)
    assert list(doc) == sorted(doc)


@pytest.mark.parametrize(
    "payload",
    [
        b"",
        b"not json",
        b"[]",
        b'{"kind":"mystery"}',
        b'{"orderId":"ORD-1"}',
        b'{"kind":"order","orderId":"ORD-1"}',  # missing fields
        b'{"kind":"status","orderId":"ORD-1","state":"LOST","at":"20200101T000000"}',
    ],
)
def test_decode_rejects_malformed(payload):
    with pytest.raises(MalformedMessage):
        decode_message(payload)


def test_state_order_is_strict():
    order = [
        OrderState.QUEUED,
        OrderState.ASSIGNED,
        OrderState.IN_PROGRESS,
        OrderState.DATA_ARCHIVED,
        OrderState.REPORTED,
    ]
    for i, current in enumerate(order):
        for j, nxt in enumerate(order):
            expected = j > i
            assert is_legal_transition(current, nxt) is expected


def test_rejected_reachable_from_any_nonterminal():
    for state in OrderState:
        if state in TERMINAL_STATES:
            assert not is_legal_transition(state, OrderState.REJECTED)
        else:
            assert is_legal_transition(state, OrderState.REJECTED)


def test_terminal_states_absorb():
    assert TERMINAL_STATES == {OrderState.REPORTED, OrderState.REJECTED}
    for terminal in TERMINAL_STATES:
        for state in OrderState:
            assert not is_legal_transition(terminal, state)


def test_transition_oracle_random():
    # oracle: rank table plus explicit terminal/reject rules
    rank = {
        OrderState.QUEUED: 0,
        OrderState.ASSIGNED: 1,
        OrderState.IN_PROGRESS: 2,
        OrderState.DATA_ARCHIVED: 3,
        OrderState.REPORTED: 4,
    }
    rng = random.Random(3003)
    states = list(OrderState)
    for _ in range(500):
        a, b = rng.choice(states), rng.choice(states)
        if a in TERMINAL_STATES:
            expected = False
        elif b == OrderState.REJECTED:
            expected = True
        else:
            expected = rank.get(b, -1) > rank.get(a, 99)
        assert is_legal_transition(a, b) is expected, (a, b)


def test_validate_order_problems():
    assert validate_order(make_order()) == ()
    assert validate_order(make_order(order_id="bad id"))
    assert validate_order(make_order(due="tomorrow"))
    assert validate_order(make_order(priority=-1))
    assert validate_order(make_order(component_serial=""))


def test_validate_report_problems():
    good = ReportedValues("ORD-7", Verdict.ACCEPT, 0, archived_refs=("obj-1",))
    assert validate_report(good) == ()
    reject_no_count = ReportedValues("ORD-7", Verdict.REJECT, 0)
    assert any("REJECT" in p for p in validate_report(reject_no_count))
    bad_ref = ReportedValues("ORD-7", Verdict.ACCEPT, 0, archived_refs=("bad ref",))
    assert validate_report(bad_ref)
    negative = ReportedValues("ORD-7", Verdict.ACCEPT, -1)
    assert validate_report(negative)
