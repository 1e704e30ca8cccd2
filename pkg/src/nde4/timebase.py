"""Deterministic time base: logical ticks and the fixed DATETIME text form.

All timestamps in the system are logical. A tick is an integer number of
seconds relative to a fixed epoch; the wire/text representation is always
the 15-character form "YYYYMMDDThhmmss" (UTC, no offset). Wall clocks are
never read.
"""

from __future__ import annotations

import datetime as _dt

from .errors import Nde4Error

DATETIME_LENGTH = 15
DATETIME_FORMAT = "%Y%m%dT%H%M%S"

# tick 0 of every run
EPOCH = _dt.datetime(2020, 1, 1, 0, 0, 0)
EPOCH_TEXT = "20200101T000000"


class BadDatetime(Nde4Error):
    """Text does not conform to the fixed YYYYMMDDThhmmss layout."""


def format_tick(tick: int) -> str:
    """Render a logical tick as the canonical 15-char DATETIME text."""
    moment = EPOCH + _dt.timedelta(seconds=tick)
    return moment.strftime(DATETIME_FORMAT)


def parse_datetime(text: str) -> int:
    """Parse canonical DATETIME text back to a logical tick.

    Raises BadDatetime on any layout or calendar violation.
    """
    if len(text) != DATETIME_LENGTH:
        raise BadDatetime(
            f"datetime must be {DATETIME_LENGTH} chars, got {len(text)}: {text!r}"
        )
    try:
        moment = _dt.datetime.strptime(text, DATETIME_FORMAT)
    except ValueError as exc:
        raise BadDatetime(f"invalid datetime {text!r}: {exc}") from exc
    if moment < EPOCH:
        raise BadDatetime(f"datetime precedes the epoch: {text!r}")
    return int((moment - EPOCH).total_seconds())


def is_valid_datetime(text: str) -> bool:
    try:
        parse_datetime(text)
    except BadDatetime:
        return False
    return True


class LogicalClock:
    """Monotone integer clock shared by every component of one run."""

    def __init__(self, start: int = 0):
        self._tick = start

    @property
    def tick(self) -> int:
        return self._tick

    def now_text(self) -> str:
        return format_tick(self._tick)

    def advance(self, seconds: int = 1) -> int:
        if seconds < 0:
            raise ValueError("clock cannot run backwards")
        self._tick += seconds
        return self._tick

    def advance_to(self, tick: int) -> int:
        if tick < self._tick:
            raise ValueError(f"clock cannot run backwards: {tick} < {self._tick}")
        self._tick = tick
        return self._tick
