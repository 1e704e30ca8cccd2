"""Wire framing shared by all three channels.

Layout, bit-exact: bytes 0-3 ASCII "NDE4"; byte 4 version = 0x01; byte 5
channel; bytes 6-9 payload length, little-endian u32; then the payload.

The ORDERS channel refuses payloads over 16 MiB (16,777,216 bytes,
boundary inclusive) at encode time AND decode time: bulk data belongs on
the archive channel, and silently chunking would defeat that routing.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

from .errors import Nde4Error

MAGIC = b"NDE4"
VERSION = 0x01
HEADER_SIZE = 10
ORDERS_PAYLOAD_LIMIT = 16 * 2**20  # inclusive


class Channel(IntEnum):
    ORDERS = 1
    ARCHIVE = 2
    SOVEREIGN = 3


class BadMagic(Nde4Error):
    """Frame does not start with the magic bytes."""


class BadVersion(Nde4Error):
    """Frame version byte is not the supported version."""


class UnknownChannel(Nde4Error):
    """Channel byte names no known channel."""


class LengthMismatch(Nde4Error):
    """Length field disagrees with the actual payload size."""


class OversizedPayload(Nde4Error):
    """ORDERS payload exceeds the channel cap; route via the archive channel."""


@dataclass(frozen=True, slots=True)
class Frame:
    channel: Channel
    payload: bytes


def encode_frame(channel: Channel, payload: bytes) -> bytes:
    channel = Channel(channel)
    if channel == Channel.ORDERS and len(payload) > ORDERS_PAYLOAD_LIMIT:
        raise OversizedPayload(
            f"ORDERS payload {len(payload)} bytes exceeds cap "
            f"{ORDERS_PAYLOAD_LIMIT}"
        )
    if len(payload) > 0xFFFFFFFF:
        raise OversizedPayload(f"payload {len(payload)} bytes exceeds u32 length")
    return MAGIC + struct.pack("<BBI", VERSION, channel, len(payload)) + payload


def decode_frame(data: bytes) -> Frame:
    if len(data) < HEADER_SIZE:
        raise LengthMismatch(f"frame shorter than header: {len(data)} bytes")
    if data[:4] != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, got {data[:4]!r}")
    version, channel_byte, length = struct.unpack("<BBI", data[4:HEADER_SIZE])
    if version != VERSION:
        raise BadVersion(f"expected version {VERSION}, got {version}")
    try:
        channel = Channel(channel_byte)
    except ValueError:
        raise UnknownChannel(f"channel byte {channel_byte:#x}") from None
    if len(data) - HEADER_SIZE != length:
        raise LengthMismatch(
            f"length field {length}, actual payload {len(data) - HEADER_SIZE}"
        )
    if channel == Channel.ORDERS and length > ORDERS_PAYLOAD_LIMIT:
        raise OversizedPayload(
            f"ORDERS payload {length} bytes exceeds cap {ORDERS_PAYLOAD_LIMIT}"
        )
    return Frame(channel, data[HEADER_SIZE:])
