"""Shared helper: a minimal 3/4 SMF for meter-rejection tests."""

import struct


def waltz_bytes() -> bytes:
    events = (
        bytes([0x00, 0xFF, 0x58, 0x04, 3, 2, 24, 8])   # 3/4 time signature
        + bytes([0x00, 0x90, 0x3C, 0x40])
        + b"\x83\x60" + bytes([0x80, 0x3C, 0x40])
        + b"\x00\xff\x2f\x00"
    )
    return (
        b"MThd" + struct.pack(">IHHH", 6, 0, 1, 480)
        + b"MTrk" + struct.pack(">I", len(events)) + events
    )
