"""
Tests for the shared wire helpers: peer locality and fixed-length reads.
"""

import asyncio

import pytest

from src.wire import is_local_peer, read_fixed


@pytest.mark.unit
@pytest.mark.parametrize("peername, local", [
    ("", True),
    ("/run/agent.sock", True),
    (b"", True),
    (("127.0.0.1", 40000), True),
    (("::1", 40000, 0, 0), True),
    (("192.0.2.10", 40000), False),
    (("0.0.0.0", 40000), False),
    (None, False),
    ((), False),
    (("not-an-ip", 1), False),
])
def test_is_local_peer(peername, local):
    assert is_local_peer(peername) is local


@pytest.mark.asyncio
async def test_read_fixed_needs_no_eof():
    reader = asyncio.StreamReader()
    reader.feed_data(b"n" * 32)
    assert await read_fixed(reader, 32, timeout=1.0) == b"n" * 32


@pytest.mark.asyncio
async def test_read_fixed_reports_short_and_long_bodies():
    short = asyncio.StreamReader()
    short.feed_data(b"n" * 8)
    short.feed_eof()
    assert await read_fixed(short, 32, timeout=1.0) == b"n" * 8

    long = asyncio.StreamReader()
    long.feed_data(b"n" * 40)
    assert len(await read_fixed(long, 32, timeout=1.0)) == 33


@pytest.mark.asyncio
async def test_read_fixed_gives_up_on_a_stalled_peer():
    reader = asyncio.StreamReader()
    reader.feed_data(b"n" * 5)
    with pytest.raises(asyncio.TimeoutError):
        await read_fixed(reader, 32, timeout=0.05)
