"""
Wire plumbing shared by the CA and the attestation agent

- Endpoint parsing ("host:port" or "unix:/path")
- A blocking one-shot request helper for clients (send request, read to EOF)
- ServiceRunner: runs an asyncio service on a background thread so the
  synchronous parts of the system (enclave init, tests, the bench harness)
  can talk to it

Both service protocols are one request per connection: the server writes a
single response and closes, so responses need no outer length field.
"""

import asyncio
import ipaddress
import socket
import threading
from dataclasses import dataclass
from typing import Awaitable, Callable, Optional

from src.logger import get_logger

logger = get_logger(__name__)

MAX_RESPONSE_BYTES = 4 * 1024 * 1024
DEFAULT_TIMEOUT = 10.0
# how long a fixed-length reader waits for bytes past the end of the body
TRAILING_GRACE = 0.05


class TransportError(Exception):
    """The peer could not be reached or hung up mid-exchange."""


@dataclass(frozen=True)
class Endpoint:
    """A TCP host/port or a unix socket path."""
    host: str = "127.0.0.1"
    port: int = 0
    unix_path: Optional[str] = None

    @classmethod
    def parse(cls, text: str) -> "Endpoint":
        text = text.strip()
        if text.startswith("unix:"):
            path = text[len("unix:"):]
            if not path:
                raise ValueError("unix endpoint needs a path")
            return cls(host="", port=0, unix_path=path)
        host, sep, port_text = text.rpartition(":")
        if not sep or not host:
            raise ValueError(f"endpoint {text!r} is not host:port")
        host = host.strip("[]")
        try:
            port = int(port_text)
        except ValueError as e:
            raise ValueError(f"endpoint {text!r} has a non-numeric port") from e
        if not 0 <= port <= 65535:
            raise ValueError(f"port {port} out of range")
        return cls(host=host, port=port)

    @property
    def is_unix(self) -> bool:
        return self.unix_path is not None

    def is_local_only(self) -> bool:
        """Loopback addresses and unix sockets are the only local-only classes."""
        if self.is_unix:
            return True
        if self.host == "localhost":
            return True
        try:
            return ipaddress.ip_address(self.host).is_loopback
        except ValueError:
            return False

    def __str__(self) -> str:
        if self.is_unix:
            return f"unix:{self.unix_path}"
        if ":" in self.host:
            return f"[{self.host}]:{self.port}"
        return f"{self.host}:{self.port}"


def is_local_peer(peername) -> bool:
    """
    True for unix-socket peers (str/bytes peername) and loopback IP peers.

    An unknown peer (None) is not local.
    """
    if isinstance(peername, (str, bytes)):
        return True
    if peername is None:
        return False
    try:
        return ipaddress.ip_address(peername[0]).is_loopback
    except (ValueError, IndexError, TypeError):
        return False


def open_connection(endpoint: Endpoint, timeout: float = DEFAULT_TIMEOUT) -> socket.socket:
    try:
        if endpoint.is_unix:
            sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
            sock.settimeout(timeout)
            sock.connect(endpoint.unix_path)
            return sock
        return socket.create_connection((endpoint.host, endpoint.port), timeout=timeout)
    except OSError as e:
        raise TransportError(f"cannot reach {endpoint}: {e}") from e


def request(endpoint: Endpoint, payload: bytes, timeout: float = DEFAULT_TIMEOUT) -> bytes:
    """
    Send one request and read the whole response (the server closes after it).

    Raises:
        TransportError: connection refused, reset, or an empty response
    """
    sock = open_connection(endpoint, timeout)
    try:
        sock.sendall(payload)
        try:
            sock.shutdown(socket.SHUT_WR)
        except OSError:
            pass
        chunks = []
        total = 0
        while True:
            chunk = sock.recv(65536)
            if not chunk:
                break
            chunks.append(chunk)
            total += len(chunk)
            if total > MAX_RESPONSE_BYTES:
                raise TransportError("response too large")
    except OSError as e:
        raise TransportError(f"exchange with {endpoint} failed: {e}") from e
    finally:
        sock.close()

    response = b"".join(chunks)
    if not response:
        raise TransportError(f"{endpoint} closed the connection without a response")
    return response


async def read_exactly(reader: asyncio.StreamReader, n: int) -> bytes:
    """readexactly() that turns short reads into a ValueError for the handler."""
    try:
        return await reader.readexactly(n)
    except asyncio.IncompleteReadError as e:
        raise ValueError(f"expected {n} bytes, got {len(e.partial)}") from e


async def read_fixed(reader: asyncio.StreamReader, n: int, timeout: float = DEFAULT_TIMEOUT,
                     trailing_grace: float = TRAILING_GRACE) -> bytes:
    """
    Read an `n`-byte body without waiting for EOF.

    The result is shorter than `n` if the peer closed early, and longer if
    more bytes follow within `trailing_grace`; the caller rejects both.

    Raises:
        asyncio.TimeoutError: the body didn't arrive within `timeout`
    """
    try:
        body = await asyncio.wait_for(reader.readexactly(n), timeout)
    except asyncio.IncompleteReadError as e:
        return e.partial
    try:
        extra = await asyncio.wait_for(reader.read(1), trailing_grace)
    except asyncio.TimeoutError:
        extra = b""
    return body + extra


Handler = Callable[[asyncio.StreamReader, asyncio.StreamWriter], Awaitable[None]]


async def start_stream_server(endpoint: Endpoint, handler: Handler) -> asyncio.AbstractServer:
    if endpoint.is_unix:
        return await asyncio.start_unix_server(handler, path=endpoint.unix_path)
    return await asyncio.start_server(handler, host=endpoint.host, port=endpoint.port)


def bound_endpoint(server: asyncio.AbstractServer, requested: Endpoint) -> Endpoint:
    """The endpoint actually bound (resolves port 0 to the ephemeral port)."""
    if requested.is_unix:
        return requested
    sockname = server.sockets[0].getsockname()
    return Endpoint(host=requested.host, port=sockname[1])


class ServiceRunner:
    """
    Runs one asyncio stream service on a private event loop thread.

    Usage:
        runner = ServiceRunner("ca", endpoint, service.handle)
        bound = runner.start()
        ...
        runner.stop()
    """

    def __init__(self, name: str, endpoint: Endpoint, handler: Handler):
        self.name = name
        self.endpoint = endpoint
        self.handler = handler
        self.bound: Optional[Endpoint] = None
        self._loop: Optional[asyncio.AbstractEventLoop] = None
        self._server: Optional[asyncio.AbstractServer] = None
        self._thread: Optional[threading.Thread] = None

    def start(self, timeout: float = DEFAULT_TIMEOUT) -> Endpoint:
        self._loop = asyncio.new_event_loop()
        self._thread = threading.Thread(
            target=self._loop.run_forever, name=f"{self.name}-service", daemon=True
        )
        self._thread.start()

        future = asyncio.run_coroutine_threadsafe(
            start_stream_server(self.endpoint, self.handler), self._loop
        )
        try:
            self._server = future.result(timeout)
        except Exception:
            self._shutdown_loop()
            raise
        self.bound = bound_endpoint(self._server, self.endpoint)
        logger.info("%s service listening on %s", self.name, self.bound)
        return self.bound

    def stop(self) -> None:
        if self._loop is None:
            return

        async def _close():
            if self._server is not None:
                self._server.close()
                await self._server.wait_closed()

        try:
            asyncio.run_coroutine_threadsafe(_close(), self._loop).result(DEFAULT_TIMEOUT)
        except Exception as e:  # still tear the loop down
            logger.debug("%s service close raised %s", self.name, e)
        self._shutdown_loop()
        logger.info("%s service stopped", self.name)

    def _shutdown_loop(self) -> None:
        self._loop.call_soon_threadsafe(self._loop.stop)
        if self._thread is not None:
            self._thread.join(DEFAULT_TIMEOUT)
        self._loop.close()
        self._loop = None

    def __enter__(self) -> "ServiceRunner":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()
