"""Client SDK: per-call Instances, a bounded submit queue, a messenger.

The caller-facing half of the offload path:

    caller ──submit──▶ [queue] ──messenger──▶ transport ──▶ server
                         │                                    │
    caller ◀─await── Instance ◀───reader──── transport ◀──────┘

`submit` returns an Instance immediately; the messenger thread assigns
monotonically increasing correlation ids, serializes request frames
onto the single connection (pipelined — many requests may be in flight
at once), and a reader thread pairs each response to its Instance by
correlation id, regardless of arrival order.

Two execution modes share one API.  Remote mode sends frames through a
Transport (TCP, or the in-memory loopback below).  In-process mode —
the monolithic baseline — skips the wire entirely and hands the very
same request frame to the very same `server.dispatch` used remotely,
so any behavioral difference between the modes is a bug, not a mode
property.

Both the clock and the transport are injectable, which keeps timeout
logic and network behavior testable without real sleeping or sockets.

Failure policy: the submit queue is bounded — a full queue raises
Backpressure instead of blocking.  A response that arrives after its
Instance timed out is discarded.  A transport failure fails every
in-flight Instance with TransportError; the client does not reconnect
mid-stream (initial connection attempts honor the retry/backoff
settings, failover is out of scope).
"""

from __future__ import annotations

import itertools
import queue
import random
import socket
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

from . import protocol
from .protocol import Frame, FrameDecoder, Status
from .server import Handler, default_registry, dispatch


class ClientError(Exception):
    """Base class for client-side errors."""


class Backpressure(ClientError):
    """Submit queue is full; retry after draining some requests."""


class ClientClosed(ClientError):
    """The client was closed (or its connection failed) before the call."""


class TimedOut(ClientError):
    """No response within the deadline; the request may still execute."""


class TransportError(ClientError):
    """The connection failed while requests were outstanding."""


class RemoteError(ClientError):
    """The server answered with a nonzero status."""

    def __init__(self, status: int, detail: str):
        super().__init__(detail or f"status {status}")
        self.status = status
        self.detail = detail


class UnsupportedFunction(RemoteError):
    pass


class RemoteMalformedParams(RemoteError):
    pass


class FunctionFailed(RemoteError):
    pass


class ServerBusy(RemoteError):
    pass


_STATUS_ERRORS: dict[int, type[RemoteError]] = {
    Status.UNSUPPORTED_FUNCTION: UnsupportedFunction,
    Status.MALFORMED_PARAMS: RemoteMalformedParams,
    Status.FUNCTION_FAILURE: FunctionFailed,
    Status.SERVER_BUSY: ServerBusy,
}


def error_for_status(status: int, detail: str) -> RemoteError:
    return _STATUS_ERRORS.get(status, RemoteError)(status, detail)


class Clock:
    """Time source used for timeouts; swap out for deterministic tests."""

    def now(self) -> float:
        return time.monotonic()

    def wait(self, event: threading.Event, timeout: float | None) -> bool:
        """Block until the event is set or timeout seconds pass."""
        return event.wait(timeout)

    def sleep(self, seconds: float) -> None:
        time.sleep(seconds)


class Transport:
    """Duplex byte stream to a server.  All methods may block."""

    def send(self, data: bytes) -> None:
        raise NotImplementedError

    def recv(self) -> bytes:
        """Next chunk of response bytes; b'' once the peer is gone."""
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError


class TcpTransport(Transport):
    def __init__(self, host: str, port: int, connect_timeout: float = 5.0):
        self._sock = socket.create_connection((host, port), timeout=connect_timeout)
        self._sock.settimeout(None)

    def send(self, data: bytes) -> None:
        self._sock.sendall(data)

    def recv(self) -> bytes:
        try:
            return self._sock.recv(65536)
        except OSError:
            return b""

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


class LoopbackTransport(Transport):
    """In-memory server: frames in, dispatched responses out.

    Knobs for tests: `latency_ms` delays each response; `jitter_ms`
    adds a seeded random extra delay (with several workers this
    reorders responses); `send_gate`, when given, blocks send() until
    the event is set; `response_gate` holds all responses until set;
    `drop_all` swallows requests entirely.
    """

    def __init__(
        self,
        registry: dict[int, Handler] | None = None,
        *,
        latency_ms: float = 0.0,
        jitter_ms: float = 0.0,
        seed: int = 0,
        workers: int = 2,
        send_gate: threading.Event | None = None,
        response_gate: threading.Event | None = None,
        drop_all: bool = False,
    ):
        self._registry = registry if registry is not None else default_registry()
        self._latency = latency_ms / 1000.0
        self._jitter = jitter_ms / 1000.0
        self._rng = random.Random(seed)
        self._send_gate = send_gate
        self._response_gate = response_gate
        self._drop_all = drop_all
        self._decoder = FrameDecoder()
        self._out: queue.SimpleQueue[bytes] = queue.SimpleQueue()
        self._pool = ThreadPoolExecutor(max_workers=workers)
        self._closed = False

    def send(self, data: bytes) -> None:
        if self._send_gate is not None:
            self._send_gate.wait()
        if self._closed:
            raise OSError("transport closed")
        self._decoder.feed(data)
        while (frame := self._decoder.next_frame()) is not None:
            if not self._drop_all:
                delay = self._latency + self._rng.uniform(0, self._jitter)
                self._pool.submit(self._serve, frame, delay)

    def _serve(self, frame: Frame, delay: float) -> None:
        if delay:
            time.sleep(delay)
        if self._response_gate is not None:
            self._response_gate.wait()
        response = dispatch(frame, self._registry)
        if not self._closed:
            self._out.put(protocol.encode_frame(response))

    def recv(self) -> bytes:
        return self._out.get()

    def close(self) -> None:
        self._closed = True
        self._pool.shutdown(wait=False)
        self._out.put(b"")


MODE_REMOTE = "remote"
MODE_IN_PROCESS = "in-process"


@dataclass
class ClientConfig:
    """Execution mode and limits.  timeout_ms > 0, max_queue_depth >= 1."""

    mode: str = MODE_IN_PROCESS
    address: tuple[str, int] | None = None
    timeout_ms: float = 5000.0
    max_queue_depth: int = 64
    connect_retries: int = 2
    backoff_base_ms: float = 50.0

    def __post_init__(self) -> None:
        if self.mode not in (MODE_REMOTE, MODE_IN_PROCESS):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be > 0")
        if self.max_queue_depth < 1:
            raise ValueError("max_queue_depth must be >= 1")


class InstanceState(Enum):
    QUEUED = "queued"
    SENT = "sent"
    COMPLETED = "completed"
    FAILED = "failed"
    TIMED_OUT = "timed-out"


_TERMINAL = {InstanceState.COMPLETED, InstanceState.FAILED, InstanceState.TIMED_OUT}


class Instance:
    """Handle for one submitted call.

    Created queued; the messenger moves it to sent; exactly one of
    completed/failed/timed-out ends it, and the result slot (payload or
    error) is written at most once.  await_result blocks only its
    caller and is idempotent once terminal.
    """

    def __init__(self, client: "Client", function_id: int):
        self.function_id = function_id
        self.correlation_id: int | None = None
        self.submitted_at = client._clock.now()
        self._client = client
        self._lock = threading.Lock()
        self._state = InstanceState.QUEUED
        self._done = threading.Event()
        self._payload: bytes | None = None
        self._error: ClientError | None = None

    @property
    def state(self) -> InstanceState:
        return self._state

    def __repr__(self) -> str:
        return (
            f"<Instance fn={self.function_id} cid={self.correlation_id} "
            f"{self._state.value}>"
        )

    def _mark_sent(self, correlation_id: int) -> None:
        with self._lock:
            if self._state is InstanceState.QUEUED:
                self.correlation_id = correlation_id
                self._state = InstanceState.SENT

    def _finish(
        self,
        state: InstanceState,
        payload: bytes | None = None,
        error: ClientError | None = None,
    ) -> bool:
        """Move to a terminal state; False if one was already reached."""
        with self._lock:
            if self._state in _TERMINAL:
                return False
            self._state = state
            self._payload = payload
            self._error = error
        self._done.set()
        return True

    def await_result(self, timeout_ms: float | None = None) -> bytes:
        """Block until terminal; return the payload or raise the error.

        Args:
            timeout_ms: Deadline for this wait; defaults to the
                client's configured request timeout.

        Raises:
            TimedOut: Deadline passed first.  The instance is marked
                timed-out and any later response is discarded.
            RemoteError: The server answered with a nonzero status
                (subclass picked by the status code).
            TransportError, ClientClosed: The connection or client
                went away before a response arrived.
        """
        if timeout_ms is None:
            timeout_ms = self._client.config.timeout_ms
        if not self._done.is_set():
            if not self._client._clock.wait(self._done, timeout_ms / 1000.0):
                if self._finish(InstanceState.TIMED_OUT, error=TimedOut(
                    f"no response within {timeout_ms:g} ms"
                )):
                    self._client._forget(self)
        if self._error is not None:
            raise self._error
        return self._payload if self._payload is not None else b""


class Client:
    """One connection's worth of pipelined function calls.

    Remote mode spins up two daemon threads (messenger out, reader in);
    in-process mode has none and executes during submit.  Thread-safe:
    submit/call may run from many threads at once.
    """

    def __init__(
        self,
        config: ClientConfig,
        *,
        transport: Transport | None = None,
        clock: Clock | None = None,
        registry: dict[int, Handler] | None = None,
    ):
        self.config = config
        self._clock = clock or Clock()
        self._ids = itertools.count(1)
        self._slots = threading.Semaphore(config.max_queue_depth)
        self._closed = threading.Event()
        self._pending: dict[int, Instance] = {}
        self._pending_lock = threading.Lock()
        self._transport: Transport | None = None
        self._sendq: queue.SimpleQueue[tuple[Instance, Frame] | None] = (
            queue.SimpleQueue()
        )
        self._messenger: threading.Thread | None = None
        self._reader: threading.Thread | None = None

        if config.mode == MODE_IN_PROCESS:
            self._registry = registry if registry is not None else default_registry()
            return
        self._registry = {}
        self._transport = transport or self._connect()
        self._messenger = threading.Thread(
            target=self._send_loop, name="msfm-messenger", daemon=True
        )
        self._reader = threading.Thread(
            target=self._recv_loop, name="msfm-reader", daemon=True
        )
        self._messenger.start()
        self._reader.start()

    def _connect(self) -> Transport:
        if self.config.address is None:
            raise ValueError("remote mode needs an address or an explicit transport")
        host, port = self.config.address
        last: Exception | None = None
        for attempt in range(self.config.connect_retries + 1):
            try:
                return TcpTransport(host, port)
            except OSError as exc:
                last = exc
                backoff = self.config.backoff_base_ms * (2**attempt) / 1000.0
                self._clock.sleep(backoff)
        raise TransportError(f"cannot connect to {host}:{port}: {last}")

    # --- public API ---------------------------------------------------------

    def submit(
        self,
        function_id: int,
        params: protocol.FunctionParams | bytes,
        payload: bytes = b"",
    ) -> Instance:
        """Queue one call; returns its Instance without waiting.

        Raises:
            Backpressure: max_queue_depth requests are already queued
                or being sent.
            ClientClosed: close() was called or the connection died.
        """
        if self._closed.is_set():
            raise ClientClosed("client is closed")
        if not self._slots.acquire(blocking=False):
            raise Backpressure(
                f"submit queue full ({self.config.max_queue_depth} deep)"
            )
        try:
            instance = Instance(self, function_id)
            frame = protocol.request(function_id, 0, params, payload)
        except BaseException:
            self._slots.release()
            raise
        if self.config.mode == MODE_IN_PROCESS:
            try:
                self._execute_local(instance, frame)
            finally:
                self._slots.release()
        else:
            self._sendq.put((instance, frame))
        return instance

    def await_result(
        self, instance: Instance, timeout_ms: float | None = None
    ) -> bytes:
        return instance.await_result(timeout_ms)

    def call(
        self,
        function_id: int,
        params: protocol.FunctionParams | bytes,
        payload: bytes = b"",
        timeout_ms: float | None = None,
    ) -> bytes:
        """submit + await_result in one step."""
        return self.submit(function_id, params, payload).await_result(timeout_ms)

    def close(self) -> None:
        """Stop the client; all non-terminal instances fail ClientClosed."""
        if self._closed.is_set():
            return
        self._closed.set()
        if self.config.mode == MODE_REMOTE:
            # Drain before planting the stop sentinel so the drain
            # cannot eat the sentinel out from under the messenger.
            self._fail_all(ClientClosed("client closed"))
            self._sendq.put(None)
            assert self._transport is not None
            self._transport.close()
            for thread in (self._messenger, self._reader):
                if thread is not None and thread is not threading.current_thread():
                    thread.join(timeout=5)

    def __enter__(self) -> "Client":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()

    # --- in-process path ------------------------------------------------------

    def _execute_local(self, instance: Instance, frame: Frame) -> None:
        correlation_id = next(self._ids)
        frame = protocol.Frame(
            kind=frame.kind,
            status=frame.status,
            function_id=frame.function_id,
            correlation_id=correlation_id,
            params=frame.params,
            payload=frame.payload,
        )
        instance._mark_sent(correlation_id)
        self._deliver(instance, dispatch(frame, self._registry))

    # --- remote path -----------------------------------------------------------

    def _send_loop(self) -> None:
        assert self._transport is not None
        while True:
            item = self._sendq.get()
            if item is None:
                return
            instance, frame = item
            correlation_id = next(self._ids)
            frame = protocol.Frame(
                kind=frame.kind,
                status=frame.status,
                function_id=frame.function_id,
                correlation_id=correlation_id,
                params=frame.params,
                payload=frame.payload,
            )
            with self._pending_lock:
                self._pending[correlation_id] = instance
            instance._mark_sent(correlation_id)
            try:
                self._transport.send(protocol.encode_frame(frame))
            except OSError as exc:
                self._transport_failed(f"send failed: {exc}")
                return
            finally:
                # The queue slot is held through serialization so that
                # max_queue_depth bounds client-side buffering.
                self._slots.release()

    def _recv_loop(self) -> None:
        assert self._transport is not None
        decoder = FrameDecoder()
        while not self._closed.is_set():
            data = self._transport.recv()
            if not data:
                if not self._closed.is_set():
                    self._transport_failed("connection closed by server")
                return
            try:
                decoder.feed(data)
                while (frame := decoder.next_frame()) is not None:
                    self._dispatch_response(frame)
            except protocol.ProtocolError as exc:
                self._transport_failed(f"undecodable response stream: {exc}")
                return

    def _dispatch_response(self, frame: Frame) -> None:
        with self._pending_lock:
            instance = self._pending.pop(frame.correlation_id, None)
        if instance is None:
            return  # duplicate, or response for a timed-out instance
        self._deliver(instance, frame)

    def _deliver(self, instance: Instance, frame: Frame) -> None:
        if frame.status == Status.OK:
            instance._finish(InstanceState.COMPLETED, payload=frame.payload)
        else:
            detail = frame.params.decode("utf-8", errors="replace")
            instance._finish(
                InstanceState.FAILED,
                error=error_for_status(frame.status, detail),
            )

    def _transport_failed(self, detail: str) -> None:
        self._closed.set()
        self._fail_all(TransportError(detail))

    def _fail_all(self, error: ClientError) -> None:
        while True:
            try:
                item = self._sendq.get_nowait()
            except queue.Empty:
                break
            if item is not None:
                item[0]._finish(InstanceState.FAILED, error=error)
                self._slots.release()
        with self._pending_lock:
            pending = list(self._pending.values())
            self._pending.clear()
        for instance in pending:
            instance._finish(InstanceState.FAILED, error=error)

    def _forget(self, instance: Instance) -> None:
        if instance.correlation_id is None:
            return
        with self._pending_lock:
            self._pending.pop(instance.correlation_id, None)
