"""Client SDK tests: both execution modes, pipelining, timeouts, failure paths."""

import random
import threading
import time

import pytest

from msfm import codec, gfec, protocol
from msfm.client import (
    Backpressure,
    Client,
    ClientClosed,
    ClientConfig,
    Clock,
    FunctionFailed,
    Instance,
    InstanceState,
    LoopbackTransport,
    TimedOut,
    TransportError,
    UnsupportedFunction,
)
from msfm.protocol import CompressParams, EcDecodeParams, EcEncodeParams, FunctionId
from msfm.server import Server, ServerConfig, default_registry


def in_process_client(**overrides) -> Client:
    return Client(ClientConfig(mode="in-process", **overrides))


def loopback_client(transport=None, clock=None, **overrides) -> Client:
    config = ClientConfig(mode="remote", **overrides)
    return Client(config, transport=transport or LoopbackTransport(), clock=clock)


class SteppingClock(Clock):
    """Virtual clock: wait() never sleeps, it just advances time."""

    def __init__(self):
        self.t = 0.0

    def now(self):
        return self.t

    def wait(self, event, timeout):
        if event.is_set():
            return True
        assert timeout is not None
        self.t += timeout
        return event.is_set()

    def sleep(self, seconds):
        self.t += seconds


# --- in-process mode --------------------------------------------------------

def test_local_compress_roundtrip():
    with in_process_client() as client:
        data = bytes(2000) + b"xyz"
        block = client.call(FunctionId.COMPRESS, CompressParams(1), data)
        assert codec.decompress(block) == data
        back = client.call(FunctionId.DECOMPRESS, CompressParams(1), block)
        assert back == data


def test_local_unknown_function():
    with in_process_client() as client:
        with pytest.raises(UnsupportedFunction):
            client.call(0xFFFF, b"")


def test_local_ec_end_to_end():
    rng = random.Random(11)
    data = rng.randbytes(4096)
    with in_process_client() as client:
        shards = client.call(FunctionId.EC_ENCODE, EcEncodeParams(4, 2), data)
        assert len(shards) == 6 * 1024
        # drop shards 1 and 4
        keep = [0, 2, 3, 5]
        payload = b"".join(
            shards[i * 1024 : (i + 1) * 1024] for i in keep
        )
        out = client.call(
            FunctionId.EC_DECODE, EcDecodeParams(4, 2, 1024, 0b101101), payload
        )
        assert out == data


def test_submit_after_close():
    client = in_process_client()
    client.close()
    with pytest.raises(ClientClosed):
        client.submit(FunctionId.COMPRESS, CompressParams(1), b"x")


def test_instance_states_in_process():
    with in_process_client() as client:
        instance = client.submit(FunctionId.COMPRESS, CompressParams(1), b"abc")
        assert instance.state is InstanceState.COMPLETED
        assert instance.correlation_id == 1
        second = client.submit(FunctionId.COMPRESS, CompressParams(1), b"def")
        assert second.correlation_id == 2  # monotonic per client


# --- remote mode over the loopback transport ---------------------------------

def test_remote_equals_in_process_byte_for_byte():
    data = bytes(4096)
    with in_process_client() as local, loopback_client() as remote:
        local_block = local.call(FunctionId.COMPRESS, CompressParams(1), data)
        remote_block = remote.call(FunctionId.COMPRESS, CompressParams(1), data)
        assert local_block == remote_block


def test_remote_and_local_agree_on_errors():
    garbage = b"\x07\x00\x00\x00\x00\x00"
    with in_process_client() as local, loopback_client() as remote:
        with pytest.raises(FunctionFailed) as local_err:
            local.call(FunctionId.DECOMPRESS, CompressParams(1), garbage)
        with pytest.raises(FunctionFailed) as remote_err:
            remote.call(FunctionId.DECOMPRESS, CompressParams(1), garbage)
        assert str(local_err.value) == str(remote_err.value)


def test_backpressure_when_queue_full():
    gate = threading.Event()
    transport = LoopbackTransport(send_gate=gate)
    client = loopback_client(transport=transport, max_queue_depth=1)
    first = client.submit(FunctionId.COMPRESS, CompressParams(1), b"a" * 100)
    with pytest.raises(Backpressure):
        client.submit(FunctionId.COMPRESS, CompressParams(1), b"b" * 100)
    gate.set()  # unblock the messenger, then the call completes normally
    assert codec.decompress(first.await_result(2000)) == b"a" * 100
    client.close()


def test_await_timeout_marks_instance_and_discards_late_response():
    release = threading.Event()
    transport = LoopbackTransport(response_gate=release)
    client = loopback_client(transport=transport)
    instance = client.submit(FunctionId.COMPRESS, CompressParams(1), b"late")
    with pytest.raises(TimedOut):
        instance.await_result(timeout_ms=60)
    assert instance.state is InstanceState.TIMED_OUT
    release.set()
    time.sleep(0.1)  # give the late response time to arrive
    assert instance.state is InstanceState.TIMED_OUT
    # The client remains usable afterwards.
    assert codec.decompress(
        client.call(FunctionId.COMPRESS, CompressParams(1), b"fresh")
    ) == b"fresh"
    client.close()


def test_timeout_soundness_with_virtual_clock():
    clock = SteppingClock()
    transport = LoopbackTransport(drop_all=True)
    client = loopback_client(transport=transport, clock=clock, timeout_ms=5000)
    instance = client.submit(FunctionId.COMPRESS, CompressParams(1), b"x")
    before = clock.now()
    with pytest.raises(TimedOut):
        instance.await_result()
    assert clock.now() - before == pytest.approx(5.0)
    client.close()


def test_await_twice_returns_cached_result():
    with loopback_client() as client:
        instance = client.submit(FunctionId.COMPRESS, CompressParams(1), b"zz")
        first = instance.await_result(2000)
        second = instance.await_result(2000)
        assert first == second

    transport = LoopbackTransport(drop_all=True)
    client = loopback_client(transport=transport)
    instance = client.submit(FunctionId.COMPRESS, CompressParams(1), b"x")
    for _ in range(2):
        with pytest.raises(TimedOut):
            instance.await_result(timeout_ms=40)
    client.close()


def test_transport_failure_fails_pending_instances():
    transport = LoopbackTransport(drop_all=True)
    client = loopback_client(transport=transport)
    instance = client.submit(FunctionId.COMPRESS, CompressParams(1), b"x")
    time.sleep(0.05)  # let the messenger send it
    transport.close()  # server goes away
    with pytest.raises(TransportError):
        instance.await_result(2000)
    with pytest.raises(ClientClosed):
        client.submit(FunctionId.COMPRESS, CompressParams(1), b"y")


def test_correlation_safety_under_reordering():
    transport = LoopbackTransport(jitter_ms=8, workers=4, seed=3)
    client = loopback_client(transport=transport, max_queue_depth=128)
    rng = random.Random(5)
    nonces = {}
    instances = {}
    for n in range(64):
        nonce = rng.randbytes(48)
        instance = client.submit(FunctionId.COMPRESS, CompressParams(1), nonce)
        nonces[n] = nonce
        instances[n] = instance
    for n, instance in instances.items():
        assert codec.decompress(instance.await_result(5000)) == nonces[n]
    client.close()


def test_concurrent_callers_pair_correctly():
    transport = LoopbackTransport(jitter_ms=4, workers=4, seed=9)
    client = loopback_client(transport=transport, max_queue_depth=128)
    errors = []

    def worker(seed):
        rng = random.Random(seed)
        try:
            for _ in range(8):
                nonce = rng.randbytes(32)
                block = client.call(FunctionId.COMPRESS, CompressParams(1), nonce)
                assert codec.decompress(block) == nonce
        except Exception as exc:  # noqa: BLE001 — collected for the assert below
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(s,)) for s in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert errors == []
    client.close()


# --- remote mode against the real TCP server ----------------------------------

def test_tcp_client_against_live_server():
    with Server(ServerConfig(workers=4), default_registry()) as server:
        config = ClientConfig(mode="remote", address=server.address)
        with Client(config) as client:
            data = random.Random(1).randbytes(10000)
            block = client.call(FunctionId.COMPRESS, CompressParams(2), data)
            assert codec.decompress(block) == data
            with in_process_client() as local:
                assert block == local.call(FunctionId.COMPRESS, CompressParams(2), data)


def test_tcp_connect_failure_raises_transport_error():
    config = ClientConfig(
        mode="remote",
        address=("127.0.0.1", 1),  # nothing listens on port 1
        connect_retries=1,
        backoff_base_ms=1,
    )
    with pytest.raises(TransportError):
        Client(config)


# --- config validation ---------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        ClientConfig(mode="telepathy")
    with pytest.raises(ValueError):
        ClientConfig(timeout_ms=0)
    with pytest.raises(ValueError):
        ClientConfig(max_queue_depth=0)
    with pytest.raises(ValueError):
        Client(ClientConfig(mode="remote"))  # no address, no transport
