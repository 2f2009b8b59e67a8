import base64
import hashlib
import json
import socket
import struct
import time

import pytest

from fieldwatch.runtime.server import ControlServer, _ws_encode_text
from fieldwatch.runtime.session import PipelineService, RunConfig


def make_service(frames=2000, fps=200):
    doc = {
        "source": {
            "type": "synthetic",
            "width": 64,
            "height": 48,
            "frames": frames,
            "fps": fps,
            "objects": [{"class_id": 1, "start": [0.5, 0.5], "size": [0.2, 0.2]}],
        },
        "backend": {"backend": "oracle", "class_names": ["car", "tank"], "oracle": {"seed": 3}},
        "queue_capacity": 100000,
    }
    return PipelineService(RunConfig.from_dict(doc))


class LineClient:
    def __init__(self, address):
        self.sock = socket.create_connection(address, timeout=5)
        self.buffer = b""

    def send(self, doc):
        self.sock.sendall((json.dumps(doc) + "\n").encode())

    def recv(self, timeout=5.0):
        self.sock.settimeout(timeout)
        while b"\n" not in self.buffer:
            chunk = self.sock.recv(4096)
            if not chunk:
                return None
            self.buffer += chunk
        line, self.buffer = self.buffer.split(b"\n", 1)
        return json.loads(line)

    def recv_until(self, predicate, timeout=5.0):
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            message = self.recv(timeout=max(deadline - time.monotonic(), 0.1))
            if message is None:
                return None
            if predicate(message):
                return message
        return None

    def close(self):
        self.sock.close()


@pytest.fixture
def server():
    service = make_service()
    srv = ControlServer(service, "127.0.0.1", 0)
    srv.start()
    yield srv, service
    service.close()
    srv.close()


class TestRawProtocol:
    def test_greeting_and_lifecycle(self, server):
        srv, service = server
        client = LineClient(srv.address)
        greeting = client.recv()
        assert greeting["type"] == "state"
        assert greeting["status"] == "idle"

        client.send({"cmd": "start"})
        state = client.recv_until(lambda m: m["type"] == "state" and m["status"] == "running")
        assert state is not None
        assert state["class_names"] == ["car", "tank"]

        frame = client.recv_until(lambda m: m["type"] == "frame")
        assert frame is not None
        assert set(frame) >= {
            "frame_id", "detections", "counts_visible", "counts_total",
            "fps", "resolution", "status", "recording",
        }
        assert frame["resolution"] == [64, 48]

        client.send({"cmd": "stop"})
        state = client.recv_until(lambda m: m["type"] == "state" and m["status"] == "stopped")
        assert state is not None
        client.close()

    def test_invalid_transition_reported(self, server):
        srv, service = server
        client = LineClient(srv.address)
        client.recv()  # greeting
        client.send({"cmd": "record_on"})
        reply = client.recv_until(lambda m: m["type"] == "error")
        assert reply["code"] == "invalid_transition"
        client.close()

    def test_unknown_command(self, server):
        srv, service = server
        client = LineClient(srv.address)
        client.recv()
        client.send({"cmd": "selfdestruct"})
        reply = client.recv_until(lambda m: m["type"] == "error")
        assert reply["code"] == "unknown_command"
        client.close()

    def test_frame_ids_monotone_per_subscriber(self, server):
        srv, service = server
        client = LineClient(srv.address)
        client.recv()
        client.send({"cmd": "start"})
        seen = []
        deadline = time.monotonic() + 3
        while time.monotonic() < deadline and len(seen) < 50:
            m = client.recv(timeout=2)
            if m and m["type"] == "frame":
                seen.append(m["frame_id"])
        client.send({"cmd": "stop"})
        assert len(seen) >= 10
        assert seen == sorted(seen)
        client.close()


def ws_handshake(address, path="/ws"):
    sock = socket.create_connection(address, timeout=5)
    key = base64.b64encode(b"0123456789abcdef").decode()
    request = (
        f"GET {path} HTTP/1.1\r\nHost: localhost\r\nUpgrade: websocket\r\n"
        f"Connection: Upgrade\r\nSec-WebSocket-Key: {key}\r\nSec-WebSocket-Version: 13\r\n\r\n"
    )
    sock.sendall(request.encode())
    response = b""
    while b"\r\n\r\n" not in response:
        response += sock.recv(4096)
    head, rest = response.split(b"\r\n\r\n", 1)
    assert b"101" in head.split(b"\r\n")[0]
    expected = base64.b64encode(
        hashlib.sha1((key + "258EAFA5-E914-47DA-95CA-C5AB0DC85B11").encode()).digest()
    ).decode()
    assert f"Sec-WebSocket-Accept: {expected}".encode() in head
    return sock, rest


def ws_send_text(sock, text):
    payload = text.encode()
    mask = b"\x11\x22\x33\x44"
    header = bytes([0x81])
    n = len(payload)
    if n < 126:
        header += bytes([0x80 | n])
    else:
        header += bytes([0x80 | 126]) + struct.pack(">H", n)
    masked = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
    sock.sendall(header + mask + masked)


def ws_read_message(sock, buffer):
    while True:
        while len(buffer) < 2:
            buffer += sock.recv(4096)
        length = buffer[1] & 0x7F
        offset = 2
        if length == 126:
            while len(buffer) < 4:
                buffer += sock.recv(4096)
            length = struct.unpack(">H", buffer[2:4])[0]
            offset = 4
        elif length == 127:
            while len(buffer) < 10:
                buffer += sock.recv(4096)
            length = struct.unpack(">Q", buffer[2:10])[0]
            offset = 10
        while len(buffer) < offset + length:
            buffer += sock.recv(4096)
        payload = buffer[offset : offset + length]
        buffer = buffer[offset + length :]
        return json.loads(payload), buffer


class TestWebSocket:
    def test_handshake_and_stream(self, server):
        srv, service = server
        sock, buffer = ws_handshake(srv.address)
        sock.settimeout(5)
        greeting, buffer = ws_read_message(sock, buffer)
        assert greeting["type"] == "state"

        ws_send_text(sock, json.dumps({"cmd": "start"}))
        got_frame = None
        for _ in range(100):
            message, buffer = ws_read_message(sock, buffer)
            if message["type"] == "frame":
                got_frame = message
                break
        assert got_frame is not None
        assert got_frame["counts_total"].keys() <= {"car", "tank"}
        ws_send_text(sock, json.dumps({"cmd": "stop"}))
        sock.close()


class TestStaticServing:
    def test_serves_console_bundle(self, tmp_path):
        (tmp_path / "index.html").write_text("<html>console</html>")
        service = make_service(frames=10)
        srv = ControlServer(service, "127.0.0.1", 0, static_root=tmp_path)
        srv.start()
        try:
            sock = socket.create_connection(srv.address, timeout=5)
            sock.sendall(b"GET / HTTP/1.1\r\nHost: x\r\n\r\n")
            data = b""
            sock.settimeout(5)
            while b"console" not in data:
                chunk = sock.recv(4096)
                if not chunk:
                    break
                data += chunk
            assert b"200 OK" in data and b"console" in data
            sock.close()

            sock = socket.create_connection(srv.address, timeout=5)
            sock.sendall(b"GET /../etc/passwd HTTP/1.1\r\nHost: x\r\n\r\n")
            data = sock.recv(65536)
            assert b"404" in data
            sock.close()
        finally:
            service.close()
            srv.close()
