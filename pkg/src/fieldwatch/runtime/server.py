"""Control and streaming listener.

One TCP port serves three kinds of clients, distinguished by their first
bytes:

- raw clients exchange newline-delimited JSON (command in, stream out),
- browsers upgrade to a WebSocket (RFC 6455) carrying the same JSON
  messages one per text frame,
- plain HTTP GETs receive the static console bundle when one is
  configured.

Every connected client is a hub subscriber: frame messages may drop under
back-pressure, alert/state messages never do.
"""

from __future__ import annotations

import base64
import hashlib
import json
import socket
import struct
import threading
from pathlib import Path

from .hub import Subscriber
from .session import InvalidTransition, PipelineService

_WS_MAGIC = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".map": "application/json",
    ".png": "image/png",
    ".svg": "image/svg+xml",
}

COMMANDS = ("start", "stop", "record_on", "record_off")


class ControlServer:
    def __init__(
        self,
        service: PipelineService,
        host: str = "127.0.0.1",
        port: int = 0,
        static_root: Path | str | None = None,
    ):
        self.service = service
        self.static_root = Path(static_root) if static_root else None
        self._sock = socket.create_server((host, port))
        self.address = self._sock.getsockname()
        self._accept_thread: threading.Thread | None = None
        self._closing = threading.Event()
        self._conn_lock = threading.Lock()
        self._connections: set[socket.socket] = set()

    def start(self) -> None:
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()

    def _accept_loop(self) -> None:
        while not self._closing.is_set():
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            with self._conn_lock:
                self._connections.add(conn)
            threading.Thread(target=self._serve_connection, args=(conn,), daemon=True).start()

    # -- connection handling -------------------------------------------------

    def _serve_connection(self, conn: socket.socket) -> None:
        try:
            # Sniff the protocol without consuming: HTTP clients talk first;
            # a silent peer is a raw stream subscriber.
            conn.settimeout(0.5)
            try:
                first = conn.recv(4096, socket.MSG_PEEK)
            except TimeoutError:
                first = b""
            except OSError:
                return
            if first.startswith((b"GET ", b"POST ", b"HEAD ")):
                conn.settimeout(10.0)
                self._serve_http(conn, conn.recv(4096))
            else:
                self._serve_raw(conn, b"")
        except (OSError, ValueError):
            pass  # client went away; nothing to clean beyond the socket
        finally:
            with self._conn_lock:
                self._connections.discard(conn)
            try:
                conn.close()
            except OSError:
                pass

    def _handle_command(self, doc: dict) -> dict | None:
        cmd = doc.get("cmd")
        if cmd not in COMMANDS:
            return {"type": "error", "code": "unknown_command", "detail": str(cmd)}
        try:
            self.service.handle_control(cmd)
        except InvalidTransition as e:
            return {"type": "error", "code": "invalid_transition", "detail": str(e)}
        except Exception as e:
            return {"type": "error", "code": "command_failed", "detail": str(e)}
        return None  # success is answered by the broadcast state message

    # -- raw newline-delimited JSON -------------------------------------------

    def _serve_raw(self, conn: socket.socket, first: bytes) -> None:
        conn.settimeout(None)
        sub = self.service.hub.subscribe()
        stop = threading.Event()

        def reader():
            buffer = first
            try:
                while not stop.is_set():
                    while b"\n" in buffer:
                        line, buffer = buffer.split(b"\n", 1)
                        if line.strip():
                            self._dispatch_line(line, sub)
                    chunk = conn.recv(4096)
                    if not chunk:
                        break
                    buffer += chunk
            except OSError:
                pass
            finally:
                stop.set()
                sub.close()

        t = threading.Thread(target=reader, daemon=True)
        t.start()
        try:
            # greet with current state so late subscribers can sync
            conn.sendall((json.dumps(self.service.state_message(), sort_keys=True) + "\n").encode())
            while not stop.is_set():
                message = sub.get(timeout=0.25)
                if message is None:
                    if sub.closed:
                        break
                    continue
                conn.sendall((json.dumps(message, sort_keys=True) + "\n").encode())
        except OSError:
            pass
        finally:
            stop.set()
            self.service.hub.unsubscribe(sub)

    def _dispatch_line(self, line: bytes, sub: Subscriber) -> None:
        try:
            doc = json.loads(line)
        except json.JSONDecodeError:
            sub._push({"type": "error", "code": "bad_json", "detail": line.decode(errors="replace")})
            return
        reply = self._handle_command(doc)
        if reply is not None:
            sub._push(reply)

    # -- http / websocket ------------------------------------------------------

    def _serve_http(self, conn: socket.socket, first: bytes) -> None:
        data = first
        while b"\r\n\r\n" not in data and len(data) < 65536:
            chunk = conn.recv(4096)
            if not chunk:
                return
            data += chunk
        head = data.split(b"\r\n\r\n", 1)[0].decode("latin-1")
        lines = head.split("\r\n")
        method, path, _ = lines[0].split(" ", 2)
        headers = {}
        for line in lines[1:]:
            if ":" in line:
                k, v = line.split(":", 1)
                headers[k.strip().lower()] = v.strip()

        if headers.get("upgrade", "").lower() == "websocket":
            self._serve_websocket(conn, headers)
        elif method in ("GET", "HEAD"):
            self._serve_static(conn, method, path)
        else:
            conn.sendall(b"HTTP/1.1 405 Method Not Allowed\r\nContent-Length: 0\r\n\r\n")

    def _serve_static(self, conn: socket.socket, method: str, path: str) -> None:
        body = b"not found"
        status = "404 Not Found"
        ctype = "text/plain; charset=utf-8"
        if self.static_root:
            rel = path.split("?", 1)[0].lstrip("/") or "index.html"
            target = (self.static_root / rel).resolve()
            if target.is_dir():
                target = target / "index.html"
            inside = self.static_root.resolve() in target.parents or target == self.static_root.resolve()
            if inside and target.is_file():
                body = target.read_bytes()
                status = "200 OK"
                ctype = _CONTENT_TYPES.get(target.suffix.lower(), "application/octet-stream")
        head = (
            f"HTTP/1.1 {status}\r\nContent-Type: {ctype}\r\n"
            f"Content-Length: {len(body)}\r\nConnection: close\r\n\r\n"
        ).encode()
        conn.sendall(head if method == "HEAD" else head + body)

    def _serve_websocket(self, conn: socket.socket, headers: dict) -> None:
        key = headers.get("sec-websocket-key")
        if not key:
            conn.sendall(b"HTTP/1.1 400 Bad Request\r\nContent-Length: 0\r\n\r\n")
            return
        accept = base64.b64encode(hashlib.sha1((key + _WS_MAGIC).encode()).digest()).decode()
        conn.sendall(
            (
                "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\n"
                f"Connection: Upgrade\r\nSec-WebSocket-Accept: {accept}\r\n\r\n"
            ).encode()
        )
        conn.settimeout(None)
        sub = self.service.hub.subscribe()
        stop = threading.Event()
        send_lock = threading.Lock()

        def send_text(text: str) -> None:
            with send_lock:
                conn.sendall(_ws_encode_text(text))

        def reader():
            try:
                while not stop.is_set():
                    opcode, payload = _ws_read_frame(conn)
                    if opcode is None or opcode == 0x8:  # closed
                        break
                    if opcode == 0x9:  # ping -> pong
                        with send_lock:
                            conn.sendall(_ws_encode(0xA, payload))
                        continue
                    if opcode == 0x1 and payload.strip():
                        self._dispatch_line(payload, sub)
            except OSError:
                pass
            finally:
                stop.set()
                sub.close()

        t = threading.Thread(target=reader, daemon=True)
        t.start()
        try:
            send_text(json.dumps(self.service.state_message(), sort_keys=True))
            while not stop.is_set():
                message = sub.get(timeout=0.25)
                if message is None:
                    if sub.closed:
                        break
                    continue
                send_text(json.dumps(message, sort_keys=True))
        except OSError:
            pass
        finally:
            stop.set()
            self.service.hub.unsubscribe(sub)

    def close(self) -> None:
        self._closing.set()
        try:
            self._sock.close()
        except OSError:
            pass
        with self._conn_lock:
            for conn in list(self._connections):
                try:
                    conn.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass
                try:
                    conn.close()
                except OSError:
                    pass
            self._connections.clear()


# -- websocket framing ----------------------------------------------------


def _ws_encode(opcode: int, payload: bytes) -> bytes:
    header = bytes([0x80 | opcode])
    n = len(payload)
    if n < 126:
        header += bytes([n])
    elif n < 1 << 16:
        header += bytes([126]) + struct.pack(">H", n)
    else:
        header += bytes([127]) + struct.pack(">Q", n)
    return header + payload


def _ws_encode_text(text: str) -> bytes:
    return _ws_encode(0x1, text.encode("utf-8"))


def _recv_exact(conn: socket.socket, n: int) -> bytes | None:
    data = b""
    while len(data) < n:
        chunk = conn.recv(n - len(data))
        if not chunk:
            return None
        data += chunk
    return data


def _ws_read_frame(conn: socket.socket) -> tuple[int | None, bytes]:
    head = _recv_exact(conn, 2)
    if head is None:
        return None, b""
    opcode = head[0] & 0x0F
    masked = head[1] & 0x80
    length = head[1] & 0x7F
    if length == 126:
        ext = _recv_exact(conn, 2)
        if ext is None:
            return None, b""
        length = struct.unpack(">H", ext)[0]
    elif length == 127:
        ext = _recv_exact(conn, 8)
        if ext is None:
            return None, b""
        length = struct.unpack(">Q", ext)[0]
    mask = b"\x00\x00\x00\x00"
    if masked:
        mask = _recv_exact(conn, 4)
        if mask is None:
            return None, b""
    payload = _recv_exact(conn, length) if length else b""
    if payload is None:
        return None, b""
    if masked:
        payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
    return opcode, payload
