"""Message transports: an in-process channel for deterministic tests and
an optional UDP pair exposing the same exchange interface."""

from __future__ import annotations

import socket
import threading


class InProcessLink:
    """Synchronous channel calling a handler(payload, source) -> payload."""

    def __init__(self, handler):
        self.handler = handler

    def exchange(self, payload: bytes, source: str) -> bytes:
        return self.handler(payload, source)


class UdpClient:
    """Blocking UDP exchange against (host, port); the OS supplies the real source."""

    def __init__(self, host: str, port: int, timeout: float = 2.0):
        self.remote = (host, port)
        self.timeout = timeout

    def exchange(self, payload: bytes, source: str = "") -> bytes:
        with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as sock:
            sock.settimeout(self.timeout)
            sock.sendto(payload, self.remote)
            data, _ = sock.recvfrom(65535)
            return data


class UdpServer:
    """Threaded UDP front end for a handler(payload, source) -> payload.

    Packets whose handling raises are dropped; the handler must provide its
    own serialization if it mutates shared state.
    """

    def __init__(self, handler, host: str = "127.0.0.1", port: int = 0):
        self.handler = handler
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind((host, port))
        self._sock.settimeout(0.2)
        self._thread = None
        self._running = False

    @property
    def address(self) -> tuple[str, int]:
        return self._sock.getsockname()[:2]

    def start(self) -> "UdpServer":
        self._running = True
        self._thread = threading.Thread(target=self._serve, daemon=True)
        self._thread.start()
        return self

    def _serve(self) -> None:
        while self._running:
            try:
                data, peer = self._sock.recvfrom(65535)
            except socket.timeout:
                continue
            except OSError:
                break
            try:
                reply = self.handler(data, peer[0])
            except Exception:
                continue
            try:
                self._sock.sendto(reply, peer)
            except OSError:
                break

    def stop(self) -> None:
        self._running = False
        if self._thread is not None:
            self._thread.join(timeout=2.0)
        self._sock.close()

    def __enter__(self) -> "UdpServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
