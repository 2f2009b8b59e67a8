"""Fan-out of stream messages to subscribers with bounded buffering.

Slow subscribers lose the oldest unsent *frame* messages; alert and state
messages are never dropped. Delivery per subscriber preserves publish
order among the messages that survive.
"""

from __future__ import annotations

import threading
from collections import deque
from typing import Iterator

DEFAULT_BUFFER = 32

# Message kinds that must survive back-pressure.
PRIORITY_TYPES = ("alert", "state", "error", "end")


class Subscriber:
    def __init__(self, hub: "BroadcastHub", buffer_size: int):
        self._hub = hub
        self._buffer_size = buffer_size
        self._messages: deque[dict] = deque()
        self._frame_count = 0
        self._cond = threading.Condition()
        self._closed = False
        self.dropped = 0

    def _push(self, message: dict) -> None:
        with self._cond:
            if self._closed:
                return
            if message.get("type") == "frame":
                if self._frame_count >= self._buffer_size:
                    # Drop the oldest buffered frame message, never others.
                    for i, queued in enumerate(self._messages):
                        if queued.get("type") == "frame":
                            del self._messages[i]
                            self._frame_count -= 1
                            self.dropped += 1
                            break
                self._frame_count += 1
            self._messages.append(message)
            self._cond.notify_all()

    def get(self, timeout: float | None = None) -> dict | None:
        """Next message, or None on timeout / closed-and-drained."""
        with self._cond:
            if not self._messages:
                self._cond.wait_for(lambda: self._messages or self._closed, timeout)
            if not self._messages:
                return None
            message = self._messages.popleft()
            if message.get("type") == "frame":
                self._frame_count -= 1
            return message

    def drain(self) -> list[dict]:
        with self._cond:
            out = list(self._messages)
            self._messages.clear()
            self._frame_count = 0
            return out

    def messages(self, timeout: float | None = None) -> Iterator[dict]:
        """Yield messages until the hub closes and the buffer drains."""
        while True:
            message = self.get(timeout)
            if message is None:
                if self._closed and not self._messages:
                    return
                if timeout is not None:
                    return
                continue
            yield message

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    @property
    def closed(self) -> bool:
        return self._closed


class BroadcastHub:
    def __init__(self):
        self._subscribers: list[Subscriber] = []
        self._lock = threading.Lock()

    def subscribe(self, buffer_size: int = DEFAULT_BUFFER) -> Subscriber:
        sub = Subscriber(self, buffer_size)
        with self._lock:
            self._subscribers.append(sub)
        return sub

    def unsubscribe(self, sub: Subscriber) -> None:
        sub.close()
        with self._lock:
            if sub in self._subscribers:
                self._subscribers.remove(sub)

    def publish(self, message: dict) -> None:
        """Fire-and-forget: publishing never blocks on slow subscribers."""
        with self._lock:
            subs = list(self._subscribers)
        for sub in subs:
            sub._push(message)

    def close(self) -> None:
        with self._lock:
            subs = list(self._subscribers)
            self._subscribers.clear()
        for sub in subs:
            sub.close()

    @property
    def subscriber_count(self) -> int:
        with self._lock:
            return len(self._subscribers)
