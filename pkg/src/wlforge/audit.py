"""File-access audit trail for raster I/O.

The pipeline tags regions of execution (e.g. classifier training) and every
raster load records the path under the currently active tag. Tests use this
to prove that training stages never touch the hidden ground-truth masks.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field


@dataclass
class FileAudit:
    enabled: bool = False
    events: list[tuple[str, str]] = field(default_factory=list)
    _tag: str = ""
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def record(self, path: str) -> None:
        if self.enabled:
            with self._lock:
                self.events.append((self._tag, str(path)))

    def set_tag(self, tag: str) -> None:
        with self._lock:
            self._tag = tag

    def reset(self) -> None:
        with self._lock:
            self.events.clear()
            self._tag = ""


# Process-wide audit. Cheap no-op unless a test (or operator) enables it.
audit = FileAudit()
