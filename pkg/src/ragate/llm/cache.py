"""On-disk cache of generation records keyed by prompt, decode config and model."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
from pathlib import Path
from typing import Any

from ..types import dumps


def cache_key(kind: str, prompt: str, cfg: dict[str, Any], model_id: str) -> str:
    payload = dumps({"kind": kind, "prompt": prompt, "cfg": cfg, "model": model_id})
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class GenerationCache:
    """Entries live at ``<root>/<first 2 hex of key>/<key>.json``.

    Writes go through a temp file and ``os.replace`` so readers never see a
    partial entry; a per-key lock serializes concurrent writers.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def _lock(self, key: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(key, threading.Lock())

    def get_raw(self, key: str) -> bytes | None:
        try:
            return self.path(key).read_bytes()
        except FileNotFoundError:
            return None

    def get(self, key: str) -> dict[str, Any] | None:
        raw = self.get_raw(key)
        return None if raw is None else json.loads(raw)

    def put(self, key: str, record: dict[str, Any]) -> None:
        path = self.path(key)
        data = dumps(record).encode("utf-8")
        with self._lock(key):
            if path.exists():
                return
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)

    def __contains__(self, key: str) -> bool:
        return self.path(key).exists()

    def keys(self) -> list[str]:
        if not self.root.exists():
            return []
        return sorted(p.stem for p in self.root.glob("*/*.json"))
