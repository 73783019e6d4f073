"""Run directory layout and manifest.

Each run directory holds ``config.snapshot`` (the resolved YAML config),
``manifest.json``, and the ``logs/``, ``reports/`` and ``checkpoints/``
subdirectories. The run id is the SHA-256 of the snapshot without its
``run_dir`` entry, so identical configs map to identical ids wherever they
run. JSON reports carry it in a ``run_id`` field and the manifest lists the
SHA-256 of every artifact.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .config import RunBase, snapshot

MANIFEST_NAME = "manifest.json"
SUBDIRS = ("logs", "reports", "checkpoints")


def tool_version() -> str:
    from .. import __version__

    return __version__


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def jsonable(value):
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None if math.isnan(value) else ("inf" if value > 0 else "-inf")
    return value


class RunDirectory:
    def __init__(self, config: RunBase, root: str | Path | None = None):
        self.config = config
        self.root = Path(root if root is not None else config.run_dir)
        self.snapshot_text = snapshot(config)
        keyed = config.model_copy(update={"run_dir": ""})
        self.run_id = hashlib.sha256(snapshot(keyed).encode()).hexdigest()
        self.started = _now()
        self.artifacts: list[Path] = []
        self._log_handler: logging.Handler | None = None

    def create(self) -> "RunDirectory":
        self.root.mkdir(parents=True, exist_ok=True)
        for sub in SUBDIRS:
            (self.root / sub).mkdir(exist_ok=True)
        (self.root / "config.snapshot").write_text(self.snapshot_text, encoding="utf-8")
        self._log_handler = logging.FileHandler(self.root / "logs" / "run.log", mode="w", encoding="utf-8")
        self._log_handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        logging.getLogger("qxc").addHandler(self._log_handler)
        logging.getLogger("qxc").setLevel(logging.INFO)
        return self

    def path(self, sub: str, name: str) -> Path:
        target = self.root / sub / name
        self.artifacts.append(target)
        return target

    def write_json(self, sub: str, name: str, payload: dict) -> Path:
        target = self.path(sub, name)
        doc = {"run_id": self.run_id, **jsonable(payload)}
        target.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
        return target

    def write_csv(self, sub: str, name: str, rows: list[dict], columns: list[str]) -> Path:
        target = self.path(sub, name)
        with open(target, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        return target

    def finish(self, status: str = "ok", error: dict | None = None) -> Path:
        manifest = {
            "run_id": self.run_id,
            "command": self.config.command,
            "status": status,
            "seed": self.config.seed,
            "tool_version": tool_version(),
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "started": self.started,
            "finished": _now(),
            "config_snapshot": "config.snapshot",
            "artifacts": {
                str(p.relative_to(self.root)): _sha256(p) for p in sorted(set(self.artifacts)) if p.exists()
            },
        }
        if error is not None:
            manifest["error"] = error
        target = self.root / MANIFEST_NAME
        target.write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
        if self._log_handler is not None:
            logging.getLogger("qxc").removeHandler(self._log_handler)
            self._log_handler.close()
        return target
