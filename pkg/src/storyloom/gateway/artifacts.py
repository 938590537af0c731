"""Artifact store: resolves image references to files under a run directory.

Scripted and demo backends produce structured stand-in documents (JSON)
instead of pixels; the HTTP backend stores whatever bytes the remote
service returns. Either way a page only ever holds an artifact id, and
the store maps ids to relative paths inside the run directory.
"""

from __future__ import annotations

import json
from pathlib import Path
from urllib.parse import quote

from ..errors import RefNotFound

ARTIFACT_DIR = "artifacts"


def _filename(artifact_id: str, suffix: str) -> str:
    # quote() is injective, so distinct ids never collide on disk
    return quote(artifact_id, safe="abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789._-") + suffix


class ArtifactStore:
    """Maps artifact ids to files. With root=None everything stays in
    memory (unit tests); with a root directory artifacts persist under
    ``<root>/artifacts/``."""

    def __init__(self, root: Path | str | None = None):
        self.root = Path(root) if root is not None else None
        self._memory: dict[str, dict] = {}
        self._paths: dict[str, str] = {}
        if self.root is not None:
            (self.root / ARTIFACT_DIR).mkdir(parents=True, exist_ok=True)
            for path in sorted((self.root / ARTIFACT_DIR).iterdir()):
                if path.suffix == ".json":
                    doc = json.loads(path.read_text())
                    art_id = doc.get("artifact", path.stem)
                    self._paths[art_id] = f"{ARTIFACT_DIR}/{path.name}"
                else:
                    self._paths[path.stem] = f"{ARTIFACT_DIR}/{path.name}"

    def put_document(self, artifact_id: str, doc: dict) -> str:
        """Store a structured stand-in image document. Idempotent for the
        same id; returns the relative path."""
        record = {"artifact": artifact_id, **doc}
        rel = f"{ARTIFACT_DIR}/{_filename(artifact_id, '.json')}"
        if self.root is not None:
            target = self.root / rel
            if not target.exists():
                target.write_text(json.dumps(record, indent=2, sort_keys=True))
        self._memory[artifact_id] = record
        self._paths[artifact_id] = rel
        return rel

    def put_bytes(self, artifact_id: str, data: bytes, suffix: str = ".png") -> str:
        rel = f"{ARTIFACT_DIR}/{_filename(artifact_id, suffix)}"
        if self.root is not None:
            (self.root / rel).write_bytes(data)
        else:
            self._memory[artifact_id] = {"artifact": artifact_id, "bytes": len(data)}
        self._paths[artifact_id] = rel
        return rel

    def register_external(self, artifact_id: str, path: Path) -> str:
        """Adopt a user-supplied file (e.g. an inspiration image) by copying
        it into the store."""
        data = Path(path).read_bytes()
        return self.put_bytes(artifact_id, data, suffix=Path(path).suffix or ".bin")

    def exists(self, artifact_id: str) -> bool:
        return artifact_id in self._paths

    def require(self, artifact_id: str) -> None:
        if not self.exists(artifact_id):
            raise RefNotFound(artifact_id)

    def relative_path(self, artifact_id: str) -> str:
        self.require(artifact_id)
        return self._paths[artifact_id]

    def absolute_path(self, artifact_id: str) -> Path:
        if self.root is None:
            raise RefNotFound(artifact_id)
        return self.root / self.relative_path(artifact_id)

    def document(self, artifact_id: str) -> dict:
        """The structured stand-in document for a scripted artifact."""
        self.require(artifact_id)
        if artifact_id in self._memory:
            return self._memory[artifact_id]
        path = self.absolute_path(artifact_id)
        if path.suffix != ".json":
            raise RefNotFound(artifact_id)
        doc = json.loads(path.read_text())
        self._memory[artifact_id] = doc
        return doc

    def ids(self) -> tuple[str, ...]:
        return tuple(sorted(self._paths))
