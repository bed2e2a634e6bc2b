"""Template sources: an offline canned corpus and an HTTP client for an external generator."""
from __future__ import annotations

import json
import os
import urllib.error
import urllib.request
from collections import deque
from pathlib import Path
from typing import Protocol

from ..errors import CellkitError, ValidationError
from .records import TemplateRecord, load_templates
from .traits import TraitSample


class TemplateSource(Protocol):
    def propose(self, task: str, traits: TraitSample) -> TemplateRecord | None:
        """A fresh candidate, or ``None`` when the source is exhausted."""

    def rewrite(self, task: str, record: TemplateRecord, traits: TraitSample) -> TemplateRecord | None:
        """A reworded instruction for ``record``; ``None`` when no rewrite is available."""


class CannedTemplateSource:
    """Serves records in file order; rewrites come from an optional queue.

    Without a rewrite queue a rewrite request returns the record unchanged,
    so near-duplicates stay near-duplicates and end up discarded.
    """

    def __init__(self, records, rewrites=None):
        self._queue = {}
        for r in records:
            self._queue.setdefault(r.task, deque()).append(r)
        self._rewrites = deque(rewrites or ())

    @classmethod
    def from_jsonl(cls, path, rewrites_path=None) -> "CannedTemplateSource":
        rew = load_templates(rewrites_path) if rewrites_path else None
        return cls(load_templates(path), rew)

    def propose(self, task, traits):
        q = self._queue.get(task)
        if not q:
            return None
        r = q.popleft()
        return TemplateRecord(r.task, r.instruction, r.response, traits.to_dict(),
                              r.has_options)

    def rewrite(self, task, record, traits):
        if not self._rewrites:
            return record
        new = self._rewrites.popleft()
        return TemplateRecord(record.task, new.instruction, record.response, record.traits, record.has_options)


class TemplateSourceError(CellkitError):
    exit_code = 2


class HttpTemplateSource:
    """JSON-over-HTTP client. Every exchange is appended to ``log_path`` as one JSON line.

    Request body: ``{"action": "propose"|"rewrite", "task", "traits",
    "has_options", "instruction"?}``; the reply must carry ``instruction``
    and ``response`` (or ``{"exhausted": true}``).
    """

    def __init__(self, endpoint: str, token_env: str = "CELLKIT_TEMPLATE_TOKEN", timeout: float = 60.0,
                 log_path=None):
        if not endpoint.startswith(("http://", "https://")):
            raise ValidationError(f"endpoint must be an http(s) URL, got {endpoint!r}")
        self.endpoint = endpoint
        self.token_env = token_env
        self.timeout = timeout
        self.log_path = Path(log_path) if log_path else None

    def _call(self, payload: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        req = urllib.request.Request(self.endpoint, json.dumps(payload).encode("utf-8"), headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                body = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, TimeoutError, json.JSONDecodeError) as exc:
            self._log(payload, {"error": str(exc)})
            raise TemplateSourceError(f"template source request failed: {exc}") from exc
        self._log(payload, body)
        return body

    def _log(self, request: dict, response: dict) -> None:
        if self.log_path is None:
            return
        with open(self.log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"request": request, "response": response}, sort_keys=True) + "\n")

    def _record(self, task, body, traits, has_options):
        if body.get("exhausted"):
            return None
        try:
            return TemplateRecord(task, body["instruction"], body["response"], traits.to_dict(), has_options)
        except KeyError as exc:
            raise TemplateSourceError(f"template source reply lacks {exc}") from None

    def propose(self, task, traits):
        payload = {"action": "propose", "task": task, "traits": traits.to_dict(), "has_options": traits.with_options}
        return self._record(task, self._call(payload), traits, traits.with_options)

    def rewrite(self, task, record, traits):
        payload = {"action": "rewrite", "task": task, "traits": traits.to_dict(),
                   "has_options": record.has_options, "instruction": record.instruction}
        body = self._call(payload)
        if body.get("exhausted"):
            return None
        return TemplateRecord(task, body["instruction"], record.response, record.traits, record.has_options)
