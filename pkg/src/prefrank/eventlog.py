"""Durable, replayable event log: one JSON record per line.

The first line is a header carrying the experiment configuration so a log file
is self-contained; every following line is an event record with a gapless
sequence number starting at 1. Appends are flushed and fsynced before the
caller acknowledges anything to a client.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, TextIO

HEADER_FORMAT = "prefrank-log"
HEADER_VERSION = 1

EVENT_KINDS = ("Join", "Issue", "Submit", "Expire", "Determine", "Converge", "Exhaust")


class LogCorruptError(RuntimeError):
    """A log line that cannot be parsed or breaks the sequence audit."""


@dataclass(frozen=True)
class EventRecord:
    seq: int
    ts: float
    kind: str
    payload: dict


def dumps_header(config: dict) -> str:
    return json.dumps(
        {"format": HEADER_FORMAT, "version": HEADER_VERSION, "config": config},
        sort_keys=True,
        separators=(",", ":"),
    )


def dumps_record(record: EventRecord) -> str:
    return json.dumps(
        {"seq": record.seq, "ts": record.ts, "kind": record.kind, "payload": record.payload},
        sort_keys=True,
        separators=(",", ":"),
    )


class EventLogWriter:
    """Append-only writer with fsync-per-append durability."""

    def __init__(self, path: str | Path, config: dict, *, resume_seq: int = 0) -> None:
        self.path = Path(path)
        fresh = resume_seq == 0
        self._fh: TextIO = open(self.path, "a", encoding="utf-8")
        self._seq = resume_seq
        if fresh:
            if self.path.stat().st_size != 0:
                raise ValueError(f"refusing to start a fresh log over non-empty {self.path}")
            self._fh.write(dumps_header(config) + "\n")
            self._sync()

    def append(self, kind: str, payload: dict, ts: float) -> EventRecord:
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        self._seq += 1
        record = EventRecord(seq=self._seq, ts=ts, kind=kind, payload=payload)
        self._fh.write(dumps_record(record) + "\n")
        self._sync()
        return record

    def _sync(self) -> None:
        self._fh.flush()
        os.fsync(self._fh.fileno())

    @property
    def last_seq(self) -> int:
        return self._seq

    def close(self) -> None:
        self._fh.close()


def read_log(path: str | Path) -> tuple[dict, list[EventRecord]]:
    """Parse and audit a log file; returns (config, records).

    Raises LogCorruptError naming the offending line/seq on malformed JSON,
    a bad header, a sequence gap, or an unknown event kind.
    """
    path = Path(path)
    records: list[EventRecord] = []
    with open(path, encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line.strip():
            raise LogCorruptError(f"{path}: empty log file (missing header)")
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise LogCorruptError(f"{path}: line 1: unparseable header: {exc}") from exc
        if header.get("format") != HEADER_FORMAT:
            raise LogCorruptError(f"{path}: line 1: not a {HEADER_FORMAT} file")
        config = header.get("config")
        if not isinstance(config, dict):
            raise LogCorruptError(f"{path}: line 1: header carries no config")
        expected_seq = 1
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LogCorruptError(f"{path}: line {lineno}: unparseable record: {exc}") from exc
            try:
                record = EventRecord(
                    seq=obj["seq"], ts=obj["ts"], kind=obj["kind"], payload=obj["payload"]
                )
            except KeyError as exc:
                raise LogCorruptError(f"{path}: line {lineno}: missing field {exc}") from exc
            if record.seq != expected_seq:
                raise LogCorruptError(
                    f"{path}: line {lineno}: seq {record.seq}, expected {expected_seq}"
                )
            if record.kind not in EVENT_KINDS:
                raise LogCorruptError(
                    f"{path}: line {lineno}: unknown event kind {record.kind!r}"
                )
            records.append(record)
            expected_seq += 1
    return config, records


def audit_records(records: Iterable[EventRecord]) -> None:
    """Structural invariants: Submit after its Issue, one Determine per pair,
    at most one Converge. Raises LogCorruptError on violation."""
    issued: set[str] = set()
    determined: set[str] = set()
    converged = False
    for record in records:
        if record.kind == "Issue":
            issued.add(record.payload["request_id"])
        elif record.kind == "Submit":
            if record.payload["request_id"] not in issued:
                raise LogCorruptError(
                    f"seq {record.seq}: Submit for {record.payload['request_id']!r} "
                    "without a prior Issue"
                )
        elif record.kind == "Determine":
            pair = record.payload["pair"]
            if pair in determined:
                raise LogCorruptError(f"seq {record.seq}: second Determine for pair {pair!r}")
            determined.add(pair)
        elif record.kind == "Converge":
            if converged:
                raise LogCorruptError(f"seq {record.seq}: second Converge")
            converged = True
