"""Typed protocol messages and their JSON form.

Payloads hold only JSON-native values so that a message serialized over a
stream and one passed in-process compare equal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Any


class MsgType(str, Enum):
    QUBIT_BATCH = "QubitBatch"
    MEASURED_QUBIT = "MeasuredQubit"
    REVEAL_REQUEST = "RevealRequest"
    REVEAL = "Reveal"
    LIST_ANNOUNCEMENT = "ListAnnouncement"
    PAIR_LIST = "PairList"
    PAIR_SUBSET = "PairSubset"
    OT_INDEX = "OTIndex"
    ABORT = "Abort"


REQUIRED_FIELDS: dict[MsgType, tuple[str, ...]] = {
    MsgType.QUBIT_BATCH: ("n", "states", "index"),
    MsgType.MEASURED_QUBIT: ("labels",),
    MsgType.REVEAL_REQUEST: ("step", "items"),
    MsgType.REVEAL: ("step", "request", "runs", "settings", "outcomes"),
    MsgType.LIST_ANNOUNCEMENT: ("runs",),
    MsgType.PAIR_LIST: ("pairs",),
    MsgType.PAIR_SUBSET: ("r_prime", "excluded", "settings"),
    MsgType.OT_INDEX: ("pair",),
    MsgType.ABORT: ("step", "reason"),
}

SENDERS = ("alice", "bob")


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class Message:
    seq: int
    session_id: str
    sender: str
    type: MsgType
    payload: dict[str, Any]

    def __post_init__(self) -> None:
        object.__setattr__(self, "type", MsgType(self.type))
        self.validate()

    def validate(self) -> None:
        if self.sender not in SENDERS:
            raise SchemaError(f"unknown sender {self.sender!r}")
        if not isinstance(self.seq, int) or self.seq < 0:
            raise SchemaError("seq must be a non-negative integer")
        if not isinstance(self.payload, dict):
            raise SchemaError("payload must be an object")
        missing = [k for k in REQUIRED_FIELDS[self.type] if k not in self.payload]
        if missing:
            raise SchemaError(f"{self.type.value} payload missing {missing}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "seq": self.seq,
            "session_id": self.session_id,
            "sender": self.sender,
            "type": self.type.value,
            "payload": self.payload,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Message":
        try:
            return cls(
                seq=d["seq"],
                session_id=d["session_id"],
                sender=d["sender"],
                type=MsgType(d["type"]),
                payload=d["payload"],
            )
        except (KeyError, ValueError, TypeError) as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError(f"malformed message: {exc}") from exc

    @classmethod
    def from_json(cls, raw: str | bytes) -> "Message":
        try:
            d = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise SchemaError("message must be a JSON object")
        return cls.from_dict(d)
