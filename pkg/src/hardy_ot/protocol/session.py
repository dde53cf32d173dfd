from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from ..streams import Streams
from .config import ProtocolConfig
from .messages import Message, SchemaError
from .parties import AbortInfo, Alice, Bob, Channel, Party, SessionError, Strategy

TRANSCRIPT_VERSION = 1


@dataclass
class SessionResult:
    alice_bit: int | None
    bob_decoded: int | None = None
    abort: AbortInfo | None = None
    counters: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.abort is not None and self.bob_decoded is not None:
            raise ValueError("an aborted session cannot carry a decoded bit")

    @property
    def completed(self) -> bool:
        return self.abort is None

    @property
    def decoded(self) -> bool:
        return self.bob_decoded is not None

    def to_dict(self) -> dict[str, Any]:
        return {
            "alice_bit": self.alice_bit,
            "bob_decoded": self.bob_decoded,
            "abort": None if self.abort is None else vars(self.abort).copy(),
            "counters": self.counters,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SessionResult":
        abort = d.get("abort")
        return cls(alice_bit=d.get("alice_bit"), bob_decoded=d.get("bob_decoded"),
                   abort=None if abort is None else AbortInfo(**abort),
                   counters=dict(d.get("counters") or {}))

    @classmethod
    def merge(cls, alice: dict[str, Any], bob: dict[str, Any]) -> "SessionResult":
        """Combine the two parties' local views into one result."""
        abort = alice.get("abort") or bob.get("abort")
        counters = {f"bob_{k}": v for k, v in (bob.get("counters") or {}).items()}
        counters.update(alice.get("counters") or {})
        return cls(alice_bit=alice.get("alice_bit"),
                   bob_decoded=None if abort else bob.get("bob_decoded"),
                   abort=None if abort is None else AbortInfo(**abort),
                   counters=counters)


def party_view(party: Party) -> dict[str, Any]:
    view: dict[str, Any] = {
        "abort": None if party.abort is None else vars(party.abort).copy(),
        "counters": dict(party.counters),
    }
    if isinstance(party, Alice):
        view["alice_bit"] = party.bit
    else:
        view["bob_decoded"] = party.decoded
        view["counters"]["s7_outcomes"] = party.s7_outcomes
    return view


@dataclass
class Transcript:
    header: dict[str, Any]
    messages: list[Message]
    result: dict[str, Any] | None = None

    def lines(self) -> Iterable[str]:
        yield json.dumps({"record": "header", **self.header}, sort_keys=True, separators=(",", ":"))
        for m in self.messages:
            yield m.to_json()
        if self.result is not None:
            yield json.dumps({"record": "result", **self.result}, sort_keys=True, separators=(",", ":"))

    def to_jsonl(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def from_jsonl(cls, text: str) -> "Transcript":
        header, result, messages = None, None, []
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"line {n}: {exc}") from exc
            kind = obj.pop("record", None)
            if kind == "header":
                header = obj
            elif kind == "result":
                result = obj
            else:
                messages.append(Message.from_dict(obj))
        if header is None:
            raise SchemaError("transcript has no header record")
        return cls(header=header, messages=messages, result=result)

    @classmethod
    def read(cls, path: str | Path) -> "Transcript":
        return cls.from_jsonl(Path(path).read_text(encoding="utf-8"))

    def alice_projection(self) -> list[str]:
        """Alice's view of the exchange. Two parties only, so every message was
        either sent or received by her."""
        return [m.to_json() for m in self.messages]


def session_id(cfg: ProtocolConfig) -> str:
    return f"{cfg.seed & ((1 << 64) - 1):016x}"


def _strategy_record(s: Strategy | None) -> dict[str, Any] | None:
    return None if s is None or s.name == "honest" else s.to_dict()


def project_view(result: SessionResult, role: str) -> dict[str, Any]:
    """One party's local view recovered from a merged result."""
    view: dict[str, Any] = {"abort": None if result.abort is None else vars(result.abort).copy()}
    if role == "alice":
        view["alice_bit"] = result.alice_bit
        view["counters"] = {k: v for k, v in result.counters.items() if not k.startswith("bob_")}
    else:
        view["bob_decoded"] = result.bob_decoded
        view["counters"] = {k[4:]: v for k, v in result.counters.items() if k.startswith("bob_")}
    if role == "alice" and result.abort is not None and result.abort.step == "S7":
        view["abort"] = None  # Bob's final check is never sent
    return view


def make_header(cfg: ProtocolConfig, alice_strategy: Strategy | None, bob_strategy: Strategy | None,
                alice_bit: int | None, salts: dict[str, int] | None) -> dict[str, Any]:
    return {
        "version": TRANSCRIPT_VERSION,
        "config": cfg.to_dict(),
        "alice_strategy": _strategy_record(alice_strategy),
        "bob_strategy": _strategy_record(bob_strategy),
        "alice_bit": alice_bit,
        "salts": dict(salts or {}),
    }


def run_party(party: Party, endpoint, sid: str, log: list[Message] | None = None) -> dict[str, Any]:
    """Run one side to completion over ``endpoint``; returns its local view."""
    party.run(Channel(endpoint, party.role, sid, log))
    return party_view(party)


def run_parties(
    cfg: ProtocolConfig,
    alice_strategy: Strategy | None = None,
    bob_strategy: Strategy | None = None,
    transport=None,
    *,
    alice_bit: int | None = None,
    salts: dict[str, int] | None = None,
    record: bool = True,
) -> tuple[Alice, Bob, list[Message]]:
    """Play one session and hand back both finished parties and the log."""
    from ..harness.transport import LoopbackTransport, TransportError

    transport = transport or LoopbackTransport()
    alice = Alice(cfg, Streams(cfg.seed, salts), alice_strategy, bit=alice_bit)
    bob = Bob(cfg, Streams(cfg.seed, salts), bob_strategy)
    sid = session_id(cfg)
    log: list[Message] = []
    a_ep, b_ep = transport.pair()
    bob_err: list[BaseException] = []

    def bob_main() -> None:
        try:
            bob.run(Channel(b_ep, "bob", sid))
        except BaseException as exc:  # surfaced in the calling thread
            bob_err.append(exc)
            b_ep.close()

    t = threading.Thread(target=bob_main, name=f"bob-{sid}", daemon=True)
    t.start()
    try:
        alice.run(Channel(a_ep, "alice", sid, log if record else None))
    except BaseException:
        a_ep.close()
        t.join(timeout=5.0)
        if bob_err and not isinstance(bob_err[0], TransportError):
            raise bob_err[0]
        raise
    t.join()
    a_ep.close()
    b_ep.close()
    if bob_err:
        raise bob_err[0]
    return alice, bob, log


def run_session(
    cfg: ProtocolConfig,
    alice_strategy: Strategy | None = None,
    bob_strategy: Strategy | None = None,
    transport=None,
    *,
    alice_bit: int | None = None,
    salts: dict[str, int] | None = None,
    record: bool = True,
) -> tuple[SessionResult, Transcript]:
    """Run both parties against each other and return the merged result.

    Transport failures raise ``TransportError``; out-of-protocol failures raise
    ``SessionError``. Protocol aborts are reported in the result.
    """
    alice, bob, log = run_parties(cfg, alice_strategy, bob_strategy, transport,
                                  alice_bit=alice_bit, salts=salts, record=record)
    result = SessionResult.merge(party_view(alice), party_view(bob))
    header = make_header(cfg, alice_strategy, bob_strategy, alice_bit, salts)
    return result, Transcript(header, log, result.to_dict())


__all__ = [
    "SessionError",
    "SessionResult",
    "Transcript",
    "run_parties",
    "run_party",
    "project_view",
    "run_session",
    "session_id",
]
