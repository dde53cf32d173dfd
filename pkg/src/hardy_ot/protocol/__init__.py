"""Honest Alice/Bob protocol machinery."""

from .config import ProtocolConfig
from .messages import Message, MsgType, SchemaError
from .parties import HONEST, AbortInfo, Alice, Bob, CheckFailed, SessionError, Strategy, message_step
from .session import SessionResult, Transcript, run_session
from .steps import (
    NoQualifyingPair,
    Violation,
    cross_check,
    frequency_gate,
    make_pairs,
    s3_offer,
    s5_refine,
    s6_encode,
    s7_decode,
)

__all__ = [
    "HONEST", "AbortInfo", "Alice", "Bob", "CheckFailed", "Message", "MsgType",
    "NoQualifyingPair", "ProtocolConfig", "SchemaError", "SessionError", "SessionResult",
    "Strategy", "Transcript", "Violation", "cross_check", "frequency_gate", "make_pairs",
    "message_step", "run_session", "s3_offer", "s5_refine", "s6_encode", "s7_decode",
]
