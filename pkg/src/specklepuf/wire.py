"""Line protocol between verifier and prover.

One message per LF-terminated UTF-8 line, verb and fields separated by tabs::

    HELLO       <version>
    AUTH_BEGIN  <session_id> <L>
    CHALLENGE   <idx> <hex>
    COUNT       <idx> <N>
    RESULT      ACCEPT|REJECT <hd>
    ERROR       <reason>
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass

PROTOCOL_VERSION = "1"
MAX_LINE = 64 * 1024


class Verb(str, enum.Enum):
    HELLO = "HELLO"
    AUTH_BEGIN = "AUTH_BEGIN"
    CHALLENGE = "CHALLENGE"
    COUNT = "COUNT"
    RESULT = "RESULT"
    ERROR = "ERROR"


class WireError(ValueError):
    """A line that does not parse as a protocol message."""


_INT = re.compile(r"0|[1-9][0-9]*")
_HEX = re.compile(r"[0-9a-f]+")
_TOKEN = re.compile(r"[A-Za-z0-9_-]+")


def _nonneg_int(s: str) -> None:
    if not _INT.fullmatch(s):
        raise WireError(f"not a non-negative integer: {s!r}")


def _positive_int(s: str) -> None:
    _nonneg_int(s)
    if s == "0":
        raise WireError("expected a positive integer")


def _hex(s: str) -> None:
    if not _HEX.fullmatch(s) or len(s) % 2:
        raise WireError("challenge payload is not lowercase hex bytes")


def _token(s: str) -> None:
    if not _TOKEN.fullmatch(s):
        raise WireError(f"bad token {s!r}")


def _hd(s: str) -> None:
    try:
        x = float(s)
    except ValueError:
        raise WireError(f"bad hd {s!r}") from None
    if not 0.0 <= x <= 1.0:
        raise WireError(f"hd {s!r} outside [0, 1]")


def _verdict(s: str) -> None:
    if s not in ("ACCEPT", "REJECT"):
        raise WireError(f"bad verdict {s!r}")


def _reason(s: str) -> None:
    if not s:
        raise WireError("empty error reason")


_SCHEMA = {
    Verb.HELLO: (_token,),
    Verb.AUTH_BEGIN: (_token, _positive_int),
    Verb.CHALLENGE: (_nonneg_int, _hex),
    Verb.COUNT: (_nonneg_int, _nonneg_int),
    Verb.RESULT: (_verdict, _hd),
    Verb.ERROR: (_reason,),
}


@dataclass(frozen=True)
class WireMessage:
    verb: Verb
    fields: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "verb", Verb(self.verb))
        object.__setattr__(self, "fields", tuple(str(f) for f in self.fields))
        checks = _SCHEMA[self.verb]
        if len(self.fields) != len(checks):
            raise WireError(f"{self.verb.value} takes {len(checks)} field(s), got {len(self.fields)}")
        for f, check in zip(self.fields, checks):
            if any(ch in f for ch in "\t\n\r"):
                raise WireError("field values may not contain tabs or line breaks")
            check(f)

    def encode(self) -> bytes:
        return ("\t".join((self.verb.value, *self.fields)) + "\n").encode("utf-8")

    def int_field(self, i: int) -> int:
        return int(self.fields[i])


def decode(line: bytes | str) -> WireMessage:
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WireError("line is not UTF-8") from exc
    if not line.endswith("\n"):
        raise WireError("line is not LF-terminated")
    parts = line[:-1].split("\t")
    try:
        verb = Verb(parts[0])
    except ValueError:
        raise WireError(f"unknown verb {parts[0]!r}") from None
    return WireMessage(verb, tuple(parts[1:]))


def hello() -> WireMessage:
    return WireMessage(Verb.HELLO, (PROTOCOL_VERSION,))


def error(reason: str) -> WireMessage:
    # keep reasons on one line whatever the exception text was
    clean = " ".join(str(reason).split()) or "error"
    return WireMessage(Verb.ERROR, (clean,))
