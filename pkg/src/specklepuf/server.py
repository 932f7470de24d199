"""TCP verifier daemon and prover client for the wire protocol in ``wire``.

The verifier runs on one asyncio loop, so every database mutation happens on a
single thread: sessions are opened (and their pairs burned) one at a time even
with many provers connected.
"""
from __future__ import annotations

import asyncio
import logging
import socket
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._rng import as_rng
from .challenge import Challenge, decode_challenge
from .measurement import DetectorConfig, measure_counts
from .protocol import CrpDatabase, DatabaseExhaustedError, abort_session, open_session, verify
from .puf import PufInstance
from .stats.binomial import DecisionRule
from .wire import MAX_LINE, PROTOCOL_VERSION, Verb, WireError, WireMessage, decode, error, hello

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 30.0


class ProtocolError(RuntimeError):
    """The peer broke the protocol or reported an error."""


def parse_endpoint(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit() or not 0 <= int(port) <= 65535:
        raise ValueError(f"expected HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


@dataclass
class Verifier:
    db: CrpDatabase
    rule: DecisionRule
    timeout: float = DEFAULT_TIMEOUT
    seed_or_rng: object = None
    sessions_served: int = 0
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self._rng = as_rng(self.seed_or_rng, "verifier")

    @property
    def L(self) -> int:
        return self.rule.L

    async def _read(self, reader: asyncio.StreamReader) -> WireMessage:
        try:
            line = await asyncio.wait_for(reader.readline(), self.timeout)
        except asyncio.TimeoutError:
            raise WireError(f"timeout after {self.timeout:g} s") from None
        except (asyncio.LimitOverrunError, ValueError):
            raise WireError("line too long") from None
        if not line:
            raise WireError("connection closed by peer")
        return decode(line)

    async def handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        session = None
        try:
            msg = await self._read(reader)
            if msg.verb is not Verb.HELLO or msg.fields[0] != PROTOCOL_VERSION:
                raise WireError(f"expected HELLO {PROTOCOL_VERSION}")
            writer.write(hello().encode())
            # consumption is fsynced inside open_session, before any challenge is written
            session = open_session(self.db, self.L, self._rng)
            out = [WireMessage(Verb.AUTH_BEGIN, (session.session_id, str(self.L))).encode()]
            out += [
                WireMessage(Verb.CHALLENGE, (str(i), h)).encode()
                for i, h in enumerate(session.challenge_hexes)
            ]
            writer.write(b"".join(out))
            await asyncio.wait_for(writer.drain(), self.timeout)
            counts = []
            for i in range(self.L):
                msg = await self._read(reader)
                if msg.verb is Verb.ERROR:
                    raise WireError(f"prover error: {msg.fields[0]}")
                if msg.verb is not Verb.COUNT:
                    raise WireError(f"expected COUNT, got {msg.verb.value}")
                if msg.int_field(0) != i:
                    raise WireError(f"COUNT index {msg.fields[0]} out of order, expected {i}")
                counts.append(msg.int_field(1))
            verify(session, counts, self.rule)
            verdict = "ACCEPT" if session.verdict == "accept" else "REJECT"
            writer.write(WireMessage(Verb.RESULT, (verdict, f"{session.measured_hd:.6f}")).encode())
            log.info("session %s %s hd=%.4f", session.session_id, verdict, session.measured_hd)
            self.sessions_served += 1
        except (WireError, DatabaseExhaustedError, ValueError) as exc:
            if session is not None:
                abort_session(session)
            log.warning("session aborted: %s", exc)
            writer.write(error(str(exc)).encode())
        except (ConnectionError, asyncio.IncompleteReadError):
            if session is not None:
                abort_session(session)
        finally:
            try:
                await asyncio.wait_for(writer.drain(), self.timeout)
            except (ConnectionError, asyncio.TimeoutError):
                pass
            writer.close()
            try:
                await writer.wait_closed()
            except ConnectionError:
                pass

    async def start(self, host: str = "127.0.0.1", port: int = 0) -> asyncio.base_events.Server:
        return await asyncio.start_server(self.handle, host, port, limit=MAX_LINE)


async def serve_forever(verifier: Verifier, host: str, port: int, on_ready: Callable[[str, int], None] | None = None):
    server = await verifier.start(host, port)
    bound = server.sockets[0].getsockname()
    if on_ready is not None:
        on_ready(bound[0], bound[1])
    async with server:
        await server.serve_forever()


# -- prover --------------------------------------------------------------------


@dataclass
class ProverResult:
    verdict: str
    hd: float
    session_id: str
    challenge_ids: list[str]


CountFn = Callable[[Sequence[Challenge]], Sequence[int]]


def puf_responder(puf: PufInstance, cfg: DetectorConfig | None = None, seed_or_rng=None) -> CountFn:
    cfg = cfg or DetectorConfig.calibrated()
    rng = as_rng(seed_or_rng, "prover")
    return lambda challenges: measure_counts(puf, challenges, cfg, rng)


class _LineSocket:
    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.rfile = sock.makefile("rb")

    def send(self, *msgs: WireMessage) -> None:
        self.sock.sendall(b"".join(m.encode() for m in msgs))

    def recv(self) -> WireMessage:
        line = self.rfile.readline(MAX_LINE + 1)
        if not line:
            raise ProtocolError("verifier closed the connection")
        msg = decode(line)
        if msg.verb is Verb.ERROR:
            raise ProtocolError(f"verifier error: {msg.fields[0]}")
        return msg

    def close(self) -> None:
        self.rfile.close()
        self.sock.close()


def prove(
    respond: CountFn,
    host: str,
    port: int,
    m: int,
    timeout: float = DEFAULT_TIMEOUT,
    stop_after: int | None = None,
) -> ProverResult:
    """Run one authentication session as the prover.

    ``stop_after`` disconnects after receiving that many challenges, which is
    how tests simulate a prover dropping mid-session.
    """
    conn = _LineSocket(socket.create_connection((host, port), timeout=timeout))
    try:
        conn.send(hello())
        msg = conn.recv()
        if msg.verb is not Verb.HELLO or msg.fields[0] != PROTOCOL_VERSION:
            raise ProtocolError(f"unexpected greeting {msg}")
        begin = conn.recv()
        if begin.verb is not Verb.AUTH_BEGIN:
            raise ProtocolError(f"expected AUTH_BEGIN, got {begin.verb.value}")
        sid, L = begin.fields[0], begin.int_field(1)
        challenges = []
        for i in range(L):
            if stop_after is not None and i >= stop_after:
                return ProverResult("ABORTED", float("nan"), sid, [c.challenge_id for c in challenges])
            msg = conn.recv()
            if msg.verb is not Verb.CHALLENGE or msg.int_field(0) != i:
                raise ProtocolError(f"expected CHALLENGE {i}, got {msg}")
            challenges.append(decode_challenge(msg.fields[1], m))
        counts = respond(challenges)
        conn.send(*(WireMessage(Verb.COUNT, (str(i), str(int(n)))) for i, n in enumerate(counts)))
        result = conn.recv()
        if result.verb is not Verb.RESULT:
            raise ProtocolError(f"expected RESULT, got {result.verb.value}")
        return ProverResult(result.fields[0], float(result.fields[1]), sid, [c.challenge_id for c in challenges])
    finally:
        conn.close()
