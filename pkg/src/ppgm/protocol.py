"""Two-party split execution of one scoring session.

Each graph stays on its own logical device. Devices exchange only what the
model family must communicate; every frame is encoded, decoded and logged
in a transcript, so the transcript is exactly what an eavesdropper sees.
"""

from __future__ import annotations

import base64
import json
import struct
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model as M
from . import numerics as nx
from .graphs import Graph
from .model import HyperParams

SENDERS = ("A", "B", "scorer")
KINDS = ("messages", "obfuscated", "graph_rep", "node_rep", "score")
MULTI_VECTOR = ("messages", "node_rep")
TAGS = {"messages": "message", "obfuscated": "obfuscated", "graph_rep": "graph_rep", "node_rep": "node_rep"}


class ProtocolError(ValueError):
    pass


@dataclass(eq=False)
class WireMessage:
    session_id: str
    sender: str
    kind: str
    dim: int
    payload: np.ndarray
    m: int | None = None

    def __post_init__(self):
        self.payload = np.asarray(self.payload, dtype=np.float64)
        self.validate()

    def validate(self) -> None:
        if self.sender not in SENDERS:
            raise ProtocolError(f"unknown sender {self.sender!r}")
        if self.kind not in KINDS:
            raise ProtocolError(f"unknown message kind {self.kind!r}")
        if self.kind in MULTI_VECTOR:
            if self.m is None or self.m < 1:
                raise ProtocolError(f"{self.kind} message needs a positive vector count m")
            expected = (self.m, self.dim)
        elif self.kind == "score":
            expected = (1,)
        else:
            expected = (self.dim,)
        if self.payload.shape != expected:
            raise ProtocolError(f"{self.kind} payload has shape {self.payload.shape}, expected {expected}")

    def __eq__(self, other):
        if not isinstance(other, WireMessage):
            return NotImplemented
        return (
            (self.session_id, self.sender, self.kind, self.dim, self.m)
            == (other.session_id, other.sender, other.kind, other.dim, other.m)
            and self.payload.tobytes() == other.payload.tobytes()
        )

    def vectors(self) -> np.ndarray:
        return self.payload.reshape(-1, self.dim) if self.kind != "score" else self.payload.reshape(1, 1)


# --- codec ---------------------------------------------------------------------

def to_record(msg: WireMessage, step: int | None = None) -> dict:
    rec = {}
    if step is not None:
        rec["step"] = step
    rec["session_id"] = msg.session_id
    rec["sender"] = msg.sender
    rec["kind"] = msg.kind
    if msg.m is not None:
        rec["m"] = msg.m
    rec["dim"] = msg.dim
    rec["payload_b64"] = base64.b64encode(msg.payload.astype("<f8").tobytes()).decode("ascii")
    return rec


def from_record(rec: dict) -> tuple[int | None, WireMessage]:
    try:
        raw = base64.b64decode(rec["payload_b64"], validate=True)
        if len(raw) % 8:
            raise ProtocolError(f"payload of {len(raw)} bytes is not a whole number of float64 values")
        values = np.frombuffer(raw, dtype="<f8").astype(np.float64)
        kind, dim, m = rec["kind"], int(rec["dim"]), rec.get("m")
        if kind in MULTI_VECTOR:
            if m is None or values.size != int(m) * dim:
                raise ProtocolError(f"payload length {values.size} inconsistent with m={m} x dim={dim}")
            values = values.reshape(int(m), dim)
        msg = WireMessage(str(rec.get("session_id", "")), rec["sender"], kind, dim, values, None if m is None else int(m))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ProtocolError):
            raise
        raise ProtocolError(f"malformed record: {exc}") from None
    return rec.get("step"), msg


def encode_frame(msg: WireMessage, step: int | None = None) -> bytes:
    body = json.dumps(to_record(msg, step), separators=(",", ":")).encode("utf-8")
    return struct.pack("<I", len(body)) + body


def decode_frame(data: bytes, offset: int = 0) -> tuple[WireMessage, int]:
    """Decode one frame at ``offset``; returns the message and the next offset."""
    if len(data) - offset < 4:
        raise ProtocolError(f"truncated frame header at offset {offset}")
    (length,) = struct.unpack_from("<I", data, offset)
    start = offset + 4
    if len(data) - start < length:
        raise ProtocolError(f"truncated frame body at offset {offset}: need {length} bytes, have {len(data) - start}")
    try:
        rec = json.loads(data[start:start + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"corrupt frame at offset {offset}: {exc}") from None
    try:
        _, msg = from_record(rec)
    except ProtocolError as exc:
        raise ProtocolError(f"corrupt frame at offset {offset}: {exc}") from None
    return msg, start + length


def wire_codec(op: str, value):
    if op == "encode":
        return encode_frame(value)
    if op == "decode":
        msg, end = decode_frame(value)
        if end != len(value):
            raise ProtocolError(f"trailing bytes after frame at offset {end}")
        return msg
    raise ValueError(f"wire_codec: unknown op {op!r}")


# --- transcript ------------------------------------------------------------------

@dataclass
class Transcript:
    events: list[tuple[int, WireMessage]] = field(default_factory=list)

    def record(self, msg: WireMessage) -> None:
        step = self.events[-1][0] + 1 if self.events else 0
        self.events.append((step, msg))

    def schedule(self) -> list[tuple[str, str]]:
        return [(m.sender, m.kind) for _, m in self.events]

    def score(self) -> float:
        for _, m in reversed(self.events):
            if m.kind == "score":
                return float(m.payload[0])
        raise ProtocolError("transcript has no score event")

    def to_lines(self) -> list[str]:
        return [json.dumps(to_record(m, step), separators=(",", ":")) for step, m in self.events]

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(line + "\n" for line in self.to_lines()), encoding="utf-8")
        return path

    @classmethod
    def read(cls, path) -> Transcript:
        t = cls()
        last = -1
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                step, msg = from_record(json.loads(line))
            except (json.JSONDecodeError, ProtocolError) as exc:
                raise ProtocolError(f"{path}:{lineno}: {exc}") from None
            if step is None or step <= last:
                raise ProtocolError(f"{path}:{lineno}: step indices must be strictly increasing")
            last = step
            t.events.append((step, msg))
        return t

    def __eq__(self, other):
        return isinstance(other, Transcript) and self.to_lines() == other.to_lines()


class Channel:
    """Ordered reliable in-memory link; every frame is also logged to the transcript."""

    def __init__(self, transcript: Transcript):
        self.transcript = transcript
        self.queues: dict[str, deque[bytes]] = {name: deque() for name in SENDERS}

    def send(self, msg: WireMessage, to: str) -> None:
        step = self.transcript.events[-1][0] + 1 if self.transcript.events else 0
        frame = encode_frame(msg)
        try:
            decoded = wire_codec("decode", frame)
        except ProtocolError as exc:
            raise ProtocolError(f"step {step}: {exc}") from None
        self.transcript.record(decoded)
        self.queues[to].append(frame)

    def recv(self, me: str) -> WireMessage:
        return wire_codec("decode", self.queues[me].popleft())


# --- parties -------------------------------------------------------------------------

def frozen(params) -> dict[str, nx.Tensor]:
    """Grad-free copies of a parameter dict (inference runs without a tape)."""
    return {k: nx.Tensor(np.array(getattr(v, "data", v), dtype=np.float64)) for k, v in params.items()}


def _same_params(a, b) -> bool:
    if a.keys() != b.keys():
        return False
    return all(np.array_equal(a[k].data, b[k].data) for k in a)


class Device:
    def __init__(self, name: str, graph: Graph, params, family: str, hyper: HyperParams, session_id: str):
        self.name = name
        self.graph = graph
        self.params = params
        self.family = family
        self.hyper = hyper
        self.sid = session_id

    def _msg(self, kind, payload, m=None) -> WireMessage:
        payload = np.asarray(payload, dtype=np.float64)
        return WireMessage(self.sid, self.name, kind, payload.shape[-1], payload, m)

    # PPGM
    def ppgm_messages(self) -> WireMessage:
        self.H, self.own = M.ppgm_device_messages(self.graph, self.params, self.hyper)
        return self._msg("messages", self.own.data, self.hyper.m)

    def ppgm_obfuscated(self, incoming: WireMessage) -> WireMessage:
        _, o = M.ppgm_device_obfuscated(self.H, self.own, nx.Tensor(incoming.payload), self.params, self.hyper)
        return self._msg("obfuscated", o.data)

    # baselines
    def graph_rep(self, ldp_b: float = 0.0, rng=None) -> WireMessage:
        r = M.sgnn_graph_rep(self.graph, self.params)
        if ldp_b > 0:
            r = nx.add(r, M.ldp_noise(np.zeros(r.shape), ldp_b, rng))
        return self._msg("graph_rep", r.data)

    def node_reps(self) -> tuple[WireMessage, WireMessage]:
        H = M.gcn_encode(self.graph, self.params)
        return self._msg("node_rep", H.data, H.shape[0]), self._msg("graph_rep", nx.mean_rows(H).data)


class Scorer:
    """Neutral third party; holds only what it needs to turn payloads into a score."""

    def __init__(self, params, family: str):
        self.family = family
        self.head = {k: v for k, v in params.items() if k.startswith("head.")}

    def score(self, inbox: dict[str, list[WireMessage]]) -> float:
        if self.family == "ppgm":
            o1 = nx.Tensor(_one(inbox["A"], "obfuscated").payload)
            o2 = nx.Tensor(_one(inbox["B"], "obfuscated").payload)
            return float(M.predict(o1, o2, self.head).data)
        if self.family in ("sgnn", "sgnn_ldp"):
            r1 = _one(inbox["A"], "graph_rep").payload
            r2 = _one(inbox["B"], "graph_rep").payload
            return float(nx.cosine(r1, r2).data)
        H1, r1 = _one(inbox["A"], "node_rep").payload, _one(inbox["A"], "graph_rep").payload
        H2, r2 = _one(inbox["B"], "node_rep").payload, _one(inbox["B"], "graph_rep").payload
        return float(M.nodematch_score(nx.Tensor(H1), nx.Tensor(r1), nx.Tensor(H2), nx.Tensor(r2)).data)


def _one(msgs: list[WireMessage], kind: str) -> WireMessage:
    hits = [m for m in msgs if m.kind == kind]
    if len(hits) != 1:
        raise ProtocolError(f"expected exactly one {kind} message, got {len(hits)}")
    return hits[0]


def run_pairwise_session(
    g1: Graph,
    g2: Graph,
    params,
    family: str,
    hyper: HyperParams,
    params_b=None,
    rng: np.random.Generator | None = None,
    session_id: str = "s0",
) -> tuple[float, Transcript]:
    """Score ``(g1, g2)`` with ``g1`` on device A and ``g2`` on device B."""
    family = M.canonical_family(family)
    params_a = params if _is_frozen(params) else frozen(params)
    if params_b is None:
        params_b = params_a
    else:
        params_b = params_b if _is_frozen(params_b) else frozen(params_b)
        if not _same_params(params_a, params_b):
            raise ProtocolError("devices A and B hold different parameters")
    if family == "sgnn_ldp" and hyper.ldp_b > 0 and rng is None:
        raise ProtocolError("sgnn_ldp session needs a seeded generator for the noise")

    transcript = Transcript()
    chan = Channel(transcript)
    a = Device("A", g1, params_a, family, hyper, session_id)
    b = Device("B", g2, params_b, family, hyper, session_id)
    scorer = Scorer(params_a, family)
    inbox: dict[str, list[WireMessage]] = {"A": [], "B": []}

    def to_scorer(msg):
        chan.send(msg, "scorer")
        inbox[msg.sender].append(chan.recv("scorer"))

    if family == "ppgm":
        chan.send(a.ppgm_messages(), "B")
        chan.send(b.ppgm_messages(), "A")
        to_scorer(a.ppgm_obfuscated(chan.recv("A")))
        to_scorer(b.ppgm_obfuscated(chan.recv("B")))
    elif family in ("sgnn", "sgnn_ldp"):
        ldp = hyper.ldp_b if family == "sgnn_ldp" else 0.0
        to_scorer(a.graph_rep(ldp, rng))
        to_scorer(b.graph_rep(ldp, rng))
    else:
        for dev in (a, b):
            for msg in dev.node_reps():
                to_scorer(msg)

    score = scorer.score(inbox)
    chan.send(WireMessage(session_id, "scorer", "score", 1, [score]), "A")
    return score, transcript


def _is_frozen(params) -> bool:
    return all(isinstance(v, nx.Tensor) and not v.requires_grad for v in params.values())


def monolithic_score(g1: Graph, g2: Graph, params, family: str, hyper: HyperParams, rng=None) -> float:
    p = params if _is_frozen(params) else frozen(params)
    return float(M.forward(family, g1, g2, p, hyper, rng)["score"].data)


def replay_score(transcript: Transcript, params, family: str) -> float:
    """Recompute the score from the intercepted payloads alone."""
    family = M.canonical_family(family)
    inbox: dict[str, list[WireMessage]] = {"A": [], "B": []}
    for _, msg in transcript.events:
        if msg.sender in inbox:
            inbox[msg.sender].append(msg)
    return Scorer(params, family).score(inbox)


# --- interception -----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Intercepted:
    tag: str
    sender: str
    step: int
    vector: np.ndarray


def intercept(transcript: Transcript, rng: np.random.Generator | None = None, policy: str = "all") -> list[Intercepted]:
    """Every representation vector that crossed the boundary, or one drawn uniformly."""
    if not transcript.events:
        raise ProtocolError("intercept: empty transcript")
    found = []
    for step, msg in transcript.events:
        if msg.kind == "score":
            continue
        for vec in msg.vectors():
            found.append(Intercepted(TAGS[msg.kind], msg.sender, step, vec))
    if policy == "all":
        return found
    if policy == "uniform-one":
        if rng is None:
            raise ValueError("intercept: uniform-one needs a generator")
        return [found[int(rng.integers(len(found)))]]
    raise ValueError(f"intercept: unknown policy {policy!r}")
