"""Pluggable decision core for the TCP agent.

Two implementations of the same contract: a deterministic rule-based oracle
(the reference TCP state machine, also used for labeling and grading) and a
remote chat-model client speaking a strict JSON schema. The runtime only
sees `decide(input) -> decision`.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

from .alu import AluTask, alu_parse_task
from .tcp_core import (
    ACTION_NONE,
    ActionKind,
    AgentState,
    FLAGS_ACK,
    FLAGS_FIN_ACK,
    FLAGS_PSH_ACK,
    FLAGS_SYN,
    FLAGS_SYN_ACK,
    LocalAction,
    Segment,
    SYNCHRONIZED_STATES,
    TcpFlags,
    TcpState,
    flags_parse,
    parse_state,
    seq_lt,
)


class Verdict(Enum):
    NORMAL = "NORMAL"
    ORDER_ERROR = "ORDER_ERROR"
    FLAG_ERROR = "FLAG_ERROR"


class MalformedDecision(Exception):
    """Model output that does not satisfy the decision schema."""


class TransportError(Exception):
    """Remote endpoint unreachable or persistently failing."""


@dataclass(frozen=True, slots=True)
class CognitiveInput:
    s: AgentState
    r: Optional[Segment] = None
    a: LocalAction = ACTION_NONE

    def __post_init__(self):
        if self.r is None and self.a.kind is ActionKind.NONE:
            raise ValueError("a cognitive step needs a received segment or an action")

    def to_wire(self) -> dict:
        return {
            "state": self.s.to_wire(),
            "received": self.r.to_wire() if self.r is not None else None,
            "action": self.a.to_wire(),
        }

    @classmethod
    def from_wire(cls, obj: dict) -> "CognitiveInput":
        action = obj.get("action") or {"kind": "NONE", "data_len": 0}
        kind = ActionKind(action["kind"])
        data = None
        if kind is ActionKind.SEND:
            data = b"\x00" * int(action.get("data_len", 0))
        return cls(
            s=AgentState.from_wire(obj["state"]),
            r=Segment.from_wire(obj["received"]) if obj.get("received") else None,
            a=LocalAction(kind, data),
        )


@dataclass(frozen=True, slots=True)
class CognitiveDecision:
    next_state: TcpState
    flags: Optional[TcpFlags]
    payload_len: int
    t_task: Optional[AluTask]
    verdict: Verdict = Verdict.NORMAL

    def emits_segment(self) -> bool:
        return self.verdict is Verdict.NORMAL and self.t_task is not None

    def to_wire(self) -> dict:
        return {
            "next_state": self.next_state.value,
            "flags": self.flags.render() if self.flags is not None else None,
            "payload_len": self.payload_len,
            "t_task": self.t_task.value if self.t_task is not None else None,
            "verdict": self.verdict.value,
        }


DECISION_KEYS = ("next_state", "flags", "payload_len", "t_task", "verdict")


def serialize_decision(d: CognitiveDecision) -> str:
    return json.dumps(d.to_wire(), separators=(",", ":"))


def serialize_input(i: CognitiveInput) -> str:
    return json.dumps(i.to_wire(), separators=(",", ":"))


def _decision_from_obj(obj: dict) -> CognitiveDecision:
    if not isinstance(obj, dict):
        raise MalformedDecision("decision must be a JSON object")
    unknown = set(obj) - set(DECISION_KEYS)
    if unknown:
        raise MalformedDecision(f"unknown keys: {sorted(unknown)}")
    missing = set(DECISION_KEYS) - set(obj)
    if missing:
        raise MalformedDecision(f"missing keys: {sorted(missing)}")
    try:
        next_state = parse_state(obj["next_state"])
        flags = flags_parse(obj["flags"]) if obj["flags"] is not None else None
        payload_len = obj["payload_len"]
        if not isinstance(payload_len, int) or payload_len < 0:
            raise ValueError(f"bad payload_len: {payload_len!r}")
        t_task = alu_parse_task(obj["t_task"]) if obj["t_task"] is not None else None
        verdict = Verdict(obj["verdict"])
    except ValueError as exc:
        raise MalformedDecision(str(exc)) from None
    return CognitiveDecision(next_state, flags, payload_len, t_task, verdict)


def _extract_json_object(text: str) -> Optional[str]:
    """Return the first balanced {...} block embedded in prose, if any."""
    start = text.find("{")
    while start != -1:
        depth = 0
        in_str = False
        escaped = False
        for i in range(start, len(text)):
            c = text[i]
            if in_str:
                if escaped:
                    escaped = False
                elif c == "\\":
                    escaped = True
                elif c == '"':
                    in_str = False
            elif c == '"':
                in_str = True
            elif c == "{":
                depth += 1
            elif c == "}":
                depth -= 1
                if depth == 0:
                    return text[start : i + 1]
        start = text.find("{", start + 1)
    return None


def parse_decision(raw: str) -> CognitiveDecision:
    """Strict schema validation, with one lenient pass over prose-wrapped JSON."""
    try:
        obj = json.loads(raw)
    except (json.JSONDecodeError, TypeError):
        candidate = _extract_json_object(raw or "")
        if candidate is None:
            raise MalformedDecision("no JSON object found in output") from None
        try:
            obj = json.loads(candidate)
        except json.JSONDecodeError as exc:
            raise MalformedDecision(f"embedded object unparseable: {exc}") from None
    return _decision_from_obj(obj)


# ---------------------------------------------------------------------------
# Reference oracle: the deterministic TCP state machine.
# ---------------------------------------------------------------------------


def _verdict(s: AgentState, kind: Verdict) -> CognitiveDecision:
    return CognitiveDecision(
        next_state=s.state, flags=None, payload_len=0, t_task=None, verdict=kind
    )


def _reply(
    next_state: TcpState,
    flags: Optional[TcpFlags],
    payload_len: int = 0,
    t_task: Optional[AluTask] = None,
) -> CognitiveDecision:
    return CognitiveDecision(next_state, flags, payload_len, t_task, Verdict.NORMAL)


def _check_flags(s: AgentState, r: Segment) -> Optional[CognitiveDecision]:
    f = r.flags
    if f.syn and f.fin:
        return _verdict(s, Verdict.FLAG_ERROR)
    if f.syn and f.rst:
        return _verdict(s, Verdict.FLAG_ERROR)
    if s.state in SYNCHRONIZED_STATES:
        if f.syn:
            return _verdict(s, Verdict.FLAG_ERROR)
        if f.fin and not f.ack:
            return _verdict(s, Verdict.FLAG_ERROR)
    return None


def _check_order(s: AgentState, r: Segment) -> Optional[CognitiveDecision]:
    if s.state in SYNCHRONIZED_STATES:
        if s.rcv_nxt is not None and r.seq != s.rcv_nxt:
            return _verdict(s, Verdict.ORDER_ERROR)
    if r.flags.ack and seq_lt(s.snd_nxt, r.ack):
        # Acknowledges data we never sent.
        return _verdict(s, Verdict.ORDER_ERROR)
    return None


def _on_action(s: AgentState, a: LocalAction) -> CognitiveDecision:
    kind = a.kind
    if s.state is TcpState.CLOSED and kind is ActionKind.OPEN_ACTIVE:
        return _reply(TcpState.SYN_SENT, FLAGS_SYN, 0, AluTask.INIT_SYN)
    if s.state is TcpState.CLOSED and kind is ActionKind.OPEN_PASSIVE:
        return _reply(TcpState.LISTEN, None)
    if s.state is TcpState.ESTABLISHED and kind is ActionKind.SEND:
        return _reply(
            TcpState.ESTABLISHED, FLAGS_PSH_ACK, len(a.data or b""), AluTask.CALCULATE_SEQ_ACK
        )
    if s.state is TcpState.ESTABLISHED and kind is ActionKind.CLOSE:
        return _reply(TcpState.FIN_WAIT_1, FLAGS_FIN_ACK, 0, AluTask.CALCULATE_SEQ_ACK)
    if s.state is TcpState.CLOSE_WAIT and kind is ActionKind.CLOSE:
        return _reply(TcpState.LAST_ACK, FLAGS_FIN_ACK, 0, AluTask.CALCULATE_SEQ_ACK)
    raise ValueError(f"action {kind.value} is not valid in state {s.state.value}")


def _on_segment(s: AgentState, r: Segment) -> CognitiveDecision:
    bad = _check_flags(s, r)
    if bad is not None:
        return bad
    bad = _check_order(s, r)
    if bad is not None:
        return bad

    f = r.flags
    state = s.state

    if state is TcpState.LISTEN:
        if f.syn and not f.ack:
            return _reply(TcpState.SYN_RCVD, FLAGS_SYN_ACK, 0, AluTask.CALCULATE_SEQ_ACK)
        return _verdict(s, Verdict.ORDER_ERROR)

    if state is TcpState.SYN_SENT:
        if f.syn and f.ack:
            if r.ack != s.snd_nxt:
                return _verdict(s, Verdict.ORDER_ERROR)
            return _reply(TcpState.ESTABLISHED, FLAGS_ACK, 0, AluTask.CALCULATE_ACK)
        return _verdict(s, Verdict.ORDER_ERROR)

    if state is TcpState.SYN_RCVD:
        if f.ack and not f.syn and not f.fin and r.payload_len == 0:
            if r.ack != s.snd_nxt or (s.rcv_nxt is not None and r.seq != s.rcv_nxt):
                return _verdict(s, Verdict.ORDER_ERROR)
            return _reply(TcpState.ESTABLISHED, None)
        return _verdict(s, Verdict.ORDER_ERROR)

    if state is TcpState.ESTABLISHED:
        if f.fin:
            return _reply(TcpState.CLOSE_WAIT, FLAGS_ACK, 0, AluTask.CALCULATE_ACK)
        if r.payload_len > 0:
            return _reply(TcpState.ESTABLISHED, FLAGS_ACK, 0, AluTask.CALCULATE_ACK)
        if f.ack:
            return _reply(TcpState.ESTABLISHED, None)
        return _verdict(s, Verdict.ORDER_ERROR)

    if state is TcpState.FIN_WAIT_1:
        if f.fin:
            if f.ack and r.ack == s.snd_nxt:
                # Peer's FIN also acknowledges ours.
                return _reply(TcpState.TIME_WAIT, FLAGS_ACK, 0, AluTask.CALCULATE_ACK)
            return _reply(TcpState.CLOSING, FLAGS_ACK, 0, AluTask.CALCULATE_ACK)
        if r.payload_len > 0:
            return _reply(TcpState.FIN_WAIT_1, FLAGS_ACK, 0, AluTask.CALCULATE_ACK)
        if f.ack:
            if r.ack == s.snd_nxt:
                return _reply(TcpState.FIN_WAIT_2, None)
            return _reply(TcpState.FIN_WAIT_1, None)
        return _verdict(s, Verdict.ORDER_ERROR)

    if state is TcpState.FIN_WAIT_2:
        if f.fin:
            return _reply(TcpState.TIME_WAIT, FLAGS_ACK, 0, AluTask.CALCULATE_ACK)
        if r.payload_len > 0:
            return _reply(TcpState.FIN_WAIT_2, FLAGS_ACK, 0, AluTask.CALCULATE_ACK)
        if f.ack:
            return _reply(TcpState.FIN_WAIT_2, None)
        return _verdict(s, Verdict.ORDER_ERROR)

    if state is TcpState.CLOSING:
        if f.ack and not f.fin and r.payload_len == 0 and r.ack == s.snd_nxt:
            return _reply(TcpState.TIME_WAIT, None)
        return _verdict(s, Verdict.ORDER_ERROR)

    if state is TcpState.CLOSE_WAIT:
        if r.payload_len > 0 or f.fin:
            # The inbound stream already terminated.
            return _verdict(s, Verdict.ORDER_ERROR)
        if f.ack:
            return _reply(TcpState.CLOSE_WAIT, None)
        return _verdict(s, Verdict.ORDER_ERROR)

    if state is TcpState.LAST_ACK:
        if f.ack and not f.fin and r.payload_len == 0 and r.ack == s.snd_nxt:
            return _reply(TcpState.CLOSED, None)
        return _verdict(s, Verdict.ORDER_ERROR)

    # CLOSED / TIME_WAIT: nothing should arrive.
    return _verdict(s, Verdict.ORDER_ERROR)


def oracle_transition(
    s: AgentState, r: Optional[Segment], a: LocalAction
) -> CognitiveDecision:
    """Deterministic reference transition: the full lifecycle state machine.

    Local actions take precedence; a received segment alongside an action is
    context for the ALU, already validated when it arrived.
    """
    if a.kind is not ActionKind.NONE:
        return _on_action(s, a)
    if r is None:
        raise ValueError("no trigger: neither segment nor action")
    return _on_segment(s, r)


class CognitiveCore:
    """Decision interface: maps (S, R, A) to (S', F, P_L, T_task, verdict)."""

    name = "base"

    def decide(self, input: CognitiveInput) -> CognitiveDecision:
        raise NotImplementedError


class OracleCore(CognitiveCore):
    name = "oracle"

    def decide(self, input: CognitiveInput) -> CognitiveDecision:
        return oracle_transition(input.s, input.r, input.a)


# ---------------------------------------------------------------------------
# Prompting and the remote-model client.
# ---------------------------------------------------------------------------

PERSONA = (
    "You are the reasoning core of an autonomous TCP endpoint. Given the "
    "endpoint's memory (state), the received segment (received) and the local "
    "action (action), decide the next state, the control flags of any reply, "
    "its payload length, and which arithmetic task the calculator tool must "
    "run. Never compute sequence or acknowledgment numbers yourself. Respond "
    "with exactly one JSON object with keys next_state, flags, payload_len, "
    "t_task, verdict and nothing else. Use verdict ORDER_ERROR or FLAG_ERROR "
    "for segments that violate the protocol, NORMAL otherwise."
)


@dataclass(frozen=True)
class PromptConfig:
    persona: str = PERSONA
    few_shot: Tuple[Tuple[CognitiveInput, CognitiveDecision], ...] = ()
    fine_tuned: bool = False

    def __post_init__(self):
        if not self.fine_tuned and not self.few_shot:
            raise ValueError("baseline mode requires at least one few-shot pair")


@dataclass(frozen=True)
class PromptBundle:
    system_persona: str
    few_shot_examples: Tuple[Tuple[str, str], ...]
    input_object: str

    def messages(self) -> List[dict]:
        msgs = [{"role": "system", "content": self.system_persona}]
        for inp, out in self.few_shot_examples:
            msgs.append({"role": "user", "content": inp})
            msgs.append({"role": "assistant", "content": out})
        msgs.append({"role": "user", "content": self.input_object})
        return msgs


def build_prompt(input: CognitiveInput, config: PromptConfig) -> PromptBundle:
    shots = tuple(
        (serialize_input(i), serialize_decision(d)) for i, d in config.few_shot
    )
    return PromptBundle(
        system_persona=config.persona,
        few_shot_examples=shots,
        input_object=serialize_input(input),
    )


ENDPOINT_ENV = "SMART_TCP_MODEL_ENDPOINT"
KEY_ENV = "SMART_TCP_MODEL_KEY"


@dataclass
class RemoteConfig:
    endpoint: str
    model: str = "smart-tcp"
    api_key: Optional[str] = None
    temperature: float = 0.0
    timeout: float = 30.0

    @classmethod
    def from_env(cls, **overrides) -> "RemoteConfig":
        endpoint = overrides.pop("endpoint", None) or os.environ.get(ENDPOINT_ENV)
        if not endpoint:
            raise TransportError(f"no model endpoint configured ({ENDPOINT_ENV})")
        api_key = overrides.pop("api_key", None) or os.environ.get(KEY_ENV)
        return cls(endpoint=endpoint, api_key=api_key, **overrides)


class RemoteCore(CognitiveCore):
    """Chat-completion-style client for a trained cognitive model.

    Malformed output is retried once, then surfaces as MalformedDecision so
    callers can score it as a wrong prediction rather than crash.
    """

    name = "remote"

    def __init__(self, config: RemoteConfig, prompt_config: Optional[PromptConfig] = None):
        import requests

        self._requests = requests
        self.config = config
        self.prompt_config = prompt_config or PromptConfig(fine_tuned=True)
        self.malformed_count = 0
        self.request_count = 0

    def _complete(self, messages: List[dict]) -> str:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        body = {
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
        }
        try:
            resp = self._requests.post(
                self.config.endpoint, json=body, headers=headers, timeout=self.config.timeout
            )
            resp.raise_for_status()
            data = resp.json()
        except Exception as exc:
            raise TransportError(f"model endpoint failure: {exc}") from exc
        # Accept common response shapes.
        if isinstance(data, dict):
            choices = data.get("choices")
            if choices:
                first = choices[0]
                msg = first.get("message")
                if msg and "content" in msg:
                    return msg["content"]
                if "text" in first:
                    return first["text"]
            if "content" in data:
                return data["content"]
            if "text" in data:
                return data["text"]
        raise TransportError("unrecognized response body from model endpoint")

    def decide(self, input: CognitiveInput) -> CognitiveDecision:
        bundle = build_prompt(input, self.prompt_config)
        last_error: Optional[Exception] = None
        for _ in range(2):
            self.request_count += 1
            raw = self._complete(bundle.messages())
            try:
                return parse_decision(raw)
            except MalformedDecision as exc:
                last_error = exc
        self.malformed_count += 1
        raise MalformedDecision(str(last_error))
