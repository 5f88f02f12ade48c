"""Deterministic arithmetic tool for sequence/acknowledgment numbers.

The cognitive core never computes 32-bit values itself; it names a task and
this unit produces the exact numbers from the agent state and the received
segment. Stateless and pure: advancing snd_nxt afterwards is the caller's job.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .tcp_core import AgentState, Segment, seq_add, segment_consumes


class AluTask(Enum):
    INIT_SYN = "INIT_SYN"
    CALCULATE_ACK = "CALCULATE_ACK"
    CALCULATE_SEQ_ACK = "CALCULATE_SEQ_ACK"


class AluError(ValueError):
    """Bad task token or missing/superfluous received segment."""


@dataclass(frozen=True, slots=True)
class AluResult:
    seq: int
    ack: int


def alu_parse_task(token: str) -> AluTask:
    """Exact, case-sensitive match over the closed task vocabulary."""
    for task in AluTask:
        if token == task.value:
            return task
    raise AluError(f"unknown ALU task token: {token!r}")


def alu_execute(task: AluTask, s: AgentState, r: Optional[Segment] = None) -> AluResult:
    if task is AluTask.INIT_SYN:
        if r is not None:
            raise AluError("INIT_SYN takes no received segment")
        return AluResult(seq=s.iss, ack=0)
    if r is None:
        raise AluError(f"{task.value} requires a received segment")
    # CALCULATE_ACK and CALCULATE_SEQ_ACK compute identical numbers; the
    # distinction tells the caller whether the assembled segment will itself
    # consume sequence space.
    return AluResult(seq=s.snd_nxt, ack=seq_add(r.seq, segment_consumes(r)))
