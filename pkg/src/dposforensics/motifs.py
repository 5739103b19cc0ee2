"""Mutual-voting motif detection: linear, triangular, and eight-shaped
patterns within a sliding time window, with monthly occurrence series.

Vote events are the flattened voteproducer actions: a direct vote yields one
event per chosen candidate, and a proxy's vote additionally yields one event
per currently delegating account with the proxy recorded on the event.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

from .model import Action, ActionKind
from .metrics import utc_month
from .replay import VotingState, _Rejection, _check_sorted

DEFAULT_WINDOW = 7 * 86_400

LINEAR = "linear"
TRIANGULAR = "triangular"
EIGHT = "eight"


@dataclass(frozen=True)
class VoteEvent:
    src: str
    dst: str
    via_proxy: Optional[str]
    timestamp: int


@dataclass(frozen=True)
class MotifInstance:
    shape: str
    participants: tuple[str, ...]
    witnesses: tuple[VoteEvent, ...]

    @property
    def window_start(self) -> int:
        return min(e.timestamp for e in self.witnesses)


def build_vote_events(trace: Sequence[Action]) -> list[VoteEvent]:
    """Replay the trace and flatten applied voteproducer actions to events."""
    _check_sorted(list(trace))
    state = VotingState()
    events: list[VoteEvent] = []
    for action in trace:
        if action.kind is ActionKind.VOTE_PRODUCER and not action.payload["proxy"]:
            delegators = sorted(state.delegators.get(action.actor, ()))
            is_proxy = (action.actor in state.accounts
                        and state.accounts[action.actor].is_proxy)
            try:
                state.apply(action)
            except _Rejection:
                continue
            for cand in action.payload["producers"]:
                events.append(VoteEvent(action.actor, cand, None, action.timestamp))
                if is_proxy:
                    for delegator in delegators:
                        events.append(VoteEvent(delegator, cand, action.actor,
                                                action.timestamp))
        else:
            try:
                state.apply(action)
            except _Rejection:
                continue
    return events


def _index_events(events: Sequence[VoteEvent]):
    direct: dict[tuple[str, str], list[int]] = {}
    proxied: dict[tuple[str, str], list[tuple[int, str]]] = {}
    for e in events:
        if e.src == e.dst:
            continue  # self-votes carry no mutual-voting signal
        if e.via_proxy is None:
            direct.setdefault((e.src, e.dst), []).append(e.timestamp)
        else:
            proxied.setdefault((e.src, e.dst), []).append((e.timestamp, e.via_proxy))
    return direct, proxied


def _restrict(events: Sequence[VoteEvent],
              candidates: Optional[set[str]]) -> list[VoteEvent]:
    if candidates is None:
        return list(events)
    return [e for e in events if e.src in candidates and e.dst in candidates]


def detect_linear(events: Sequence[VoteEvent], window: int = DEFAULT_WINDOW,
                  candidates: Optional[set[str]] = None) -> list[MotifInstance]:
    """Pairs voting for each other directly within the window; one instance
    per (pair, UTC month of the earlier event)."""
    direct, _ = _index_events(_restrict(events, candidates))
    found: dict[tuple, MotifInstance] = {}
    for (a, b) in sorted(direct):
        if a >= b or (b, a) not in direct:
            continue
        for t1 in direct[(a, b)]:
            for t2 in direct[(b, a)]:
                if abs(t1 - t2) > window:
                    continue
                start = min(t1, t2)
                key = (a, b, utc_month(start))
                inst = MotifInstance(LINEAR, (a, b), (
                    VoteEvent(a, b, None, t1), VoteEvent(b, a, None, t2)))
                if key not in found or inst.window_start < found[key].window_start:
                    found[key] = inst
    return [found[k] for k in sorted(found)]


def detect_triangular(events: Sequence[VoteEvent], window: int = DEFAULT_WINDOW,
                      candidates: Optional[set[str]] = None) -> list[MotifInstance]:
    """Triples (a, p, b): a votes b through proxy p and b votes a directly,
    both within the window. Participants are role-ordered (a, p, b)."""
    direct, proxied = _index_events(_restrict(events, candidates))
    found: dict[tuple, MotifInstance] = {}
    for (a, b) in sorted(proxied):
        if (b, a) not in direct:
            continue
        for t1, p in proxied[(a, b)]:
            for t2 in direct[(b, a)]:
                if abs(t1 - t2) > window:
                    continue
                start = min(t1, t2)
                key = (a, p, b, utc_month(start))
                inst = MotifInstance(TRIANGULAR, (a, p, b), (
                    VoteEvent(a, b, p, t1), VoteEvent(b, a, None, t2)))
                if key not in found or inst.window_start < found[key].window_start:
                    found[key] = inst
    return [found[k] for k in sorted(found)]


def detect_eight(events: Sequence[VoteEvent], window: int = DEFAULT_WINDOW,
                 candidates: Optional[set[str]] = None,
                 distinct_proxies: bool = False) -> list[MotifInstance]:
    """Quadruples (a, p1, b, p2): a votes b through p1 and b votes a through
    p2, within the window. The same proxy account may fill both slots unless
    distinct_proxies is set. Canonical orientation puts min(a, b) first."""
    _, proxied = _index_events(_restrict(events, candidates))
    found: dict[tuple, MotifInstance] = {}
    for (a, b) in sorted(proxied):
        if a >= b or (b, a) not in proxied:
            continue
        for t1, p1 in proxied[(a, b)]:
            for t2, p2 in proxied[(b, a)]:
                if abs(t1 - t2) > window:
                    continue
                if distinct_proxies and p1 == p2:
                    continue
                start = min(t1, t2)
                key = (a, p1, b, p2, utc_month(start))
                inst = MotifInstance(EIGHT, (a, p1, b, p2), (
                    VoteEvent(a, b, p1, t1), VoteEvent(b, a, p2, t2)))
                if key not in found or inst.window_start < found[key].window_start:
                    found[key] = inst
    return [found[k] for k in sorted(found)]


def verify_instance(instance: MotifInstance, window: int = DEFAULT_WINDOW) -> bool:
    """Independent shape-predicate check over the witness events."""
    w = instance.witnesses
    if len(w) != 2:
        return False
    e1, e2 = w
    if abs(e1.timestamp - e2.timestamp) > window:
        return False
    if not (e1.src == e2.dst and e1.dst == e2.src and e1.src != e1.dst):
        return False
    if instance.shape == LINEAR:
        return e1.via_proxy is None and e2.via_proxy is None
    if instance.shape == TRIANGULAR:
        return e1.via_proxy is not None and e2.via_proxy is None
    if instance.shape == EIGHT:
        return e1.via_proxy is not None and e2.via_proxy is not None
    return False


def motif_series(instances: Sequence[MotifInstance]) -> dict[str, dict[tuple[int, int], int]]:
    """Monthly instance counts per shape, keyed by UTC month of window start."""
    series: dict[str, Counter] = {LINEAR: Counter(), TRIANGULAR: Counter(),
                                  EIGHT: Counter()}
    for inst in instances:
        series[inst.shape][utc_month(inst.window_start)] += 1
    return {shape: dict(sorted(counts.items())) for shape, counts in series.items()}
