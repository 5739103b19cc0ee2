"""Similarity-based voter clustering over sampled voting records.

Records are per-voter sequences of proxy-resolved candidate sets, one per
sample time. Pair similarity is the mean per-time Jaccard coefficient with
both-empty times excluded; clusters come from a threshold-graph traversal
seeded at each unvisited voter, emitting only clusters of size >= 2.
"""
from __future__ import annotations

import math
from collections import Counter, deque
from dataclasses import dataclass
from typing import Mapping, Sequence

from .replay import VotingSnapshot


class ClusteringError(Exception):
    pass


@dataclass(frozen=True)
class VotingRecord:
    voter: str
    sets: tuple[frozenset[str], ...]


@dataclass(frozen=True)
class VoterCluster:
    members: frozenset[str]
    seed: str


def sample_voting_records(snapshots: Sequence[VotingSnapshot],
                          voters: Sequence[str] | None = None) -> dict[str, VotingRecord]:
    """Per-voter effective candidate set at each snapshot; absent voters get
    the empty set. voters=None takes every account seen in any snapshot."""
    if voters is None:
        names = sorted({v for snap in snapshots for v in snap.per_voter})
    else:
        names = sorted(set(voters))
    records = {}
    for name in names:
        sets = []
        for snap in snapshots:
            entry = snap.per_voter.get(name)
            sets.append(entry.effective if entry is not None else frozenset())
        records[name] = VotingRecord(voter=name, sets=tuple(sets))
    return records


def record_similarity(a: VotingRecord, b: VotingRecord) -> float:
    """Mean Jaccard over sample times; both-empty times are excluded from the
    mean, and all-both-empty pairs score 0."""
    if len(a.sets) != len(b.sets):
        raise ClusteringError(
            f"record lengths differ: {len(a.sets)} vs {len(b.sets)}")
    total = 0.0
    counted = 0
    for sa, sb in zip(a.sets, b.sets):
        if not sa and not sb:
            continue
        counted += 1
        union = len(sa | sb)
        if union:
            total += len(sa & sb) / union
    return total / counted if counted else 0.0


class _NeighborIndex:
    """Lazy theta-neighbor lookup with an inverted candidate index so voters
    sharing no candidate at any time are never compared."""

    def __init__(self, records: Mapping[str, VotingRecord], theta: float):
        self.records = records
        self.theta = theta
        self._cache: dict[str, list[str]] = {}
        self._by_candidate: dict[tuple[int, str], set[str]] = {}
        self._active: dict[str, bool] = {}
        for name, record in records.items():
            active = False
            for t, s in enumerate(record.sets):
                for cand in s:
                    self._by_candidate.setdefault((t, cand), set()).add(name)
                active = active or bool(s)
            self._active[name] = active

    def neighbors(self, name: str) -> list[str]:
        cached = self._cache.get(name)
        if cached is not None:
            return cached
        record = self.records[name]
        candidates: set[str] = set()
        for t, s in enumerate(record.sets):
            for cand in s:
                candidates |= self._by_candidate[(t, cand)]
        candidates.discard(name)
        result = sorted(
            other for other in candidates
            if record_similarity(record, self.records[other]) >= self.theta)
        self._cache[name] = result
        return result


def cluster_voters(voters: Sequence[str], records: Mapping[str, VotingRecord],
                   theta: float = 0.9) -> list[VoterCluster]:
    """Threshold-graph clustering: each unvisited voter opens a cluster,
    absorbs its theta-neighbors, and the frontier grows with each absorbed
    member's own neighbors. Voters with no activity at any sample time never
    cluster (their pairwise similarity is 0 by convention)."""
    if not 0 < theta <= 1:
        raise ClusteringError(f"theta must be in (0, 1], got {theta}")
    missing = [v for v in voters if v not in records]
    if missing:
        raise ClusteringError(f"no record for voter '{missing[0]}'")
    voter_set = set(voters)
    index = _NeighborIndex({v: records[v] for v in voters}, theta)
    visited: set[str] = set()
    clusters: list[VoterCluster] = []
    for center in sorted(voter_set):
        if center in visited:
            continue
        visited.add(center)
        members = {center}
        frontier = deque(n for n in index.neighbors(center) if n in voter_set)
        queued = set(frontier)
        while frontier:
            voter = frontier.popleft()
            if voter in visited:
                continue
            visited.add(voter)
            members.add(voter)
            for neighbor in index.neighbors(voter):
                if neighbor in voter_set and neighbor not in queued:
                    frontier.append(neighbor)
                    queued.add(neighbor)
        if len(members) > 1:
            clusters.append(VoterCluster(members=frozenset(members), seed=center))
    return clusters


@dataclass(frozen=True)
class ConcordanceEntry:
    creators: dict[str, int]
    single_creator: bool


def creator_concordance(clusters: Sequence[VoterCluster],
                        creation: Mapping[str, str],
                        unknown: str = "<genesis>") -> list[ConcordanceEntry]:
    """Per cluster, the creator multiset of its members and whether a single
    creator made them all. Accounts missing from the map get the sentinel."""
    entries = []
    for cluster in clusters:
        counter = Counter(creation.get(m, unknown) for m in sorted(cluster.members))
        entries.append(ConcordanceEntry(
            creators=dict(sorted(counter.items())),
            single_creator=len(counter) == 1,
        ))
    return entries


def top_stakeholders(snapshot: VotingSnapshot, pct: float = 0.05) -> list[str]:
    """Top pct of voters by stake, proxies ranked with delegated stake added."""
    if not 0 < pct <= 1:
        raise ClusteringError(f"pct must be in (0, 1], got {pct}")
    ranked = []
    for name, voter in snapshot.per_voter.items():
        stake = voter.stake + (voter.proxied_stake if voter.is_proxy else 0)
        ranked.append((name, stake))
    ranked.sort(key=lambda kv: (-kv[1], kv[0]))
    k = math.ceil(pct * len(ranked))
    return [name for name, _ in ranked[:k]]
