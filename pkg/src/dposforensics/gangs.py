"""Mutual-voting gang detection pipeline.

Three steps over the voting network: near-clique anomaly scoring on candidate
egonets against an egonet-density power-law fit, intensity-weighted
reconstruction around the anomalies, and weighted Louvain community
detection with single-edge pruning.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import networkx as nx
import numpy as np

from .model import Action, ActionKind, compute_vote_index, compute_vote_weight
from .replay import VotingState, _Rejection, _check_sorted


class GangError(Exception):
    pass


@dataclass
class EdgeStats:
    """Aggregate of one directed voting relation src -> dst."""

    placements: int = 0          # distinct vote placements (F)
    duration: float = 0.0        # cumulative seconds the vote was in force (T)
    weight_integral: float = 0.0  # integral of weight over in-force time
    last_weight: float = 0.0     # weight at the most recent (re)placement

    @property
    def avg_weight(self) -> float:
        """Time-averaged in-force weight (P); falls back to the placement
        weight when no time has accrued."""
        if self.duration > 0:
            return self.weight_integral / self.duration
        return self.last_weight


@dataclass
class VotingGraph:
    edges: dict[tuple[str, str], EdgeStats] = field(default_factory=dict)
    candidates: set[str] = field(default_factory=set)

    @property
    def nodes(self) -> set[str]:
        names = set()
        for src, dst in self.edges:
            names.add(src)
            names.add(dst)
        return names

    def undirected_simple(self) -> nx.Graph:
        g = nx.Graph()
        for src, dst in sorted(self.edges):
            g.add_edge(src, dst)
        return g


@dataclass
class _OpenEdge:
    seg_start: float
    weight: float


class _NetworkBuilder:
    """Tracks, per directed pair, the intervals each vote was in force and the
    weight over those intervals, while folding the trace through a state."""

    def __init__(self) -> None:
        self.state = VotingState()
        self.graph = VotingGraph()
        self.open: dict[str, dict[str, _OpenEdge]] = {}

    def _desired(self, src: str) -> tuple[set[str], float]:
        """Current effective targets of src and its per-target weight."""
        state = self.state
        acct = state.accounts.get(src)
        if acct is None:
            return set(), 0.0
        if acct.proxy is not None:
            proxy = state.accounts.get(acct.proxy)
            if proxy is None or not proxy.is_proxy or proxy.last_vote_time is None:
                return set(), 0.0
            targets = {c for c in proxy.votes if c != src}
            weight = compute_vote_weight(
                acct.stake, compute_vote_index(proxy.last_vote_time))
            return targets, weight
        if not acct.votes or acct.last_vote_time is None:
            return set(), 0.0
        targets = {c for c in acct.votes if c != src}
        weight = compute_vote_weight(
            acct.stake, compute_vote_index(acct.last_vote_time))
        return targets, weight

    def _stats(self, src: str, dst: str) -> EdgeStats:
        return self.graph.edges.setdefault((src, dst), EdgeStats())

    def _close(self, src: str, dst: str, t: float) -> None:
        edge = self.open[src].pop(dst)
        stats = self._stats(src, dst)
        stats.duration += t - edge.seg_start
        stats.weight_integral += edge.weight * (t - edge.seg_start)

    def _reconcile(self, src: str, t: float, replaced: bool) -> None:
        """Bring src's open edges in line with its current effective votes.

        replaced=True marks a fresh vote placement: continuing targets count
        as a new placement too.
        """
        desired, weight = self._desired(src)
        open_edges = self.open.setdefault(src, {})
        for dst in sorted(set(open_edges) - desired):
            self._close(src, dst, t)
        for dst in sorted(desired):
            edge = open_edges.get(dst)
            stats = self._stats(src, dst)
            if edge is None:
                open_edges[dst] = _OpenEdge(seg_start=t, weight=weight)
                stats.placements += 1
                stats.last_weight = weight
            else:
                if replaced:
                    stats.placements += 1
                    stats.last_weight = weight
                if edge.weight != weight:
                    stats.duration += t - edge.seg_start
                    stats.weight_integral += edge.weight * (t - edge.seg_start)
                    edge.seg_start = t
                    edge.weight = weight

    def _affected(self, action: Action) -> tuple[list[str], bool]:
        state = self.state
        actor = action.actor
        if action.kind in (ActionKind.DELEGATE_BW, ActionKind.UNDELEGATE_BW):
            return [actor], False
        if action.kind is ActionKind.REG_PROXY:
            return [actor] + sorted(state.delegators.get(actor, ())), False
        if action.kind is ActionKind.VOTE_PRODUCER:
            affected = [actor] + sorted(state.delegators.get(actor, ()))
            return affected, not action.payload["proxy"]
        return [], False

    def feed(self, action: Action) -> None:
        try:
            self.state.apply(action)
        except _Rejection:
            return
        affected, replaced = self._affected(action)
        for src in affected:
            self._reconcile(src, action.timestamp, replaced)

    def finish(self, end_time: float) -> VotingGraph:
        for src in sorted(self.open):
            for dst in sorted(self.open[src]):
                self._close(src, dst, end_time)
        self.graph.candidates = set(self.state.candidates)
        return self.graph


def build_voting_network(trace: Sequence[Action],
                         end_time: Optional[float] = None) -> VotingGraph:
    """Aggregate the trace into a directed voting graph with per-edge
    placement count, in-force duration, and time-averaged weight."""
    trace = list(trace)
    _check_sorted(trace)
    builder = _NetworkBuilder()
    for action in trace:
        builder.feed(action)
    if end_time is None:
        end_time = trace[-1].timestamp if trace else 0.0
    return builder.finish(end_time)


@dataclass(frozen=True)
class EgonetFeature:
    node: str
    neighbors: int   # N_i
    edges: int       # E_i, ego included


@dataclass(frozen=True)
class EdplFit:
    coefficient: float  # C
    alpha: float

    def expected_edges(self, neighbors: int) -> float:
        return self.coefficient * neighbors ** self.alpha


def egonet_features(graph: VotingGraph,
                    scope: Optional[Sequence[str]] = None) -> list[EgonetFeature]:
    """Neighbor and egonet-edge counts on the undirected simple view; scope
    defaults to the candidate nodes present in the graph."""
    g = graph.undirected_simple()
    if scope is None:
        scope = sorted(graph.candidates & set(g.nodes))
    features = []
    for node in sorted(scope):
        if node not in g:
            continue
        nbrs = set(g.neighbors(node))
        if not nbrs:
            continue
        ego = g.subgraph(nbrs | {node})
        features.append(EgonetFeature(node=node, neighbors=len(nbrs),
                                      edges=ego.number_of_edges()))
    return features


def fit_edpl(features: Sequence[EgonetFeature]) -> EdplFit:
    """Least-squares log-log fit of egonet edges against neighbor count.

    Nodes with a single neighbor are excluded (E is forced to 1 there) but
    still receive outlierness scores downstream.
    """
    points = [(f.neighbors, f.edges) for f in features if f.neighbors >= 2]
    if len(points) < 10:
        raise GangError(
            f"need at least 10 egonets with N >= 2 for the fit, got {len(points)}")
    x = np.log([n for n, _ in points])
    y = np.log([e for _, e in points])
    slope, intercept = np.polyfit(x, y, 1)
    return EdplFit(coefficient=float(math.exp(intercept)), alpha=float(slope))


def outlierness(features: Sequence[EgonetFeature], fit: EdplFit,
                log_base: float = math.e) -> dict[str, float]:
    """Near-clique outlierness: deviation ratio from the fit line times the
    log distance. Zero exactly on the line."""
    scores = {}
    for f in features:
        expected = fit.expected_edges(f.neighbors)
        hi, lo = max(f.edges, expected), min(f.edges, expected)
        ratio = hi / lo if lo > 0 else float("inf")
        scores[f.node] = ratio * math.log(abs(f.edges - expected) + 1.0, log_base)
    return scores


def select_anomalies(features: Sequence[EgonetFeature], fit: EdplFit,
                     scores: Mapping[str, float], pct: float = 0.10) -> list[str]:
    """Top-pct scorers (ceiling on the count over all scored nodes) among
    nodes sitting above the fit line."""
    if not 0 < pct <= 1:
        raise GangError(f"pct must be in (0, 1], got {pct}")
    k = math.ceil(pct * len(scores))
    above = [f.node for f in features
             if f.edges > fit.expected_edges(f.neighbors)]
    above.sort(key=lambda n: (-scores[n], n))
    return above[:k]


def reconstruct_weighted_network(graph: VotingGraph,
                                 anomalies: Sequence[str]) -> nx.Graph:
    """Undirected network over candidate nodes inside the anomalies' egonets,
    weighted by the symmetrized voting intensity.

    Intensity i->j averages three shares computed on the FULL directed graph:
    i's placement count toward j over i's total placements, and j's received
    duration / average-weight from i over j's totals.
    """
    if not anomalies:
        raise GangError("nothing to reconstruct: empty anomaly set")
    g = graph.undirected_simple()
    kept: set[str] = set()
    for node in anomalies:
        if node not in g:
            continue
        kept.add(node)
        kept |= set(g.neighbors(node))
    kept &= graph.candidates

    out_f: dict[str, float] = {}
    in_t: dict[str, float] = {}
    in_p: dict[str, float] = {}
    for (src, dst), stats in graph.edges.items():
        out_f[src] = out_f.get(src, 0.0) + stats.placements
        in_t[dst] = in_t.get(dst, 0.0) + stats.duration
        in_p[dst] = in_p.get(dst, 0.0) + stats.avg_weight

    def intensity(src: str, dst: str) -> float:
        stats = graph.edges.get((src, dst))
        if stats is None:
            return 0.0
        f_share = stats.placements / out_f[src] if out_f[src] > 0 else 0.0
        t_share = stats.duration / in_t[dst] if in_t[dst] > 0 else 0.0
        p_share = stats.avg_weight / in_p[dst] if in_p[dst] > 0 else 0.0
        return (f_share + t_share + p_share) / 3.0

    h = nx.Graph()
    h.add_nodes_from(sorted(kept))
    pairs = {tuple(sorted((s, d))) for (s, d) in graph.edges
             if s in kept and d in kept}
    for a, b in sorted(pairs):
        h.add_edge(a, b, weight=intensity(a, b) + intensity(b, a))
    return h


@dataclass(frozen=True)
class GangReport:
    communities: list[frozenset[str]]
    modularity: float
    pruned: list[str]
    fit: Optional[EdplFit] = None
    scores: dict[str, float] = field(default_factory=dict)
    anomalies: list[str] = field(default_factory=list)


def detect_gangs(weighted: nx.Graph, seed: int = 0) -> GangReport:
    """Weighted Louvain communities, then drop single-edge members and emit
    communities keeping at least two members."""
    if weighted.number_of_nodes() == 0:
        raise GangError("empty reconstructed network")
    partition = nx.community.louvain_communities(
        weighted, weight="weight", resolution=1.0, seed=seed)
    modularity = nx.community.modularity(weighted, partition, weight="weight") \
        if weighted.number_of_edges() else 0.0
    pruned = sorted(n for n in weighted.nodes if weighted.degree(n) == 1)
    pruned_set = set(pruned)
    communities = []
    for group in partition:
        remaining = frozenset(group - pruned_set)
        if len(remaining) >= 2:
            communities.append(remaining)
    communities.sort(key=lambda c: sorted(c))
    return GangReport(communities=communities, modularity=float(modularity),
                      pruned=pruned)


def run_pipeline(trace: Sequence[Action], outlier_pct: float = 0.10,
                 seed: int = 0) -> GangReport:
    """Full three-step pipeline from a raw trace to a gang report."""
    graph = build_voting_network(trace)
    features = egonet_features(graph)
    fit = fit_edpl(features)
    scores = outlierness(features, fit)
    anomalies = select_anomalies(features, fit, scores, pct=outlier_pct)
    if not anomalies:
        return GangReport(communities=[], modularity=0.0, pruned=[], fit=fit,
                          scores=scores, anomalies=[])
    weighted = reconstruct_weighted_network(graph, anomalies)
    report = detect_gangs(weighted, seed=seed)
    return GangReport(communities=report.communities, modularity=report.modularity,
                      pruned=report.pruned, fit=fit, scores=scores,
                      anomalies=anomalies)
