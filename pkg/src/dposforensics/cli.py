"""Command-line entry point: generate synthetic ledgers, replay traces, and
run every analysis with standard default parameters baked into the flags.

Exit codes: 0 success, 2 usage/config error, 3 data error. Every JSON report
embeds the manifest (command, input digests, parameters) that produced it.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import sys
from pathlib import Path

import click

from . import __version__
from .clustering import (
    cluster_voters,
    creator_concordance,
    record_similarity,
    sample_voting_records,
    top_stakeholders,
)
from .gangs import GangError, run_pipeline
from .metrics import (
    MetricsError,
    monthly_production,
    powerlaw_exponent,
    production_entropy,
    producer_turnover,
    proxy_share_series,
    stake_distribution,
    top_share,
)
from .model import ActionKind, LedgerError, ParseError, load_headers, load_trace
from .motifs import (
    build_vote_events,
    detect_eight,
    detect_linear,
    detect_triangular,
    motif_series,
)
from .replay import ReplayError, replay, replay_with_snapshots
from .scoring import instance_score, pairwise_score
from .synth import (
    ConfigError,
    GenConfig,
    generate_ledger,
    monthly_sample_times,
)

EXIT_USAGE = 2
EXIT_DATA = 3


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _digest_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _manifest(command: str, inputs: dict[str, str], params: dict) -> dict:
    return {
        "command": command,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "digests": {k: _digest_file(v) for k, v in inputs.items()},
        "params": params,
        "version": __version__,
    }


def _out_dir(out: str | None) -> Path:
    path = Path(out or os.environ.get("DPOSF_OUT", "."))
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8")


def _load_trace_or_die(trace_path: str):
    try:
        return load_trace(trace_path)
    except ParseError as exc:
        _fail(EXIT_DATA, f"unreadable trace: {exc}")


def _replay_or_die(trace):
    try:
        return replay(trace)
    except (ReplayError, LedgerError) as exc:
        _fail(EXIT_DATA, f"unreplayable trace: {exc}")


def _snapshot_times(trace, cadence: str) -> list[int]:
    if not trace:
        return []
    start, end = trace[0].timestamp, trace[-1].timestamp + 1
    if cadence == "monthly":
        return monthly_sample_times(start, end)
    try:
        days = float(cadence)
    except ValueError:
        _fail(EXIT_USAGE, f"bad snapshot cadence '{cadence}' (use 'monthly' or days)")
    if days <= 0:
        _fail(EXIT_USAGE, "snapshot cadence must be positive")
    step = int(days * 86_400)
    return list(range(start + step - 1, end + step, step))


@click.group()
@click.version_option(__version__)
def main() -> None:
    """DPoS ledger forensics toolkit."""


@main.command()
@click.option("--config", "-c", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "-o", "out", default=None, help="Output directory")
def generate(config_path: str, out: str | None) -> None:
    """Generate a synthetic ledger with planted anomalies."""
    try:
        config = GenConfig.from_file(config_path)
        trace, headers, truth = generate_ledger(config)
    except ConfigError as exc:
        _fail(EXIT_USAGE, str(exc))
    out_dir = _out_dir(out)
    from .model import serialize_action, serialize_header
    trace_path = out_dir / "trace.jsonl"
    headers_path = out_dir / "headers.jsonl"
    trace_path.write_text("".join(serialize_action(a) + "\n" for a in trace),
                          encoding="utf-8")
    headers_path.write_text("".join(serialize_header(h) + "\n" for h in headers),
                            encoding="utf-8")
    manifest = _manifest("generate", {"config": config_path,
                                      "trace": str(trace_path),
                                      "headers": str(headers_path)},
                         {"seed": config.seed})
    truth["manifest"] = manifest
    _write_json(out_dir / "truth.json", truth)
    click.echo(f"wrote {trace_path}, {headers_path}, {out_dir / 'truth.json'}")


@main.command("replay")
@click.argument("trace_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "-o", default=None)
def replay_cmd(trace_path: str, out: str | None) -> None:
    """Replay a trace and write the canonical final state."""
    trace = _load_trace_or_die(trace_path)
    state, rejected = _replay_or_die(trace)
    out_dir = _out_dir(out)
    canonical = state.canonical_json()
    payload = {
        "manifest": _manifest("replay", {"trace": trace_path}, {}),
        "state_digest": hashlib.sha256(canonical.encode()).hexdigest(),
        "state": json.loads(canonical),
        "rejected": [{"block": r.action.block, "seq": r.action.seq,
                      "reason": r.reason} for r in rejected],
        "events": state.log,
    }
    _write_json(out_dir / "state.json", payload)
    click.echo(f"replayed {len(trace)} actions, {len(rejected)} rejected")


def _metric_params(entropy_n: str, top_stake_pct: float, cadence: str) -> dict:
    return {"entropy_n": entropy_n, "top_stake_pct": top_stake_pct,
            "snapshot_cadence": cadence}


def _run_metrics(trace, headers, out_dir: Path, manifest: dict,
                 entropy_n: str, top_stake_pct: float, cadence: str) -> dict:
    times = _snapshot_times(trace, cadence)
    _, _, snapshots = replay_with_snapshots(trace, times)

    ns: list[int | None] = []
    for token in entropy_n.split(","):
        token = token.strip()
        ns.append(None if token == "all" else int(token))
    production = monthly_production(headers)
    rows = []
    for month, counts in production.items():
        row: list = [f"{month[0]:04d}-{month[1]:02d}", sum(counts.values())]
        for n in ns:
            try:
                row.append(f"{production_entropy(counts, n):.9f}")
            except MetricsError:
                row.append("")
        rows.append(row)
    labels = ["all" if n is None else str(n) for n in ns]
    _write_csv(out_dir / "entropy.csv",
               ["month", "blocks"] + [f"entropy_n_{l}" for l in labels], rows)

    turnover = producer_turnover(headers)
    _write_csv(out_dir / "turnover.csv", ["month", "distinct", "cumulative"],
               [[f"{m[0]:04d}-{m[1]:02d}", turnover.monthly_counts[m], c]
                for m, c in turnover.cumulative_counts])
    _write_csv(out_dir / "active_days.csv", ["producer", "days"],
               [[p, d] for p, d in turnover.active_days.items()])

    share = proxy_share_series(snapshots)
    _write_csv(out_dir / "proxy_share.csv",
               ["timestamp", "count_share", "stake_share", "weight_share"],
               [[pt.timestamp, f"{pt.share:.9f}", f"{s.share:.9f}", f"{w.share:.9f}"]
                for pt, s, w in zip(share["count"], share["stake"], share["weight"])])

    summary: dict = {"manifest": manifest}
    if snapshots:
        final = snapshots[-1]
        dist = stake_distribution(final, accumulate_proxies=True)
        _write_csv(out_dir / "stake_distribution.csv",
                   ["rank", "account", "stake"],
                   [[i + 1, name, stake] for i, (name, stake) in enumerate(dist)])
        if dist:
            summary["top_share"] = top_share(dist, top_stake_pct)
            summary["top_share_pct"] = top_stake_pct
        try:
            alpha, r2 = powerlaw_exponent([s for _, s in dist if s > 0])
            summary["stake_powerlaw"] = {"alpha": alpha, "r_squared": r2}
        except MetricsError as exc:
            summary["stake_powerlaw"] = {"error": str(exc)}
    _write_json(out_dir / "metrics.json", summary)
    return summary


@main.command()
@click.argument("trace_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("headers_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "-o", default=None)
@click.option("--entropy-n", default="10,20,all", show_default=True)
@click.option("--top-stake-pct", default=0.05, show_default=True)
@click.option("--snapshot-cadence", default="monthly", show_default=True)
def metrics(trace_path, headers_path, out, entropy_n, top_stake_pct,
            snapshot_cadence) -> None:
    """Decentralization metrics: entropy, turnover, distributions, shares."""
    trace = _load_trace_or_die(trace_path)
    _replay_or_die(trace)
    try:
        headers = load_headers(headers_path)
    except ParseError as exc:
        _fail(EXIT_DATA, f"unreadable headers: {exc}")
    out_dir = _out_dir(out)
    manifest = _manifest("metrics", {"trace": trace_path, "headers": headers_path},
                         _metric_params(entropy_n, top_stake_pct, snapshot_cadence))
    _run_metrics(trace, headers, out_dir, manifest, entropy_n, top_stake_pct,
                 snapshot_cadence)
    click.echo(f"metrics written to {out_dir}")


def _run_cluster(trace, out_dir: Path, manifest: dict, theta: float,
                 top_stake_pct: float, cadence: str) -> dict:
    times = _snapshot_times(trace, cadence)
    _, _, snapshots = replay_with_snapshots(trace, times)
    if not snapshots:
        _fail(EXIT_DATA, "no snapshots; trace too short for the cadence")
    voters = top_stakeholders(snapshots[-1], top_stake_pct)
    records = sample_voting_records(snapshots, voters)
    clusters = cluster_voters(voters, records, theta)
    creators = {a.payload["created"]: a.payload["creator"]
                for a in trace if a.kind is ActionKind.NEW_ACCOUNT}
    concordance = creator_concordance(clusters, creators)
    payload = {"manifest": manifest, "n_voters": len(voters), "clusters": []}
    rows = []
    for i, (cluster, entry) in enumerate(zip(clusters, concordance)):
        members = sorted(cluster.members)
        sims = [record_similarity(records[a], records[b])
                for j, a in enumerate(members) for b in members[j + 1:]]
        mean_sim = sum(sims) / len(sims) if sims else 1.0
        payload["clusters"].append({
            "id": i,
            "seed": cluster.seed,
            "members": members,
            "mean_similarity": mean_sim,
            "creators": entry.creators,
            "single_creator": entry.single_creator,
        })
        rows.append([i, cluster.seed, len(members), f"{mean_sim:.6f}",
                     entry.single_creator, " ".join(members)])
    _write_json(out_dir / "clusters.json", payload)
    _write_csv(out_dir / "clusters.csv",
               ["id", "seed", "size", "mean_similarity", "single_creator", "members"],
               rows)
    return payload


@main.command()
@click.argument("trace_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "-o", default=None)
@click.option("--theta", default=0.9, show_default=True)
@click.option("--top-stake-pct", default=0.05, show_default=True)
@click.option("--snapshot-cadence", default="monthly", show_default=True)
def cluster(trace_path, out, theta, top_stake_pct, snapshot_cadence) -> None:
    """Similar-voting clusters among the top stakeholders."""
    if not 0 < theta <= 1:
        _fail(EXIT_USAGE, "theta out of range (0, 1]")
    trace = _load_trace_or_die(trace_path)
    _replay_or_die(trace)
    out_dir = _out_dir(out)
    manifest = _manifest("cluster", {"trace": trace_path},
                         {"theta": theta, "top_stake_pct": top_stake_pct,
                          "snapshot_cadence": snapshot_cadence})
    _run_cluster(trace, out_dir, manifest, theta, top_stake_pct, snapshot_cadence)
    click.echo(f"clusters written to {out_dir}")


def _run_motifs(trace, out_dir: Path, manifest: dict, window_days: float) -> dict:
    window = int(window_days * 86_400)
    events = build_vote_events(trace)
    state, _ = replay(trace)
    candidates = set(state.candidates)
    instances = (detect_linear(events, window, candidates)
                 + detect_triangular(events, window, candidates)
                 + detect_eight(events, window, candidates))
    lines = []
    for inst in instances:
        lines.append(json.dumps({
            "shape": inst.shape,
            "participants": list(inst.participants),
            "window_start": inst.window_start,
            "witnesses": [{"src": e.src, "dst": e.dst, "via_proxy": e.via_proxy,
                           "timestamp": e.timestamp} for e in inst.witnesses],
        }, sort_keys=True))
    (out_dir / "motifs.jsonl").write_text("".join(l + "\n" for l in lines),
                                          encoding="utf-8")
    series = motif_series(instances)
    months = sorted({m for counts in series.values() for m in counts})
    _write_csv(out_dir / "motif_series.csv",
               ["month", "linear", "triangular", "eight"],
               [[f"{m[0]:04d}-{m[1]:02d}",
                 series["linear"].get(m, 0),
                 series["triangular"].get(m, 0),
                 series["eight"].get(m, 0)] for m in months])
    summary = {"manifest": manifest,
               "counts": {shape: sum(c.values()) for shape, c in series.items()}}
    _write_json(out_dir / "motifs.json", summary)
    return {"instances": instances, "summary": summary}


@main.command()
@click.argument("trace_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "-o", default=None)
@click.option("--window-days", default=7.0, show_default=True)
def motifs(trace_path, out, window_days) -> None:
    """Mutual-voting motifs (linear, triangular, eight-shaped)."""
    if window_days <= 0:
        _fail(EXIT_USAGE, "window-days must be positive")
    trace = _load_trace_or_die(trace_path)
    _replay_or_die(trace)
    out_dir = _out_dir(out)
    manifest = _manifest("motifs", {"trace": trace_path},
                         {"window_days": window_days})
    _run_motifs(trace, out_dir, manifest, window_days)
    click.echo(f"motifs written to {out_dir}")


def _run_gangs(trace, out_dir: Path, manifest: dict, outlier_pct: float,
               seed: int) -> dict:
    try:
        report = run_pipeline(trace, outlier_pct=outlier_pct, seed=seed)
    except GangError as exc:
        _fail(EXIT_DATA, f"gang detection failed: {exc}")
    payload = {
        "manifest": manifest,
        "fit": {"coefficient": report.fit.coefficient, "alpha": report.fit.alpha},
        "scores": {k: report.scores[k] for k in sorted(report.scores)},
        "anomalies": report.anomalies,
        "modularity": report.modularity,
        "pruned": report.pruned,
        "communities": [sorted(c) for c in report.communities],
    }
    _write_json(out_dir / "gangs.json", payload)
    _write_csv(out_dir / "gang_scores.csv", ["account", "score"],
               [[k, f"{v:.9f}"] for k, v in sorted(report.scores.items())])
    return payload


@main.command()
@click.argument("trace_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "-o", default=None)
@click.option("--outlier-pct", default=0.10, show_default=True)
@click.option("--seed", default=0, show_default=True)
def gangs(trace_path, out, outlier_pct, seed) -> None:
    """Mutual-voting gang pipeline (egonet scoring, reconstruction, Louvain)."""
    if not 0 < outlier_pct <= 1:
        _fail(EXIT_USAGE, "outlier-pct out of range (0, 1]")
    trace = _load_trace_or_die(trace_path)
    _replay_or_die(trace)
    out_dir = _out_dir(out)
    manifest = _manifest("gangs", {"trace": trace_path},
                         {"outlier_pct": outlier_pct, "seed": seed})
    _run_gangs(trace, out_dir, manifest, outlier_pct, seed)
    click.echo(f"gang report written to {out_dir}")


@main.command("all")
@click.argument("trace_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("headers_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "-o", default=None)
@click.option("--theta", default=0.9, show_default=True)
@click.option("--window-days", default=7.0, show_default=True)
@click.option("--top-stake-pct", default=0.05, show_default=True)
@click.option("--outlier-pct", default=0.10, show_default=True)
@click.option("--entropy-n", default="10,20,all", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--snapshot-cadence", default="monthly", show_default=True)
def all_cmd(trace_path, headers_path, out, theta, window_days, top_stake_pct,
            outlier_pct, entropy_n, seed, snapshot_cadence) -> None:
    """Run every analysis and emit a cross-method overlap summary."""
    if not 0 < theta <= 1:
        _fail(EXIT_USAGE, "theta out of range (0, 1]")
    trace = _load_trace_or_die(trace_path)
    _replay_or_die(trace)
    try:
        headers = load_headers(headers_path)
    except ParseError as exc:
        _fail(EXIT_DATA, f"unreadable headers: {exc}")
    out_dir = _out_dir(out)
    params = {"theta": theta, "window_days": window_days,
              "top_stake_pct": top_stake_pct, "outlier_pct": outlier_pct,
              "entropy_n": entropy_n, "seed": seed,
              "snapshot_cadence": snapshot_cadence}
    manifest = _manifest("all", {"trace": trace_path, "headers": headers_path},
                         params)
    _run_metrics(trace, headers, out_dir, manifest, entropy_n, top_stake_pct,
                 snapshot_cadence)
    cluster_payload = _run_cluster(trace, out_dir, manifest, theta,
                                   top_stake_pct, snapshot_cadence)
    motif_result = _run_motifs(trace, out_dir, manifest, window_days)
    gang_payload = _run_gangs(trace, out_dir, manifest, outlier_pct, seed)

    cluster_members = {m for c in cluster_payload["clusters"] for m in c["members"]}
    motif_members = {p for inst in motif_result["instances"]
                     for p in inst.participants}
    gang_members = {m for c in gang_payload["communities"] for m in c}
    summary = {
        "manifest": manifest,
        "accounts": {
            "cluster": len(cluster_members),
            "motif": len(motif_members),
            "gang": len(gang_members),
        },
        "overlap": {
            "cluster_motif": len(cluster_members & motif_members),
            "cluster_gang": len(cluster_members & gang_members),
            "motif_gang": len(motif_members & gang_members),
            "all_three": len(cluster_members & motif_members & gang_members),
        },
    }
    _write_json(out_dir / "summary.json", summary)
    click.echo(f"full report written to {out_dir}")


@main.command()
@click.argument("report_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("truth_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "-o", default=None)
def score(report_dir, truth_path, out) -> None:
    """Score detection reports in REPORT_DIR against a truth file."""
    report_dir = Path(report_dir)
    truth = json.loads(Path(truth_path).read_text(encoding="utf-8"))
    truth_digest = truth.get("manifest", {}).get("digests", {}).get("trace")

    def load_report(name: str) -> dict | None:
        path = report_dir / name
        if not path.exists():
            return None
        payload = json.loads(path.read_text(encoding="utf-8"))
        digest = payload.get("manifest", {}).get("digests", {}).get("trace")
        if truth_digest and digest and digest != truth_digest:
            _fail(EXIT_USAGE,
                  f"{name} was produced from a different trace than the truth file")
        return payload

    clusters = load_report("clusters.json")
    gangs_report = load_report("gangs.json")
    motif_lines = []
    if (report_dir / "motifs.jsonl").exists():
        load_report("motifs.json")
        motif_lines = [json.loads(l) for l in
                       (report_dir / "motifs.jsonl").read_text().splitlines() if l]

    results: dict[str, dict] = {}
    by_kind: dict[str, list[dict]] = {}
    for plant in truth.get("plants", []):
        by_kind.setdefault(plant["kind"], []).append(plant)

    if "similar_cluster" in by_kind and clusters is not None:
        truth_groups = [p["members"] for p in by_kind["similar_cluster"]]
        detected = [c["members"] for c in clusters["clusters"]]
        s = pairwise_score(truth_groups, detected)
        results["similar_cluster"] = {"precision": s.precision, "recall": s.recall,
                                      "f1": s.f1}
    if "near_clique" in by_kind and gangs_report is not None:
        truth_groups = [p["members"] for p in by_kind["near_clique"]]
        s = pairwise_score(truth_groups, gangs_report["communities"])
        results["near_clique"] = {"precision": s.precision, "recall": s.recall,
                                  "f1": s.f1}
    motif_truth_keys = {"linear_gang": ("pairs", "linear"),
                        "triangular_gang": ("triples", "triangular"),
                        "eight_gang": ("quads", "eight")}
    for kind, (field, shape) in motif_truth_keys.items():
        if kind not in by_kind or not motif_lines:
            continue
        truth_instances = [inst for p in by_kind[kind] for inst in p[field]]
        detected = [m["participants"] for m in motif_lines if m["shape"] == shape]
        s = instance_score(truth_instances, detected)
        results[kind] = {"precision": s.precision, "recall": s.recall, "f1": s.f1}

    payload = {"manifest": _manifest("score", {"truth": truth_path}, {}),
               "scores": results}
    out_dir = _out_dir(out or str(report_dir))
    _write_json(out_dir / "score.json", payload)
    for kind, s in sorted(results.items()):
        click.echo(f"{kind}: P={s['precision']:.3f} R={s['recall']:.3f} "
                   f"F1={s['f1']:.3f}")


if __name__ == "__main__":
    main()
