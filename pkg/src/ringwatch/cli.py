"""Command-line pipeline: ingest -> graph -> communities -> detect ->
evaluate, plus the synthetic generators and baselines.

Every command logs to stderr, writes data only to its declared output
paths, and drops a JSON manifest next to its primary output.  Exit
codes: 0 success, 1 data/validation error, 2 usage error.
"""

from __future__ import annotations

import functools
import logging
import sys
import time
from datetime import date, timedelta
from pathlib import Path

import click

from . import corpus, detectors, evaluation, graph as graphmod, louvain as louvainmod
from . import report as reportmod
from . import synth as synthmod
from . import textsim as textsimmod
from .errors import ConfigError, RingwatchError
from .manifest import RunManifest, manifest_path_for, read_manifest, write_manifest

log = logging.getLogger("ringwatch")

try:
    from importlib.metadata import version as _dist_version

    VERSION = _dist_version("ringwatch")
except Exception:  # pragma: no cover - only hit on uninstalled source trees
    VERSION = "0.0.0"


def _friendly(fn):
    """Convert package errors into exit-code-1 CLI failures."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except RingwatchError as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


class _Run:
    """Collects manifest fields while a command executes."""

    def __init__(self, command: str, **parameters):
        self.manifest = RunManifest(
            command=command,
            parameters={k: v for k, v in parameters.items() if v not in (None, ())},
            tool_version=VERSION,
        )
        self._started = time.perf_counter()

    def input(self, name: str, path) -> None:
        if path is not None:
            self.manifest.inputs[name] = str(path)

    def output(self, path) -> None:
        self.manifest.outputs.append(str(path))

    def finish(self, primary_output, seed: int | None = None, preset: str | None = None) -> None:
        self.manifest.seed = seed
        self.manifest.preset = preset
        self.manifest.duration_seconds = round(time.perf_counter() - self._started, 6)
        path = write_manifest(self.manifest, primary_output)
        log.info("manifest written to %s", path)


@click.group()
@click.version_option(VERSION, prog_name="ringwatch")
@click.option("--verbose", is_flag=True, help="Enable debug logging on stderr.")
def main(verbose: bool) -> None:
    """Detect reputation gaming in Q&A forum dumps."""
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command()
@click.option("--in", "source", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Posts dump to parse.")
@click.option("--format", "fmt", type=click.Choice(["se-xml", "jsonl"]), default="se-xml",
              show_default=True)
@click.option("--out-posts", required=True, type=click.Path(dir_okay=False))
@click.option("--out-table", required=True, type=click.Path(dir_okay=False))
@_friendly
def ingest(source: str, fmt: str, out_posts: str, out_table: str) -> None:
    """Parse a dump into canonical posts and the mutual-answer table."""
    run = _Run("ingest", format=fmt)
    run.input("posts", source)
    parsed = corpus.parse_posts(source, format=fmt)
    if parsed.skipped_total:
        log.info("skipped %d rows: %s", parsed.skipped_total, parsed.skipped)
        for line in parsed.diagnostics[:10]:
            log.debug("skip: %s", line)
    table = corpus.build_interaction_table(parsed.posts)
    if table.dropped_total:
        log.info("dropped %d answer events: %s", table.dropped_total, table.dropped)
    n_posts = corpus.write_posts_jsonl(parsed.posts, out_posts)
    n_records = corpus.write_table_jsonl(table.records, out_table)
    log.info("wrote %d posts and %d interaction records", n_posts, n_records)
    run.output(out_posts)
    run.output(out_table)
    run.finish(out_posts)


@main.command("graph")
@click.option("--table", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@_friendly
def graph_cmd(table: str, out: str) -> None:
    """Build the interaction graph edge list from a table file."""
    run = _Run("graph")
    run.input("table", table)
    records = corpus.read_table_jsonl(table)
    g = graphmod.build_graph(records)
    count = graphmod.write_edges_jsonl(g, out)
    log.info("graph: %d nodes, %d edges", len(g.nodes), count)
    run.output(out)
    run.finish(out)


@main.command()
@click.option("--edges", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--epsilon", type=float, default=1e-12, show_default=True,
              help="Minimum modularity gain accepted as an improvement.")
@click.option("--max-passes", type=int, default=32, show_default=True)
@_friendly
def communities(edges: str, out: str, epsilon: float, max_passes: int) -> None:
    """Partition the interaction graph into communities."""
    run = _Run("communities", epsilon=epsilon, max_passes=max_passes)
    run.input("edges", edges)
    g = graphmod.read_edges_jsonl(edges)
    partition = louvainmod.louvain(
        g, louvainmod.LouvainConfig(epsilon=epsilon, max_passes=max_passes)
    )
    louvainmod.write_partition_csv(partition, out)
    log.info(
        "%d communities over %d nodes, Q=%.6f",
        partition.n_communities, len(partition.assignment), partition.modularity_q,
    )
    run.output(out)
    run.finish(out)


@main.group()
def detect() -> None:
    """Run a suspicion detector."""


@detect.command("community")
@click.option("--edges", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--partition", "partition_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--preset", type=click.Choice(sorted(detectors.COMMUNITY_PRESETS,
              key=lambda n: int(n[1:]))), default=None)
@click.option("--detector", "detector_name",
              type=click.Choice([detectors.GC_V1, detectors.GC_V2, detectors.GC_V3]),
              default=None, help="Required when no preset is given.")
@click.option("--tau-l", type=int, default=None, help="Minimum internal edge count.")
@click.option("--tau-t-hours", type=float, default=None, help="Maximum answer latency.")
@click.option("--tau-qb", type=float, default=None)
@click.option("--tau-qc", type=float, default=None)
@click.option("--tau-ab", type=float, default=None)
@click.option("--tau-ac", type=float, default=None)
@click.option("--mode", type=click.Choice(["body", "code"]), default="body",
              show_default=True, help="Similarity mode for GC_V3.")
@click.option("--require-answer-similarity", is_flag=True)
@click.option("--table", "table_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Interaction table (needed by GC_V3).")
@_friendly
def detect_community_cmd(edges, partition_path, out, preset, detector_name, tau_l,
                         tau_t_hours, tau_qb, tau_qc, tau_ab, tau_ac, mode,
                         require_answer_similarity, table_path) -> None:
    """Flag suspicious communities on a partitioned interaction graph."""
    if preset is not None:
        if detector_name is not None:
            raise click.UsageError("--preset and --detector are mutually exclusive")
        detector_name, config = detectors.community_preset(preset)
    else:
        if detector_name is None:
            raise click.UsageError("either --preset or --detector is required")
        config = detectors.CommunityDetectorConfig(
            tau_l=tau_l,
            tau_t=timedelta(hours=tau_t_hours) if tau_t_hours is not None else None,
            tau_qb=tau_qb, tau_qc=tau_qc, tau_ab=tau_ab, tau_ac=tau_ac,
            similarity_mode=mode,
            require_answer_similarity=require_answer_similarity,
        )
    run = _Run("detect community", **config.snapshot(detector_name))
    run.input("edges", edges)
    run.input("partition", partition_path)
    g = graphmod.read_edges_jsonl(edges)
    partition = louvainmod.read_partition_csv(partition_path)
    source = None
    if detector_name == detectors.GC_V3:
        if table_path is None:
            raise ConfigError("GC_V3 needs --table to read post bodies from")
        run.input("table", table_path)
        source = textsimmod.TableSimilaritySource(corpus.read_table_jsonl(table_path))
    reports = detectors.detect_community(g, partition, detector_name, config, source)
    detectors.write_reports_jsonl(reports, out)
    log.info("%s flagged %d communities", detector_name, len(reports))
    run.output(out)
    run.finish(out, preset=preset)


@detect.command("user")
@click.option("--snapshots", "snapshots_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--preset", type=click.Choice(sorted(detectors.JUMP_PRESETS)), default=None)
@click.option("--tau-r", type=float, default=None, help="Deviation-ratio threshold.")
@click.option("--tau-m-months", type=int, default=3, show_default=True,
              help="Activity window before the newer dump.")
@click.option("--dump-m", default=None, help="Newer dump label (default: newest).")
@click.option("--dump-n", default=None, help="Older dump label (default: second newest).")
@_friendly
def detect_user_cmd(snapshots_path, out, preset, tau_r, tau_m_months, dump_m, dump_n) -> None:
    """Flag users with anomalous reputation growth between two dumps."""
    if preset is not None:
        if tau_r is not None:
            raise click.UsageError("--preset and --tau-r are mutually exclusive")
        config = detectors.jump_preset(preset, tau_m_months=tau_m_months,
                                       dump_m=dump_m, dump_n=dump_n)
    else:
        if tau_r is None:
            raise click.UsageError("either --preset or --tau-r is required")
        config = detectors.UserDetectorConfig(
            tau_r=tau_r, tau_m_months=tau_m_months, dump_m=dump_m, dump_n=dump_n
        )
    run = _Run("detect user", **config.snapshot())
    run.input("snapshots", snapshots_path)
    snapshots = corpus.load_snapshots(snapshots_path)
    reports = detectors.detect_suspicious_users(snapshots, config)
    detectors.write_reports_jsonl(reports, out)
    log.info("jump detector flagged %d users", len(reports))
    run.output(out)
    run.finish(out, preset=preset)


@main.group()
def baseline() -> None:
    """Above-average jump/drop baselines."""


def _baseline_cmd(direction: str, snapshots_path, out, dump_m, dump_n, tau_m_months) -> None:
    run = _Run(f"baseline {direction}", dump_m=dump_m, dump_n=dump_n,
               tau_m_months=tau_m_months)
    run.input("snapshots", snapshots_path)
    snapshots = corpus.load_snapshots(snapshots_path)
    fn = detectors.baseline_up if direction == "up" else detectors.baseline_down
    reports = fn(snapshots, dump_m=dump_m, dump_n=dump_n, tau_m_months=tau_m_months)
    detectors.write_reports_jsonl(reports, out)
    log.info("baseline %s flagged %d users", direction, len(reports))
    run.output(out)
    run.finish(out)


@baseline.command("up")
@click.option("--snapshots", "snapshots_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--dump-m", default=None)
@click.option("--dump-n", default=None)
@click.option("--tau-m-months", type=int, default=3, show_default=True)
@_friendly
def baseline_up_cmd(snapshots_path, out, dump_m, dump_n, tau_m_months) -> None:
    """Flag users whose gain beats the mean positive gain."""
    _baseline_cmd("up", snapshots_path, out, dump_m, dump_n, tau_m_months)


@baseline.command("down")
@click.option("--snapshots", "snapshots_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--dump-m", default=None)
@click.option("--dump-n", default=None)
@click.option("--tau-m-months", type=int, default=3, show_default=True)
@_friendly
def baseline_down_cmd(snapshots_path, out, dump_m, dump_n, tau_m_months) -> None:
    """Flag users whose drop beats the mean drop magnitude."""
    _baseline_cmd("down", snapshots_path, out, dump_m, dump_n, tau_m_months)


@main.group()
def synth() -> None:
    """Generate synthetic corpora with planted fraud."""


def _parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("yes", "true", "1", "on"):
        return True
    if lowered in ("no", "false", "0", "off"):
        return False
    raise ConfigError(f"cannot read {value!r} as a boolean")


def _parse_ring_spec(text: str) -> synthmod.RingSpec:
    """Parse 'members=3,interactions=12,accepted=yes,latency-hours=24,
    clone=yes,type=thread' into a RingSpec."""
    kwargs: dict = {}
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        key, _, value = chunk.partition("=")
        key = key.strip().lower().replace("-", "_")
        if not value:
            value = "yes"
        if key in ("members", "member_count"):
            kwargs["member_count"] = int(value)
        elif key in ("interactions", "interaction_count"):
            kwargs["interaction_count"] = int(value)
        elif key in ("accepted", "all_accepted"):
            kwargs["all_accepted"] = _parse_bool(value)
        elif key in ("latency_hours", "max_latency_hours"):
            kwargs["max_latency"] = timedelta(hours=float(value))
        elif key in ("clone", "clone_questions"):
            kwargs["clone_questions"] = _parse_bool(value)
        elif key in ("type", "ring_type"):
            name = value.strip().lower()
            if name in ("thread", "thread_ring"):
                kwargs["ring_type"] = synthmod.THREAD_RING
            elif name in ("serial", "serial_ring"):
                kwargs["ring_type"] = synthmod.SERIAL_RING
            else:
                raise ConfigError(f"unknown ring type {value!r}")
        else:
            raise ConfigError(f"unknown ring spec key {key!r}")
    if "member_count" not in kwargs or "interaction_count" not in kwargs:
        raise ConfigError("ring spec needs at least members=K,interactions=N")
    return synthmod.RingSpec(**kwargs)


@synth.command("forum")
@click.option("--honest-users", type=int, required=True)
@click.option("--honest-questions", type=int, required=True)
@click.option("--ring", "rings", multiple=True,
              help="Ring spec, e.g. members=3,interactions=12,accepted=yes.")
@click.option("--seed", type=int, required=True)
@click.option("--out-posts", required=True, type=click.Path(dir_okay=False))
@click.option("--out-truth", required=True, type=click.Path(dir_okay=False))
@_friendly
def synth_forum(honest_users, honest_questions, rings, seed, out_posts, out_truth) -> None:
    """Generate a posts corpus with planted voting rings."""
    run = _Run("synth forum", honest_users=honest_users,
               honest_questions=honest_questions, rings=list(rings))
    specs = [_parse_ring_spec(text) for text in rings]
    result = synthmod.generate_forum(honest_users, honest_questions, specs, seed)
    corpus.write_posts_jsonl(result.posts, out_posts)
    synthmod.write_truth_json(result.truth, out_truth)
    log.info(
        "forum: %d posts, %d planted communities, %d removal events",
        len(result.posts), len(result.truth.fraud_communities),
        len(result.truth.removal_events),
    )
    run.output(out_posts)
    run.output(out_truth)
    run.finish(out_posts, seed=seed)


@synth.command("snapshots")
@click.option("--users", type=int, required=True)
@click.option("--labels", default="d1,d2", show_default=True,
              help="Comma-separated dump labels, optionally label=YYYY-MM-DD.")
@click.option("--planted", "planted", multiple=True,
              help="USER:MULTIPLE, e.g. 42:140.")
@click.option("--mean-delta", type=float, default=15.0, show_default=True)
@click.option("--stdev-delta", type=float, default=4.0, show_default=True)
@click.option("--seed", type=int, required=True)
@click.option("--out-snapshots", required=True, type=click.Path(dir_okay=False))
@click.option("--out-truth", required=True, type=click.Path(dir_okay=False))
@_friendly
def synth_snapshots(users, labels, planted, mean_delta, stdev_delta, seed,
                    out_snapshots, out_truth) -> None:
    """Generate a reputation snapshot series with planted jumps."""
    run = _Run("synth snapshots", users=users, labels=labels,
               planted=list(planted), mean_delta=mean_delta, stdev_delta=stdev_delta)
    label_entries: list = []
    for chunk in labels.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        name, _, day = chunk.partition("=")
        label_entries.append((name, date.fromisoformat(day)) if day else name)
    jumps = []
    for item in planted:
        user_text, _, multiple_text = item.partition(":")
        try:
            jumps.append((int(user_text), float(multiple_text)))
        except ValueError as exc:
            raise ConfigError(f"bad --planted value {item!r}: {exc}") from exc
    growth = synthmod.GrowthParams(users=users, mean_delta=mean_delta,
                                   stdev_delta=stdev_delta)
    snapshots, truth = synthmod.generate_snapshots(growth, jumps, label_entries, seed)
    corpus.write_snapshots_csv(snapshots, out_snapshots)
    synthmod.write_truth_json(truth, out_truth)
    log.info("snapshots: %d users over %d dumps, %d planted jumps",
             users, len(snapshots.dumps), len(jumps))
    run.output(out_snapshots)
    run.output(out_truth)
    run.finish(out_snapshots, seed=seed)


def _report_file_rows(reports_path: str, truth, table_users, snapshot_users):
    """Build one metrics row per reports file; returns (row, community subjects)."""
    reports = detectors.read_reports_jsonl(reports_path)
    manifest_path = manifest_path_for(reports_path)
    preset = ""
    detector_name = ""
    if manifest_path.exists():
        manifest = read_manifest(manifest_path)
        preset = manifest.preset or ""
        detector_name = str(manifest.parameters.get("detector", ""))
    if reports:
        detector_name = reports[0].detector
        mixed = {report.detector for report in reports}
        if len(mixed) > 1:
            raise ConfigError(f"{reports_path} mixes detectors {sorted(mixed)}")
    if not detector_name:
        log.warning("%s is empty and has no manifest; skipping row", reports_path)
        return None, []
    communities_flagged = [
        frozenset(report.subject) for report in reports if report.kind == "community"
    ]
    is_community_row = detector_name.startswith("GC_") or bool(communities_flagged)
    if is_community_row:
        flagged_users = set().union(*communities_flagged) if communities_flagged else set()
        population = set(table_users) | flagged_users | truth.fraud_users
        if not population:
            log.warning("no population for %s; skipping row", reports_path)
            return None, communities_flagged
        matrix = evaluation.confusion(flagged_users, truth.fraud_users, population)
    else:
        flagged_users = {report.subject for report in reports}
        population = set(snapshot_users) | flagged_users | truth.planted_jump_users
        if not population:
            log.warning("no population for %s; skipping row", reports_path)
            return None, []
        matrix = evaluation.confusion(flagged_users, truth.planted_jump_users, population)
    row = evaluation.MetricsRow(
        detector=detector_name,
        preset=preset,
        confusion=matrix,
        scores=evaluation.metrics(matrix),
    )
    return row, communities_flagged


@main.command()
@click.option("--reports", "reports_paths", multiple=True, required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Detector report JSONL (repeatable).")
@click.option("--truth", "truth_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--table", "table_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Interaction table for populations and formation times.")
@click.option("--snapshots", "snapshots_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Snapshot CSV for user-detector populations.")
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--figures/--no-figures", default=True, show_default=True)
@_friendly
def evaluate(reports_paths, truth_path, table_path, snapshots_path, out_dir, figures) -> None:
    """Score detector reports against ground truth."""
    run = _Run("evaluate")
    for path in reports_paths:
        run.input("reports", path)
    run.input("truth", truth_path)
    run.input("table", table_path)
    run.input("snapshots", snapshots_path)

    truth = synthmod.read_truth_json(truth_path)
    records = corpus.read_table_jsonl(table_path) if table_path else []
    table_users = {r.asker_id for r in records} | {r.answerer_id for r in records}
    snapshot_users = (
        corpus.load_snapshots(snapshots_path).users() if snapshots_path else set()
    )

    rows = []
    all_communities: list[frozenset] = []
    for path in reports_paths:
        row, communities_flagged = _report_file_rows(path, truth, table_users, snapshot_users)
        if row is not None:
            rows.append(row)
        all_communities.extend(communities_flagged)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.csv"
    evaluation.write_metrics_csv(rows, metrics_path)
    run.output(metrics_path)

    coverage = None
    proximity = None
    if all_communities:
        confirmed = truth.confirmed_users()
        coverage = evaluation.coverage_report(all_communities, confirmed)
        formation = evaluation.formation_times(records, all_communities)
        proximity = evaluation.proximity_report(
            all_communities, truth.removal_events, formation
        )
    report_path = out / "report.json"
    evaluation.write_report_json(report_path, coverage=coverage, proximity=proximity)
    run.output(report_path)

    if figures:
        if rows:
            run.output(reportmod.render_metrics_figure(rows, out / "metrics.png"))
        if coverage is not None:
            run.output(reportmod.render_coverage_figure(coverage, out / "coverage.png"))
        if proximity is not None:
            run.output(reportmod.render_proximity_figure(proximity, out / "proximity.png"))
    log.info("evaluation written to %s (%d metric rows)", out, len(rows))
    run.finish(metrics_path)


if __name__ == "__main__":
    main()
