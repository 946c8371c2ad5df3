"""End-to-end pipeline: stage functions, artifact IO, manifest, resume.

Every stage reads its inputs from on-disk artifacts and writes its outputs
deterministically (sorted keys, repr floats, no timestamps), so identical
inputs and configuration produce byte-identical artifacts and any prefix of
stages can be resumed from disk. The manifest records the config hash and a
sha256 per artifact; on resume, a stage is skipped only when its artifacts
all match the manifest, and a mismatching file is reported by stage name.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from concurrent.futures import ThreadPoolExecutor
from datetime import date
from pathlib import Path

import numpy as np

from . import descriptives, ingest
from .categories import DEFAULT_CATALOG
from .cluster import extract_medoids, select_k
from .config import PipelineConfig
from .errors import DataValidationError
from .events import EventLog
from .lmm import build_design, empirical_logit, fit_reml, marginal_means, parse_formula
from .patterns import (
    MedoidEntry,
    PatternCatalog,
    canonical_label,
    global_duration_split,
    rank_patterns,
)
from .sessions import Session, SessionKind, sessionize, user_thresholds
from .spells import CostModel, distance_matrix, parse_sequence, serialize_sequence
from .svgplot import render_pattern_plot
from .trajectory import SwitchRateRecord, Trajectory, build_trajectories, reengagement_records

STAGES = (
    "ingest",
    "sessionize",
    "describe",
    "cluster",
    "patterns",
    "trajectories",
    "reengage",
    "lmm",
    "plot",
)

STAGE_FILES = {
    "ingest": ("events_validated.csv", "ingest_report.json"),
    "sessionize": ("sessions.csv", "thresholds.csv"),
    "describe": ("descriptives.json", "transition_matrix.csv"),
    "cluster": ("medoids.csv", "clusters.json"),
    "patterns": ("patterns.csv",),
    "trajectories": ("trajectories.csv",),
    "reengage": ("reengagement.csv",),
    "lmm": ("lmm_fit.json", "marginal_means.csv"),
    "plot": ("patterns_top.svg",),
}


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def _fmt(x) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# Artifact readers/writers


def write_sessions_csv(sessions: dict[str, list[Session]], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["user_id", "session_id", "kind", "start", "end", "n_events", "n_transitions", "categories"]
        )
        for user_id in sorted(sessions):
            for sid, s in enumerate(sessions[user_id]):
                writer.writerow(
                    [
                        user_id,
                        sid,
                        s.kind.value,
                        s.start,
                        s.end,
                        s.n_events,
                        s.n_transitions,
                        "|".join(s.categories),
                    ]
                )


def write_thresholds_csv(thresholds: dict[str, float], gaps_count: dict[str, int], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id", "threshold_s", "n_gaps"])
        for user_id in sorted(thresholds):
            writer.writerow([user_id, _fmt(thresholds[user_id]), gaps_count.get(user_id, 0)])


def load_validated_log(out_dir: Path, config: PipelineConfig) -> EventLog:
    path = out_dir / "events_validated.csv"
    with open(path, "rb") as fh:
        result = ingest.parse_events(fh, "csv")
    if result.errors:
        raise DataValidationError(f"validated events file {path} failed to re-parse")
    return result.log


def derive_sessions(log: EventLog, config: PipelineConfig) -> dict[str, list[Session]]:
    thresholds = user_thresholds(log, config.default_threshold_s)
    return {u: sessionize(log.events_for(u), thresholds[u]) for u in log.users()}


def write_reengagement_csv(records: list[SwitchRateRecord], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id", "date", "timespan", "rate", "n_off_positions"])
        for r in records:
            writer.writerow([r.user_id, r.date.isoformat(), r.timespan, _fmt(r.rate), r.n_off_positions])


def read_reengagement_csv(path: Path) -> list[SwitchRateRecord]:
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            records.append(
                SwitchRateRecord(
                    user_id=row["user_id"],
                    date=date.fromisoformat(row["date"]),
                    timespan=row["timespan"],
                    rate=float(row["rate"]),
                    n_off_positions=int(row["n_off_positions"]),
                )
            )
    return records


def write_medoids_csv(rows: list[dict], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id", "cluster", "sequence", "weight", "k", "asw"])
        for r in rows:
            writer.writerow(
                [
                    r["user_id"],
                    r["cluster"],
                    r["sequence"],
                    _fmt(r["weight"]),
                    r["k"],
                    "" if r["asw"] is None else _fmt(r["asw"]),
                ]
            )


def read_medoids_csv(path: Path) -> list[MedoidEntry]:
    pool = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            pool.append(
                MedoidEntry(
                    user_id=row["user_id"],
                    sequence=parse_sequence(row["sequence"]),
                    weight=float(row["weight"]),
                )
            )
    return pool


def write_patterns_csv(catalog_result: PatternCatalog, path: Path) -> None:
    shares = catalog_result.shares
    cumulative = catalog_result.cumulative_shares
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["rank", "canonical", "weight", "share", "cum_share", "users", "exemplar"])
        for i, p in enumerate(catalog_result.patterns):
            writer.writerow(
                [
                    i + 1,
                    canonical_label(p.canonical),
                    _fmt(p.weight),
                    _fmt(shares[i]),
                    _fmt(cumulative[i]),
                    p.contributing_users,
                    serialize_sequence(p.exemplar),
                ]
            )


def read_patterns_csv(path: Path) -> PatternCatalog:
    from .patterns import MedoidPattern

    patterns = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            canonical = tuple(
                tuple(part.rsplit(":", 1)) for part in row["canonical"].split(">")
            )
            patterns.append(
                MedoidPattern(
                    canonical=canonical,
                    exemplar=parse_sequence(row["exemplar"]),
                    weight=float(row["weight"]),
                    contributing_users=int(row["users"]),
                )
            )
    return PatternCatalog(patterns=patterns, total_sessions=sum(p.weight for p in patterns))


def write_trajectories_csv(trajectories: list[Trajectory], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id", "date", "timespan", "slots"])
        for t in trajectories:
            writer.writerow(
                [t.user_id, t.date.isoformat(), t.timespan, "".join(map(str, t.slots.tolist()))]
            )


def read_trajectories_csv(path: Path) -> list[Trajectory]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                Trajectory(
                    user_id=row["user_id"],
                    date=date.fromisoformat(row["date"]),
                    timespan=row["timespan"],
                    slots=np.frombuffer(row["slots"].encode(), dtype=np.uint8) - ord("0"),
                )
            )
    return out


# ---------------------------------------------------------------------------
# Stages


def stage_ingest(out_dir: Path, config: PipelineConfig) -> None:
    with open(config.events_path, "rb") as fh:
        result = ingest.parse_events(fh, config.events_format)
    log, report = ingest.validate_log(result.log, config.overlap_policy)
    with open(out_dir / "events_validated.csv", "w", newline="") as fh:
        ingest.write_events_csv(log, fh)
    payload = report.as_dict()
    payload["parse_rows_in"] = result.rows_in
    payload["parse_rows_valid"] = result.rows_valid
    payload["parse_errors"] = [e.as_dict() for e in result.errors]
    _write_json(out_dir / "ingest_report.json", payload)


def stage_sessionize(out_dir: Path, config: PipelineConfig) -> None:
    log = load_validated_log(out_dir, config)
    thresholds = user_thresholds(log, config.default_threshold_s)
    sessions = {u: sessionize(log.events_for(u), thresholds[u]) for u in log.users()}
    gaps_count = {u: max(len(log.events_for(u)) - 1, 0) for u in log.users()}
    write_sessions_csv(sessions, out_dir / "sessions.csv")
    write_thresholds_csv(thresholds, gaps_count, out_dir / "thresholds.csv")


def stage_describe(out_dir: Path, config: PipelineConfig) -> None:
    log = load_validated_log(out_dir, config)
    sessions = derive_sessions(log, config)
    report = descriptives.describe(sessions, descriptives.observation_days(log))
    _write_json(out_dir / "descriptives.json", report)
    matrix = descriptives.transition_analysis(
        [s for u in sorted(sessions) for s in sessions[u]]
    )
    with open(out_dir / "transition_matrix.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["from/to"] + list(matrix.catalog.labels))
        for i, label in enumerate(matrix.catalog.labels):
            writer.writerow([label] + [int(x) for x in matrix.counts[i]])


def _cluster_one_user(user_id, sessions, cost, config):
    multi = [s for s in sessions if s.kind == SessionKind.MULTI]
    if not multi:
        return []
    from .spells import to_spell_sequence

    sequences = [to_spell_sequence(s) for s in multi]
    matrix = distance_matrix(sequences, cost, dedup=config.dedup, normalize=config.normalize)
    clustering = select_k(matrix.entries, matrix.weights, config.kmin, min(config.kmax, max(matrix.n - 1, 1)))
    medoids = extract_medoids(clustering, matrix.entries, matrix.weights)
    rows = []
    for cluster_idx, (medoid, weight) in enumerate(medoids):
        rows.append(
            {
                "user_id": user_id,
                "cluster": cluster_idx,
                "sequence": serialize_sequence(matrix.sequences[medoid]),
                "weight": weight,
                "k": clustering.k,
                "asw": clustering.asw,
            }
        )
    return rows


def stage_cluster(out_dir: Path, config: PipelineConfig) -> None:
    log = load_validated_log(out_dir, config)
    sessions = derive_sessions(log, config)
    cost = CostModel(
        substitution=config.substitution_cost,
        indel=config.indel_cost,
        expansion=config.expansion_cost,
        duration_unit=config.duration_unit_s,
    )
    users = sorted(sessions)
    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            results = list(
                pool.map(lambda u: _cluster_one_user(u, sessions[u], cost, config), users)
            )
    else:
        results = [_cluster_one_user(u, sessions[u], cost, config) for u in users]

    rows = [r for user_rows in results for r in user_rows]
    write_medoids_csv(rows, out_dir / "medoids.csv")
    summary = {}
    for user_rows in results:
        if user_rows:
            u = user_rows[0]["user_id"]
            summary[u] = {
                "k": user_rows[0]["k"],
                "asw": user_rows[0]["asw"],
                "n_medoids": len(user_rows),
                "multi_sessions": float(sum(r["weight"] for r in user_rows)),
            }
    _write_json(out_dir / "clusters.json", summary)


def stage_patterns(out_dir: Path, config: PipelineConfig) -> None:
    pool = read_medoids_csv(out_dir / "medoids.csv")
    if not pool:
        raise DataValidationError("no medoids pooled; cannot rank patterns")
    split = global_duration_split(pool)
    catalog_result = rank_patterns(pool, split)
    write_patterns_csv(catalog_result, out_dir / "patterns.csv")


def stage_trajectories(out_dir: Path, config: PipelineConfig) -> None:
    log = load_validated_log(out_dir, config)
    sessions = derive_sessions(log, config)
    trajectories = build_trajectories(sessions, slot_width_s=config.slot_width_s, tz_name=config.tz)
    write_trajectories_csv(trajectories, out_dir / "trajectories.csv")


def stage_reengage(out_dir: Path, config: PipelineConfig) -> None:
    trajectories = read_trajectories_csv(out_dir / "trajectories.csv")
    records, _ = reengagement_records(trajectories)
    write_reengagement_csv(records, out_dir / "reengagement.csv")


def stage_lmm(out_dir: Path, config: PipelineConfig) -> None:
    records = read_reengagement_csv(out_dir / "reengagement.csv")
    with open(config.profiles_path, "rb") as fh:
        profiles = ingest.parse_profiles(fh).profiles
    spec = parse_formula(config.formula)
    if config.elogit:
        records = [
            SwitchRateRecord(r.user_id, r.date, r.timespan, empirical_logit(r.rate), r.n_off_positions)
            for r in records
        ]
    y, X, groups, info = build_design(records, profiles, spec)
    fit = fit_reml(y, X, groups, info)
    _write_json(out_dir / "lmm_fit.json", fit.as_dict())

    combos = [{"timespan": t} for t in ("small", "morning", "midday", "afternoon", "evening")]
    for factor in spec.factors():
        if factor == "timespan":
            continue
        from .lmm import FACTOR_LEVELS

        for level in FACTOR_LEVELS[factor]:
            for t in ("small", "morning", "midday", "afternoon", "evening"):
                combos.append({"timespan": t, factor: level})
    means = marginal_means(fit, info, combos)
    with open(out_dir / "marginal_means.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timespan", "factor", "level", "estimate", "se"])
        for combo, mean in zip(combos, means):
            extra = [(f, l) for f, l in combo.items() if f != "timespan"]
            factor, level = extra[0] if extra else ("", "")
            writer.writerow([combo["timespan"], factor, level, _fmt(mean["estimate"]), _fmt(mean["se"])])


def stage_plot(out_dir: Path, config: PipelineConfig) -> None:
    catalog_result = read_patterns_csv(out_dir / "patterns.csv")
    top_n = min(config.top_n_plot, len(catalog_result.patterns))
    svg = render_pattern_plot(catalog_result, top_n)
    (out_dir / "patterns_top.svg").write_text(svg)


_STAGE_FN = {
    "ingest": stage_ingest,
    "sessionize": stage_sessionize,
    "describe": stage_describe,
    "cluster": stage_cluster,
    "patterns": stage_patterns,
    "trajectories": stage_trajectories,
    "reengage": stage_reengage,
    "lmm": stage_lmm,
    "plot": stage_plot,
}


def run_pipeline(config: PipelineConfig, resume: bool = False) -> dict:
    """Execute all stages in order, writing artifacts plus a manifest.

    With ``resume``, stages whose artifacts already exist and hash-match the
    previous manifest are skipped; an artifact that exists but mismatches is
    reported as corrupt with its stage and path. Stage errors abort with the
    stage named; artifacts written so far are preserved.
    """
    config.validate()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    previous = {}
    manifest_path = out_dir / "manifest.json"
    if resume and manifest_path.exists():
        previous = json.loads(manifest_path.read_text()).get("stages", {})

    manifest = {"config": config.__dict__.copy(), "config_hash": config.hash(), "stages": {}}
    for stage in STAGES:
        files = [out_dir / name for name in STAGE_FILES[stage]]
        prev_hashes = previous.get(stage, {}).get("files", {})
        if resume and prev_hashes and all(f.exists() for f in files):
            mismatched = [
                f for f in files if prev_hashes.get(f.name) and sha256_file(f) != prev_hashes[f.name]
            ]
            if mismatched:
                raise DataValidationError(
                    f"stage {stage!r}: artifact {mismatched[0]} is corrupt (hash mismatch on resume)"
                )
            manifest["stages"][stage] = {"files": {f.name: sha256_file(f) for f in files}, "resumed": True}
            continue
        try:
            _STAGE_FN[stage](out_dir, config)
        except Exception as exc:
            raise type(exc)(f"stage {stage!r} failed: {exc}") from exc
        manifest["stages"][stage] = {"files": {f.name: sha256_file(f) for f in files}}

    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return manifest
