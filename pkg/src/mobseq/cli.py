"""Command-line interface: stage subcommands plus end-to-end pipeline.

Exit codes: 0 success, 1 usage error, 2 data validation error,
3 numerical failure.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import ingest as ingest_mod
from .cluster import average_silhouette, pam_cluster, select_k
from .config import load_config
from .errors import DataValidationError, NumericalError
from .pipeline import (
    STAGES,
    run_pipeline,
    stage_cluster,
    stage_describe,
    stage_ingest,
    stage_lmm,
    stage_patterns,
    stage_plot,
    stage_reengage,
    stage_sessionize,
    stage_trajectories,
)
from .simulate import GenConfig, generate_log
from .spells import read_matrix, write_matrix


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None, help="Flat KEY=VALUE config file.")
@click.option("--out", "out_dir", type=click.Path(), default=None, help="Output directory.")
@click.option("--jobs", type=int, default=None, help="Parallel workers for per-user stages.")
@click.option("--seed", type=int, default=None, help="Seed for simulation.")
@click.pass_context
def cli(ctx, config_path, out_dir, jobs, seed):
    """Behavioral sequence mining for timestamped app-use logs."""
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path
    ctx.obj["overrides"] = {"out_dir": out_dir, "jobs": jobs, "seed": seed}


def _config(ctx, **extra):
    overrides = {k: v for k, v in ctx.obj["overrides"].items() if v is not None}
    overrides.update({k: v for k, v in extra.items() if v is not None})
    return load_config(ctx.obj["config_path"], overrides)


def _out(config) -> Path:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


@cli.command()
@click.option("--events", "events_path", type=click.Path(exists=True), required=True)
@click.option("--format", "events_format", type=click.Choice(["csv", "jsonl"]), default=None)
@click.option("--overlap", "overlap_policy", type=click.Choice(["reject", "clip"]), default=None)
@click.pass_context
def ingest(ctx, events_path, events_format, overlap_policy):
    """Parse and validate an event log into the canonical artifact."""
    config = _config(ctx, events_path=events_path, events_format=events_format, overlap_policy=overlap_policy)
    stage_ingest(_out(config), config)
    click.echo(f"wrote {config.out_dir}/events_validated.csv")


@cli.command()
@click.option("--users", type=int, default=None)
@click.option("--days", type=int, default=None)
@click.option("--injection-prob", type=float, default=None)
@click.pass_context
def simulate(ctx, users, days, injection_prob):
    """Generate a synthetic log with ground truth."""
    config = _config(ctx)
    gen = GenConfig(seed=config.seed)
    if users is not None:
        gen = GenConfig(**{**gen.to_dict(), "n_users": users})
    if days is not None:
        gen = GenConfig.from_dict({**gen.to_dict(), "n_days": days})
    if injection_prob is not None:
        gen = GenConfig.from_dict({**gen.to_dict(), "injection_prob": injection_prob})
    log, profiles, truth = generate_log(gen)
    out = _out(config)
    with open(out / "events.csv", "w", newline="") as fh:
        ingest_mod.write_events_csv(log, fh)
    with open(out / "profiles.csv", "w", newline="") as fh:
        ingest_mod.write_profiles_csv(profiles.values(), fh)
    (out / "ground_truth.json").write_text(json.dumps(truth.to_dict(), sort_keys=True, indent=1) + "\n")
    click.echo(
        f"simulated {log.n_users()} users, {log.n_events()} events, "
        f"{sum(len(s) for s in truth.sessions.values())} sessions (run {truth.run_id})"
    )


def _simple_stage(name, fn):
    @cli.command(name=name)
    @click.pass_context
    def command(ctx):
        config = _config(ctx)
        fn(_out(config), config)
        files = ", ".join(f"{config.out_dir}/{f}" for f in _stage_outputs(name))
        click.echo(f"wrote {files}")

    command.__doc__ = fn.__doc__
    return command


def _stage_outputs(name):
    from .pipeline import STAGE_FILES

    return STAGE_FILES[name]


sessionize_cmd = _simple_stage("sessionize", stage_sessionize)
describe_cmd = _simple_stage("describe", stage_describe)
patterns_cmd = _simple_stage("patterns", stage_patterns)
trajectories_cmd = _simple_stage("trajectories", stage_trajectories)
reengage_cmd = _simple_stage("reengage", stage_reengage)
plot_cmd = _simple_stage("plot", stage_plot)


@cli.command()
@click.option("--user", "user_id", required=True, help="User whose multi-app sessions to compare.")
@click.option("--output", "output", default=None, help="Matrix basename (default <out>/matrix_<user>).")
@click.pass_context
def dist(ctx, user_id, output):
    """Write one user's pairwise dissimilarity matrix to disk."""
    from .pipeline import derive_sessions, load_validated_log
    from .sessions import SessionKind
    from .spells import CostModel, distance_matrix, to_spell_sequence

    config = _config(ctx)
    out = _out(config)
    log = load_validated_log(out, config)
    sessions = derive_sessions(log, config).get(user_id)
    if not sessions:
        raise DataValidationError(f"no sessions for user {user_id!r}")
    multi = [s for s in sessions if s.kind == SessionKind.MULTI]
    if not multi:
        raise DataValidationError(f"no multi-app sessions for user {user_id!r}")
    cost = CostModel(
        substitution=config.substitution_cost,
        indel=config.indel_cost,
        expansion=config.expansion_cost,
        duration_unit=config.duration_unit_s,
    )
    matrix = distance_matrix([to_spell_sequence(s) for s in multi], cost, dedup=config.dedup)
    base = Path(output) if output else out / f"matrix_{user_id}"
    paths = write_matrix(matrix, base)
    click.echo(f"wrote {', '.join(str(p) for p in paths)} (n={matrix.n})")


@cli.command()
@click.option("--matrix", "matrix_path", type=click.Path(), required=True, help="Matrix basename or payload file.")
@click.option("--kmin", type=int, default=None)
@click.option("--kmax", type=int, default=None)
@click.pass_context
def cluster(ctx, matrix_path, kmin, kmax):
    """Cluster a stored matrix; emits JSON with the k sweep."""
    config = _config(ctx, kmin=kmin, kmax=kmax)
    matrix = read_matrix(Path(matrix_path))
    asw_per_k = {}
    best = None
    hi = min(config.kmax, max(matrix.n - 1, 1))
    if matrix.n < 3:
        best = select_k(matrix.entries, matrix.weights, config.kmin, hi)
        asw_per_k[best.k] = best.asw
    else:
        for k in range(config.kmin, hi + 1):
            clustering = pam_cluster(matrix.entries, matrix.weights, k)
            clustering.asw = average_silhouette(matrix.entries, matrix.weights, clustering)
            asw_per_k[k] = clustering.asw
            if best is None or clustering.asw > best.asw + 1e-12:
                best = clustering
    payload = {
        "k": best.k,
        "medoids": [int(m) for m in best.medoid_indices],
        "assignment": [int(a) for a in best.assignment],
        "total_cost": best.total_cost,
        "asw_per_k": {str(k): v for k, v in asw_per_k.items()},
        "degenerate": best.degenerate,
    }
    click.echo(json.dumps(payload, sort_keys=True, indent=1))


@cli.command()
@click.option("--formula", default=None, help="Model formula, e.g. 'rate ~ timespan + (1|user)'.")
@click.option("--profiles", "profiles_path", type=click.Path(exists=True), default=None)
@click.option("--elogit", is_flag=True, default=None, help="Model the empirical logit of the rate.")
@click.pass_context
def lmm(ctx, formula, profiles_path, elogit):
    """Fit the random-intercept model on the re-engagement table."""
    config = _config(ctx, formula=formula, profiles_path=profiles_path, elogit=elogit)
    stage_lmm(_out(config), config)
    click.echo(f"wrote {config.out_dir}/lmm_fit.json, {config.out_dir}/marginal_means.csv")


@cli.command()
@click.option("--events", "events_path", type=click.Path(exists=True), default=None)
@click.option("--profiles", "profiles_path", type=click.Path(exists=True), default=None)
@click.option("--resume", is_flag=True, default=False, help="Skip stages whose artifacts match the manifest.")
@click.pass_context
def pipeline(ctx, events_path, profiles_path, resume):
    """Run every stage: ingest through model fit and plot."""
    config = _config(ctx, events_path=events_path, profiles_path=profiles_path)
    manifest = run_pipeline(config, resume=resume)
    done = [s for s in STAGES if s in manifest["stages"]]
    click.echo(f"pipeline complete: {len(done)} stages -> {config.out_dir}/manifest.json")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.Abort:
        return 1
    except DataValidationError as exc:
        click.echo(f"data validation error: {exc}", err=True)
        return 2
    except NumericalError as exc:
        click.echo(f"numerical error: {exc}", err=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
