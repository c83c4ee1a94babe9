"""Command-line entry point: simulate, verify, serve, replay, report.

Exit codes: 0 ok, 1 check failure, 2 usage or config error, 3 IO error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .checks import SUITES, run_suite
from .errors import ActiveMeasureError
from .service import SessionStore, create_app
from .simharness import export_results, load_config, run_trials


@click.group()
def main():
    """Without-replacement adaptive importance sampling for count measurement."""


def _echo_config(cfg):
    click.echo("# effective config")
    for key, value in sorted(vars(cfg).items()):
        click.echo(f"# {key} = {value}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=None, help="Override the master seed.")
@click.option("--trials", type=int, default=None, help="Override the trial count.")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Override the output path.")
@click.option("--format", "fmt", type=click.Choice(["csv", "jsonl"]), default=None)
def simulate(config_path, seed, trials, out, fmt):
    """Run repeated trials from a config file and export metric rows."""
    overrides = {}
    if seed is not None:
        overrides["seed"] = seed
    if trials is not None:
        overrides["trials"] = trials
    if out is not None:
        overrides["out"] = out
    if fmt is not None:
        overrides["format"] = fmt
    try:
        cfg = load_config(config_path, **overrides)
    except (ValueError, KeyError) as exc:
        raise click.UsageError(f"bad config: {exc}")
    _echo_config(cfg)
    try:
        rows = run_trials(cfg)
    except ActiveMeasureError as exc:
        raise click.UsageError(str(exc))
    for row in rows:
        click.echo(
            f"{row.method} {row.scheme} t={row.t}: "
            f"frac_err={row.fractional_error_mean:.6f} coverage={row.coverage} trials={row.trials}"
        )
    if cfg.out:
        try:
            export_results(rows, cfg.out, cfg.format)
        except OSError as exc:
            click.echo(f"cannot write {cfg.out}: {exc}", err=True)
            sys.exit(3)
        click.echo(f"wrote {cfg.out}")


@main.command()
@click.option("--suite", default="all", type=click.Choice(sorted(SUITES)), show_default=True)
@click.option("--quick", is_flag=True, help="Reduced trial counts for fast CI loops.")
def verify(suite, quick):
    """Run a named property suite; exit 0 only if every check passes."""
    results = run_suite(suite, quick=quick)
    for res in results:
        click.echo(res.line())
    failed = [r for r in results if not r.passed]
    click.echo(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        sys.exit(1)


@main.command()
@click.option("--bind", default="127.0.0.1:8765", show_default=True, help="host:port to listen on.")
@click.option("--pools", "pool_dir", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--data", "data_dir", type=click.Path(file_okay=False), default="sessions", show_default=True)
@click.option("--ui", "ui_dir", type=click.Path(file_okay=False), default=None)
def serve(bind, pool_dir, data_dir, ui_dir):
    """Serve the session API (and the console bundle when --ui is given)."""
    import uvicorn

    try:
        host, port_text = bind.rsplit(":", 1)
        port = int(port_text)
    except ValueError:
        raise click.UsageError(f"--bind must be host:port, got {bind!r}")
    app = create_app(pool_dir=pool_dir, data_dir=data_dir, ui_dir=ui_dir)
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    except SystemExit:
        raise
    except OSError as exc:
        click.echo(f"cannot bind {bind}: {exc}", err=True)
        sys.exit(3)


@main.command()
@click.argument("log_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write the trajectory as JSON lines.")
def replay(log_path, out):
    """Rebuild a session from its event log and print its trajectory."""
    try:
        text = Path(log_path).read_text(encoding="utf-8")
    except OSError as exc:
        click.echo(f"cannot read {log_path}: {exc}", err=True)
        sys.exit(3)
    try:
        trajectory = SessionStore.replay_log(text)
    except ActiveMeasureError as exc:
        raise click.UsageError(str(exc))
    lines = [json.dumps(r.as_dict()) for r in trajectory]
    for line in lines:
        click.echo(line)
    if out:
        try:
            Path(out).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        except OSError as exc:
            click.echo(f"cannot write {out}: {exc}", err=True)
            sys.exit(3)


@main.command()
@click.argument("log_path", type=click.Path(exists=True, dir_okay=False))
def report(log_path):
    """Print the latest estimate and interval from a session event log."""
    try:
        text = Path(log_path).read_text(encoding="utf-8")
    except OSError as exc:
        click.echo(f"cannot read {log_path}: {exc}", err=True)
        sys.exit(3)
    try:
        trajectory = SessionStore.replay_log(text)
    except ActiveMeasureError as exc:
        raise click.UsageError(str(exc))
    if not trajectory:
        click.echo(json.dumps({"t": 0, "estimate": None}))
        return
    click.echo(json.dumps(trajectory[-1].as_dict()))


if __name__ == "__main__":
    main()
