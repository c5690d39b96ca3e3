import json
import logging

import click
from pydantic import ValidationError

from guardnet.config import settings
from guardnet.exceptions import ConfigError, EncodingError, ParamError, PhaseError, SchemaError
from guardnet.schemas.identity import PublicParams
from guardnet.services.auth_service import NonceLedger, import_chain, verify_proof_chain
from guardnet.services.collusion_service import collusion_mc
from guardnet.services.metrics_service import QUERIES, format_table, metrics
from guardnet.utils.ids import rng_stream
from guardnet.utils.validators import load_config
from guardnet.workers.controller_worker import controller_run

logger = logging.getLogger(__name__)

EXIT_REJECT = 1
EXIT_USAGE = 2
EXIT_PHASE = 3


@click.group()
@click.option("--log-level", default=settings.LOG_LEVEL, show_default=True, help="Python logging level.")
def cli(log_level: str):
    """Guard skip graph simulator."""
    logging.basicConfig(level=log_level.upper(), format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.pass_context
def run(ctx: click.Context, config_path: str):
    """Run the full demo scenario and merge the node logs."""
    try:
        config = load_config(config_path)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        ctx.exit(EXIT_USAGE)
    try:
        report = controller_run(config)
    except PhaseError as exc:
        click.echo(f"run failed: {exc}", err=True)
        ctx.exit(EXIT_PHASE)
    click.echo(report.merged_csv)
    click.echo(format_table(report.metrics, "rejects"))
    click.echo(format_table(report.metrics, "latency"))


@cli.command()
@click.option("--chain", "chain_path", required=True, type=click.Path(dir_okay=False))
@click.option("--params", "params_path", required=True, type=click.Path(dir_okay=False))
@click.pass_context
def verify(ctx: click.Context, chain_path: str, params_path: str):
    """Re-verify a stored proof chain with a fresh nonce ledger."""
    try:
        with open(chain_path, encoding="utf-8") as f:
            export = import_chain(json.load(f))
        with open(params_path, encoding="utf-8") as f:
            params = PublicParams.from_json(f.read())
    except (OSError, ValueError, EncodingError, ValidationError) as exc:
        click.echo(f"cannot read input: {exc}", err=True)
        ctx.exit(EXIT_USAGE)
    verdict = verify_proof_chain(export.proofs, params, export.I, export.Q, export.N, ledger=NonceLedger())
    click.echo(str(verdict))
    ctx.exit(0 if verdict.accepted else EXIT_REJECT)


@cli.command("metrics")
@click.option("--csv", "csv_path", required=True, type=click.Path(dir_okay=False))
@click.option("--query", required=True, type=click.Choice(QUERIES))
@click.pass_context
def metrics_cmd(ctx: click.Context, csv_path: str, query: str):
    """Per-mode aggregates over a merged CSV log."""
    try:
        summary = metrics(csv_path, query)
    except (OSError, SchemaError, ParamError) as exc:
        click.echo(f"cannot compute metrics: {exc}", err=True)
        ctx.exit(EXIT_USAGE)
    click.echo(format_table(summary, query))


@cli.command()
@click.option("--n", "n", required=True, type=int)
@click.option("--f", "f", required=True, type=int)
@click.option("--trials", required=True, type=int)
@click.option("--seed", required=True, type=int)
@click.pass_context
def collusion(ctx: click.Context, n: int, f: int, trials: int, seed: int):
    """Monte Carlo estimate of a node losing all three guards to colluders."""
    try:
        report = collusion_mc(n, f, trials, rng_stream(seed, "collusion"))
    except ParamError as exc:
        click.echo(f"bad parameters: {exc}", err=True)
        ctx.exit(EXIT_USAGE)
    click.echo(f"estimate={report.estimate:.6f} hits={report.hits}/{report.trials} sigma={report.sigma:.6f}")
    click.echo(f"exact={report.exact:.6f} bound={report.bound:.6f} within_4sigma={report.within()}")
    click.echo("distinct_guards=" + " ".join(f"{k}:{v}" for k, v in report.distinct_guards.items()))


if __name__ == "__main__":
    cli()
