"""Command-line interface for the TANS toolkit."""

from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path
from typing import Callable, Iterator, Optional

import click
import numpy as np

from tans import TansError, __version__
from tans.config import (
    ACF_MODES,
    RECONSTRUCTION_METHODS,
    SAMPLER_KINDS,
    SIGNAL_MODELS,
    LoggingConfig,
    ReconstructionConfig,
    SamplerConfig,
    SignalConfig,
    load_spec,
)
from tans.dp import DpConfig, increment_limit, sc_value_iteration
from tans.greedy import CostParams, greedy_rd_bounds
from tans.harness import (
    ExperimentResult,
    ExperimentRunner,
    analytic_curves,
    evaluate_run,
    reconstruct_samples,
    run_metadata,
    run_sampler,
    run_uniform_baseline,
    tool_metadata,
)
from tans.logger import setup_logger
from tans.samplers import build_sampler
from tans.signals import BinaryHmmParams, MarkovAr1Params, generate
from tans.storage import (
    FORMATS,
    ResultStorage,
    manifest_path,
    read_trace_csv,
    to_text,
    write_bounds,
    write_json,
    write_policy,
    write_rd,
    write_recon,
    write_samples,
    write_trace,
)

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")

# Group-level flags that stand in for the verb options of the same name
GLOBAL_OPTIONS = ("seed", "out", "fmt_name")


@contextmanager
def domain_errors(ctx: click.Context) -> Iterator[None]:
    """Report toolkit and validation errors on stderr and exit with status 1."""
    try:
        yield
    except (TansError, ValueError) as e:
        click.echo(f"Error: {e}", err=True)
        ctx.exit(1)


def output_options(default_format: str = "csv") -> Callable:
    def decorate(func: Callable) -> Callable:
        func = click.option(
            "--format",
            "fmt_name",
            type=click.Choice(FORMATS),
            default=default_format,
            show_default=True,
            help="Output format",
        )(func)
        func = click.option(
            "--out",
            "-o",
            type=click.Path(dir_okay=False, path_type=Path),
            help="Output file (stdout if omitted); a manifest is written next to it",
        )(func)
        return func

    return decorate


def signal_options(func: Callable) -> Callable:
    options = [
        click.option("--model", type=click.Choice(SIGNAL_MODELS), default="ar1", show_default=True, help="Signal model"),
        click.option("--alpha", type=float, help="AR(1) coefficient (ar1)"),
        click.option("--alpha0", type=float, help="Coefficient in regime 0 (markov_ar1)"),
        click.option("--alpha1", type=float, help="Coefficient in regime 1 (markov_ar1)"),
        click.option("--p", "p_sym", type=float, help="Symmetric transition probability (sets --p01 and --p10)"),
        click.option("--p01", type=float, help="Transition probability 0 -> 1 (markov_ar1)"),
        click.option("--p10", type=float, help="Transition probability 1 -> 0 (markov_ar1)"),
        click.option("--eps0", type=float, help="Transition probability out of 0 (binary_hmm)"),
        click.option("--eps1", type=float, help="Transition probability out of 1 (binary_hmm)"),
        click.option("--len", "length", type=int, default=1000, show_default=True, help="Trace length"),
        click.option("--seed", type=int, default=0, show_default=True, help="Generator seed"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _signal_config(kw: dict) -> SignalConfig:
    p01 = kw["p01"] if kw["p01"] is not None else kw["p_sym"]
    p10 = kw["p10"] if kw["p10"] is not None else kw["p_sym"]
    return SignalConfig(
        model=kw["model"],
        alpha=kw["alpha"],
        alpha0=kw["alpha0"],
        alpha1=kw["alpha1"],
        p01=p01,
        p10=p10,
        eps0=kw["eps0"],
        eps1=kw["eps1"],
        length=kw["length"],
        seeds=[kw["seed"]],
    )


def _emit(ctx: click.Context, writer: Callable, args: tuple, out: Optional[Path], fmt_name: str) -> None:
    """Write to ``out`` plus its manifest, or to stdout."""
    if out is None:
        click.echo(to_text(writer, *args, fmt_name=fmt_name), nl=False)
        return
    writer(*args, out, fmt_name=fmt_name)
    write_json(_command_manifest(ctx), manifest_path(out))
    click.echo(f"Wrote {out}", err=True)


def _command_manifest(ctx: click.Context) -> dict:
    manifest = tool_metadata()
    options = {}
    for key, value in sorted(ctx.params.items()):
        options[key] = str(value) if isinstance(value, Path) else value
    manifest["command"] = {"verb": ctx.info_name, "options": options}
    return manifest


@click.group()
@click.version_option(version=__version__, prog_name="tans")
@click.option(
    "--log-level",
    type=click.Choice(LOG_LEVELS, case_sensitive=False),
    default=None,
    help="Log level on stderr (default WARNING, or the spec's level for 'run')",
)
@click.option(
    "--seed",
    type=int,
    envvar="TANS_SEED",
    show_envvar=True,
    help="Generator seed for every verb that takes one",
)
@click.option(
    "--out",
    "-o",
    type=click.Path(path_type=Path),
    help="Output file, or output directory for 'run'",
)
@click.option("--format", "fmt_name", type=click.Choice(FORMATS), help="Output format for every verb")
@click.pass_context
def cli(
    ctx: click.Context,
    log_level: Optional[str],
    seed: Optional[int],
    out: Optional[Path],
    fmt_name: Optional[str],
) -> None:
    """Time-stampless adaptive nonuniform sampling toolkit.

    Generate traces, run sampling functions, solve DP policies and
    reproduce rate-distortion experiments. --seed, --out and --format may
    be given before the verb; an option given after the verb wins.
    """
    ctx.ensure_object(dict)
    given = {key: ctx.params[key] for key in GLOBAL_OPTIONS if ctx.params[key] is not None}
    ctx.default_map = {
        name: {p.name: given[p.name] for p in command.params if p.name in given}
        for name, command in ctx.command.commands.items()
    }
    ctx.obj["log_level"] = log_level.upper() if log_level else None
    setup_logger(LoggingConfig(level=ctx.obj["log_level"] or "WARNING"))


@cli.command()
@signal_options
@output_options()
@click.pass_context
def gen(ctx: click.Context, out: Optional[Path], fmt_name: str, **kw) -> None:
    """Generate a signal trace (t,value,hidden_state)."""
    with domain_errors(ctx):
        cfg = _signal_config(kw)
        trace = generate(cfg.params(), cfg.length, kw["seed"])
        _emit(ctx, write_trace, (trace,), out, fmt_name)


@cli.command()
@signal_options
@click.option(
    "--trace",
    "trace_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="Sample a trace CSV instead of generating one (--model names its model)",
)
@click.option(
    "--sampler",
    "kind",
    type=click.Choice(SAMPLER_KINDS),
    default="greedy_markov",
    show_default=True,
    help="Sampling function",
)
@click.option("--rho", type=float, help="Rate award (adaptive samplers)")
@click.option("--rate", type=float, help="Target rate (uniform_baseline)")
@click.option("--period", type=int, default=1, show_default=True, help="Increment of the uniform sampler")
@click.option("--order", type=int, default=10, show_default=True, help="Samples in the sampling state")
@click.option("--t-up", type=int, default=200, show_default=True, help="Largest increment")
@click.option("--sigma-max-sq", type=float, default=1.0, show_default=True, help="Maximum prediction variance")
@click.option("--cost-model", type=click.Choice(["approx", "exact"]), default="approx", show_default=True)
@click.option("--prior", type=click.Choice(["auto", "chain", "literal"]), default="auto", show_default=True)
@click.option("--beta", type=float, default=0.5, show_default=True, help="Discount factor (adp_markov, dp_source_coding)")
@click.option("--gamma", type=float, default=0.1, show_default=True, help="Quality weight (adp_markov)")
@click.option("--dp-t-max", type=int, default=20, show_default=True, help="Largest DP increment")
@click.option("--allow-large-increments", is_flag=True, help="Allow DP increments near the sojourn times")
@click.option("--recon", type=click.Choice(RECONSTRUCTION_METHODS), help="Reconstruct and report rate/distortion")
@click.option("--recon-order", type=int, default=1, show_default=True, help="GLP predictor order")
@click.option("--acf-mode", type=click.Choice(ACF_MODES), default="model", show_default=True)
@click.option(
    "--recon-out",
    type=click.Path(dir_okay=False, path_type=Path),
    help="Write the reconstruction (t,truth,recon,abs_err) here",
)
@output_options()
@click.pass_context
def sample(ctx: click.Context, out: Optional[Path], fmt_name: str, **kw) -> None:
    """Run one sampling function over a trace and write its samples."""
    with domain_errors(ctx):
        cfg = _signal_config(kw)
        params = cfg.params()
        if kw["trace_path"] is not None:
            trace = read_trace_csv(kw["trace_path"], model=cfg.model, seed=kw["seed"])
        else:
            trace = generate(params, cfg.length, kw["seed"])

        rho = kw["rho"]
        sampler_cfg = None
        if kw["kind"] == "uniform_baseline":
            if kw["rate"] is None:
                raise click.UsageError("--rate is required for uniform_baseline")
            samples = run_uniform_baseline(trace, kw["rate"])
            rho = None
        else:
            sampler_cfg = SamplerConfig(
                kind=kw["kind"],
                period=kw["period"],
                order=kw["order"],
                cost_model=kw["cost_model"],
                prior=kw["prior"],
                beta=kw["beta"],
                gamma=kw["gamma"],
                dp_t_max=kw["dp_t_max"],
                allow_large_increments=kw["allow_large_increments"],
            )
            cost = None
            if kw["kind"] != "uniform":
                if rho is None:
                    raise click.UsageError(f"--rho is required for {kw['kind']}")
                cost = CostParams(rho=rho, sigma_max_sq=kw["sigma_max_sq"], t_up=kw["t_up"])
            samples = run_sampler(trace, build_sampler(sampler_cfg, params, cost))

        _emit(ctx, write_samples, (samples,), out, fmt_name)

        if kw["recon"] is not None:
            recon_cfg = ReconstructionConfig(
                method=kw["recon"],
                order=kw["recon_order"],
                acf_mode=kw["acf_mode"],
                measure="hamming" if trace.is_binary else "mse",
            )
            recon = reconstruct_samples(samples, recon_cfg, params, sampler_cfg)
            metrics = evaluate_run(trace, samples, recon, recon_cfg.measure, rho=rho)
            click.echo(
                f"rate={metrics.rate!r} distortion={metrics.distortion!r} cost={metrics.cost!r}",
                err=True,
            )
            if kw["recon_out"] is not None:
                write_recon(trace, recon, kw["recon_out"], fmt_name=fmt_name)


@cli.command()
@click.option(
    "--spec",
    "spec_path",
    required=True,
    type=click.Path(dir_okay=False, path_type=Path),
    help="Experiment spec (YAML)",
)
@click.option("--jobs", "-j", type=int, help="Worker processes (0 = every core; default from spec)")
@click.option(
    "--out",
    "-o",
    type=click.Path(file_okay=False, path_type=Path),
    help="Output directory (default from spec)",
)
@click.option("--format", "fmt_name", type=click.Choice(FORMATS), default="csv", show_default=True)
@click.pass_context
def run(
    ctx: click.Context,
    spec_path: Path,
    jobs: Optional[int],
    out: Optional[Path],
    fmt_name: str,
) -> None:
    """Run an experiment spec and write its results and manifest."""
    with domain_errors(ctx):
        spec = load_spec(spec_path)
        level = ctx.obj.get("log_level") or spec.logging.level
        setup_logger(replace(spec.logging, level=level))

        if jobs is not None and jobs < 0:
            raise click.BadParameter("must be a non-negative integer", param_hint="--jobs")

        result = ExperimentRunner(spec, jobs=jobs).run()

        storage = ResultStorage(out if out is not None else spec.output.directory)
        target = storage.save_result(result, fmt_name)
        manifest = run_metadata(spec, result)
        manifest["command"] = {"verb": "run", "spec": str(spec_path), "jobs": jobs, "format": fmt_name}
        storage.save_manifest(manifest, spec.name)
        click.echo(f"Wrote {target}")


@cli.command("solve-dp")
@click.option("--eps0", type=float, required=True, help="Transition probability out of 0")
@click.option("--eps1", type=float, required=True, help="Transition probability out of 1")
@click.option("--rho", type=float, required=True, help="Rate award")
@click.option("--beta", type=float, default=0.9, show_default=True, help="Discount factor")
@click.option(
    "--t-max",
    type=int,
    help="Largest increment (default floor(0.2 * min(1/eps0, 1/eps1)))",
)
@click.option("--tol", type=float, default=1e-10, show_default=True, help="Convergence tolerance")
@click.option("--max-iters", type=int, default=1_000_000, show_default=True)
@click.option("--allow-large-increments", is_flag=True, help="Allow t-max near the sojourn times")
@output_options(default_format="json")
@click.pass_context
def solve_dp(
    ctx: click.Context,
    eps0: float,
    eps1: float,
    rho: float,
    beta: float,
    t_max: Optional[int],
    tol: float,
    max_iters: int,
    allow_large_increments: bool,
    out: Optional[Path],
    fmt_name: str,
) -> None:
    """Solve the source-coding Bellman equation of a binary Markov signal."""
    with domain_errors(ctx):
        if not rho > 0:
            raise ValueError(f"rho must be positive, got {rho}")
        params = BinaryHmmParams(eps0=eps0, eps1=eps1)
        cfg = DpConfig(
            beta=beta,
            t_max=t_max if t_max is not None else max(1, increment_limit(params)),
            tol=tol,
            max_iters=max_iters,
            allow_large_increments=allow_large_increments,
        )
        policy = sc_value_iteration(params, rho, cfg)
        _emit(ctx, write_policy, (policy,), out, fmt_name)


@cli.command()
@click.option("--alpha0", type=float, required=True, help="Coefficient in regime 0")
@click.option("--alpha1", type=float, required=True, help="Coefficient in regime 1")
@click.option("--p", "p_sym", type=float, required=True, help="Symmetric transition probability")
@click.option("--rho", type=float, required=True, help="Rate award")
@click.option("--pe-low", type=float, required=True, help="Lower estimator error probability")
@click.option("--pe-up", type=float, required=True, help="Upper estimator error probability")
@click.option("--sigma-max-sq", type=float, default=1.0, show_default=True)
@click.option("--t-up", type=int, default=200, show_default=True)
@output_options(default_format="json")
@click.pass_context
def bounds(
    ctx: click.Context,
    alpha0: float,
    alpha1: float,
    p_sym: float,
    rho: float,
    pe_low: float,
    pe_up: float,
    sigma_max_sq: float,
    t_up: int,
    out: Optional[Path],
    fmt_name: str,
) -> None:
    """Rate and distortion bounds of the greedy sampler (symmetric chain)."""
    with domain_errors(ctx):
        params = MarkovAr1Params(alpha0=alpha0, alpha1=alpha1, p01=p_sym, p10=p_sym)
        cost = CostParams(rho=rho, sigma_max_sq=sigma_max_sq, t_up=t_up)
        _emit(ctx, write_bounds, (greedy_rd_bounds(params, cost, pe_low, pe_up),), out, fmt_name)


@cli.command()
@click.option(
    "--spec",
    "spec_path",
    type=click.Path(dir_okay=False, path_type=Path),
    help="Take signal, cost, rho sweep and pe values from a spec",
)
@click.option("--alpha0", type=float, help="Coefficient in regime 0")
@click.option("--alpha1", type=float, help="Coefficient in regime 1")
@click.option("--p", "p_sym", type=float, help="Symmetric transition probability")
@click.option("--pe", "pes", type=float, multiple=True, help="Error probability (repeatable)")
@click.option("--rho-min", type=float, default=0.05, show_default=True)
@click.option("--rho-max", type=float, default=100.0, show_default=True)
@click.option("--rho-num", type=int, default=40, show_default=True)
@click.option("--sigma-max-sq", type=float, default=1.0, show_default=True)
@click.option("--t-up", type=int, default=200, show_default=True)
@output_options()
@click.pass_context
def curves(
    ctx: click.Context,
    spec_path: Optional[Path],
    alpha0: Optional[float],
    alpha1: Optional[float],
    p_sym: Optional[float],
    pes: tuple,
    rho_min: float,
    rho_max: float,
    rho_num: int,
    sigma_max_sq: float,
    t_up: int,
    out: Optional[Path],
    fmt_name: str,
) -> None:
    """Analytical rate-distortion curves, one per error probability."""
    with domain_errors(ctx):
        if spec_path is not None:
            spec = load_spec(spec_path)
            params = spec.signal.params()
            rhos = spec.sweep.rho
            pe_values = list(pes) or spec.analytic.pe
            sigma_max_sq, t_up = spec.cost.sigma_max_sq, spec.cost.t_up
            name = spec.name
        else:
            if alpha0 is None or alpha1 is None or p_sym is None:
                raise click.UsageError("--alpha0, --alpha1 and --p are required without --spec")
            params = MarkovAr1Params(alpha0=alpha0, alpha1=alpha1, p01=p_sym, p10=p_sym)
            if not 0 < rho_min < rho_max or rho_num < 2:
                raise ValueError("rho range must satisfy 0 < rho_min < rho_max and rho_num >= 2")
            rhos = np.logspace(np.log10(rho_min), np.log10(rho_max), rho_num).tolist()
            pe_values = list(pes)
            name = "curves"

        if not isinstance(params, MarkovAr1Params):
            raise ValueError("analytic curves need a markov_ar1 signal")
        if not pe_values:
            raise ValueError("no error probabilities given (--pe or analytic.pe)")
        if not rhos:
            raise ValueError("no rho values given (sweep.rho)")

        result = ExperimentResult(
            name=name,
            curves=analytic_curves(params, rhos, pe_values, sigma_max_sq, t_up),
        )
        _emit(ctx, write_rd, (result,), out, fmt_name)


if __name__ == "__main__":
    cli()
