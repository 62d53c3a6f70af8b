import functools
import json
import logging
import math
from enum import StrEnum
from pathlib import Path
from typing import Annotated

import numpy as np
import pandas as pd
import typer
from pydantic import ValidationError

from app.config import settings
from app.exceptions import ConvergenceError, DomainValidationError
from app.schemas.ranking import FitModel, FitProblem, ParetoParams
from app.schemas.solution import SolutionField
from app.services import io, pareto, simulate, solution
from app.services.fit import fit as run_fit
from app.services.mixture import front_position

logger = logging.getLogger(__name__)

app = typer.Typer(name="rankflow", help="Evaporating mixtures, ranking dynamics and ranking-curve fits.")


def _reported(command):
    """Maps domain failures to exit status 1 and numerical non-convergence to 2."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except (DomainValidationError, ValidationError) as exc:
            typer.echo(f"error: {exc}", err=True)
            raise typer.Exit(1)
        except ConvergenceError as exc:
            typer.echo(f"numerical failure: {exc}", err=True)
            raise typer.Exit(2)

    return wrapper


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        typer.echo(text, nl=False)
    else:
        out.write_text(text)
        logger.info(f"wrote {out}")


def _emit_table(frame: pd.DataFrame, out: Path | None) -> None:
    _emit(io.write_table(frame), out)


def _pareto_from(n: float | None, a: float | None, b: float | None) -> ParetoParams | None:
    given = [v is not None for v in (n, a, b)]
    if not any(given):
        return None
    if not all(given):
        raise typer.BadParameter("--N, --a and --b go together")
    return ParetoParams(N=n, a=a, b=b)


def _field(mixture: Path, profile: Path | None) -> SolutionField:
    m = io.load_mixture(mixture)
    if profile is None:
        return SolutionField.uniform(m)
    return SolutionField(mixture=m, profile=io.load_profile(profile))


def _time_grid(t_max: float, dt: float) -> np.ndarray:
    if not (dt > 0 and t_max >= 0):
        raise typer.BadParameter("need --dt > 0 and --t-max >= 0")
    steps = int(math.floor(t_max / dt + 1e-9))
    return dt * np.arange(steps + 1)


class Alignment(StrEnum):
    jump = "jump"
    clock = "clock"


class InitialOrder(StrEnum):
    uniform_random = "uniform-random"
    by_rate = "by-rate"


class MissingJump(StrEnum):
    zero = "zero"
    unknown = "unknown"
    error = "error"


PathOption = Annotated[Path, typer.Option(exists=True, dir_okay=False)]
OutOption = Annotated[Path | None, typer.Option("--out", help="Write here instead of stdout.")]


@app.command()
@_reported
def evaluate(
        mixture: PathOption,
        y: Annotated[list[float], typer.Option("--y", help="Positions in [0, 1); repeatable.")],
        t: Annotated[list[float], typer.Option("--t", help="Times >= 0; repeatable.")],
        profile: Annotated[Path | None, typer.Option(exists=True, dir_okay=False)] = None,
        out: OutOption = None,
):
    """Densities and velocity on the (y, t) grid as CSV."""
    field = _field(mixture, profile)
    header = ["y", "t", "branch", "v"] + [f"u_{i}" for i in range(field.mixture.size)]
    rows = []
    for ti in t:
        for yi in y:
            state = solution.sample_state(field, yi, ti)
            values = [io.format_time(state.y), io.format_time(state.t), state.branch.value, repr(state.v)]
            rows.append(values + [repr(u) for u in state.u])
    _emit_table(pd.DataFrame(rows, columns=header), out)


@app.command()
@_reported
def front(
        t_max: Annotated[float, typer.Option("--t-max")],
        dt: Annotated[float, typer.Option("--dt")],
        n: Annotated[float | None, typer.Option("--N")] = None,
        a: Annotated[float | None, typer.Option("--a")] = None,
        b: Annotated[float | None, typer.Option("--b")] = None,
        mixture: Annotated[Path | None, typer.Option(exists=True, dir_okay=False)] = None,
        out: OutOption = None,
):
    """Rank trajectory x_C(t) for Pareto parameters, or the front y_C(t) of a mixture."""
    params = _pareto_from(n, a, b)
    if (params is None) == (mixture is None):
        raise typer.BadParameter("give either --N/--a/--b or --mixture")
    times = _time_grid(t_max, dt)
    if params is not None:
        column, values = "x_C", pareto.rank_trajectory(params, times)
    else:
        column, values = "y_C", front_position(io.load_mixture(mixture), times)
    frame = pd.DataFrame({"t": [io.format_time(ti) for ti in times], column: [repr(v) for v in values.tolist()]})
    _emit_table(frame, out)


@app.command("simulate")
@_reported
def simulate_command(
        horizon: Annotated[float, typer.Option("--horizon")],
        mixture: Annotated[Path | None, typer.Option(exists=True, dir_okay=False)] = None,
        particles: Annotated[int | None, typer.Option("--particles")] = None,
        n: Annotated[float | None, typer.Option("--N")] = None,
        a: Annotated[float | None, typer.Option("--a")] = None,
        b: Annotated[float | None, typer.Option("--b")] = None,
        seed: Annotated[int, typer.Option("--seed")] = settings.DEFAULT_SEED,
        interval: Annotated[float, typer.Option("--interval")] = 1.0,
        track: Annotated[list[int] | None, typer.Option("--track")] = None,
        start_at_front: Annotated[bool, typer.Option("--start-at-front")] = False,
        align: Annotated[Alignment, typer.Option("--align")] = Alignment.jump,
        initial_order: Annotated[
            InitialOrder, typer.Option("--initial-order")
        ] = InitialOrder.uniform_random,
        events: Annotated[Path | None, typer.Option("--events")] = None,
        tracked: Annotated[Path | None, typer.Option("--tracked")] = None,
):
    """Move-to-front simulation: event log and tracked trajectories as CSV."""
    params = _pareto_from(n, a, b)
    if (params is None) == (mixture is None):
        raise typer.BadParameter("give either --N/--a/--b or --mixture with --particles")
    if params is not None:
        rates = pareto.pareto_rates(params).rates
    else:
        if particles is None:
            raise typer.BadParameter("--mixture needs --particles")
        rates = simulate.particle_rates(io.load_mixture(mixture), particles)

    if track:
        paths, sim = simulate.track_many(
            rates, horizon, seed, interval, track,
            initial_order=initial_order, start_at_front=start_at_front, align=align,
        )
        if tracked is not None:
            io.write_tracked(paths, tracked)
    else:
        sim = simulate.run(rates, horizon, seed, initial_order=initial_order)
    if events is not None:
        io.write_event_log(sim.log, events)
    summary = {"particles": int(rates.size), "events": sim.log.size, "horizon": sim.horizon, "rng": sim.log.header()}
    typer.echo(json.dumps(summary, indent=2))


def _interval(text: str) -> tuple[float, float]:
    lo, sep, hi = text.partition(":")
    if not sep:
        raise typer.BadParameter(f"exclusion {text!r} is not of the form lo:hi")
    return float(lo), float(hi)


@app.command("fit")
@_reported
def fit_command(
        data: PathOption,
        fix_n: Annotated[float | None, typer.Option("--fix-N")] = None,
        n_guess: Annotated[float | None, typer.Option("--N-guess")] = None,
        a_guess: Annotated[float, typer.Option("--a-guess")] = 1e-3,
        b_guess: Annotated[float, typer.Option("--b-guess")] = 0.5,
        b_min: Annotated[float, typer.Option("--b-min")] = 1e-6,
        b_max: Annotated[float, typer.Option("--b-max")] = 1.0 - 1e-9,
        missing_jump: Annotated[
            MissingJump, typer.Option("--missing-jump")
        ] = MissingJump.zero,
        exclude: Annotated[list[str] | None, typer.Option("--exclude", help="lo:hi; repeatable.")] = None,
        multi_start: Annotated[bool, typer.Option("--multi-start/--single-start")] = True,
        residuals: Annotated[Path | None, typer.Option("--residuals")] = None,
        out: OutOption = None,
):
    """Least-squares fit of the Pareto rank trajectory; FitResult JSON."""
    if fix_n is not None and n_guess is not None:
        raise typer.BadParameter("--fix-N and --N-guess exclude each other")
    problem = FitProblem(
        trajectories=tuple(io.ingest_trajectories(data, missing_jump)),
        model=FitModel.fixed_n if fix_n is not None else FitModel.free_n,
        N=fix_n,
        N_guess=n_guess,
        a_guess=a_guess,
        b_guess=b_guess,
        b_bounds=(b_min, b_max),
        exclude=tuple(_interval(e) for e in exclude or ()),
        multi_start=multi_start,
    )
    result = run_fit(problem)
    if residuals is not None:
        io.write_table(pd.DataFrame({"residual": [repr(r) for r in result.residuals]}), residuals)
    _emit(json.dumps(result.report(), indent=2) + "\n", out)
    if not result.converged:
        typer.echo("numerical failure: fit stopped before converging", err=True)
        raise typer.Exit(2)


@app.command()
@_reported
def verify(
        mixture: PathOption,
        profile: Annotated[Path | None, typer.Option(exists=True, dir_okay=False)] = None,
        h: Annotated[float, typer.Option("--h")] = 1e-4,
        points: Annotated[int, typer.Option("--points", help="Grid points per axis.")] = 12,
        t_max: Annotated[float, typer.Option("--t-max")] = 5.0,
        times: Annotated[list[float] | None, typer.Option("--time", help="Conservation times; repeatable.")] = None,
        quad_tol: Annotated[float, typer.Option("--quad-tol")] = 1e-10,
        horizon: Annotated[float, typer.Option("--horizon")] = 10.0,
        ode_tol: Annotated[float, typer.Option("--ode-tol")] = 1e-10,
        out: OutOption = None,
):
    """PDE residual, mass conservation and generator checks; JSON report."""
    field = _field(mixture, profile)
    ys, ts = np.meshgrid(np.linspace(0.05, 0.95, points), np.linspace(0.1, t_max, points))
    grid = solution.admissible_grid(field, (ys.ravel(), ts.ravel()), h)
    logger.info(f"{len(grid[0])} of {ys.size} grid points admissible at h={h!r}")
    report = solution.verify(
        field, grid, h=h, times=tuple(times or (0.1, 1.0, 10.0)),
        quad_tol=quad_tol, horizon=horizon, ode_tol=ode_tol,
    )
    _emit(report.model_dump_json(indent=2) + "\n", out)


@app.command("pareto-check")
@_reported
def pareto_check(
        n: Annotated[float, typer.Option("--N")],
        a: Annotated[float, typer.Option("--a")],
        b: Annotated[float, typer.Option("--b")],
        out: OutOption = None,
):
    """Incomplete-gamma identities and the discrete-vs-continuum rank gap; JSON report."""
    params = ParetoParams(N=n, a=a, b=b)
    pareto.check_exponent(b)
    p = np.logspace(-6, math.log10(50.0), 40)
    recurrence = 0.0
    for z in np.round(np.linspace(-0.9, 0.9, 19), 10):
        lhs = pareto.upper_incomplete_gamma(z + 1.0, p)
        rhs = z * pareto.upper_incomplete_gamma(z, p) + p ** z * np.exp(-p)
        recurrence = max(recurrence, float(np.max(np.abs(lhs - rhs) / np.abs(lhs))))

    x = np.logspace(-6, 1, 50)
    closed = pareto.relative_front_pareto(params, x / a)
    direct = pareto.relative_front_pareto_direct(params, x / a)
    identity = float(np.max(np.abs(closed - direct) / closed))

    report = {"recurrence_max": recurrence, "identity_max": identity, "discrete_gap": None, "short_time_ratio": None}
    if n == math.floor(n) and n >= 2:
        grid = np.logspace(-6, 3, 200) / a
        grid = grid[pareto.relative_front_pareto(params, grid) <= 0.99]
        report["discrete_gap"] = pareto.discrete_front_gap(params, grid)
    if b < 1:
        t = 1e-6 / a
        report["short_time_ratio"] = float(
            (pareto.rank_trajectory(params, t) - 1.0) / (pareto.short_time_coefficient(params) * t ** b)
        )
    _emit(json.dumps(report, indent=2) + "\n", out)


def run(argv: list[str] | None = None) -> int:
    """Console entry point; usage errors exit with status 1 like validation failures."""
    logging.basicConfig(level=settings.LOG_LEVEL)
    try:
        code = app(args=argv, prog_name="rankflow", standalone_mode=False)
    except typer.Abort:
        return 1
    except Exception as exc:
        # click usage errors carry their own rendering
        show = getattr(exc, "show", None)
        if show is None:
            raise
        show()
        return 1
    return code if isinstance(code, int) else 0
