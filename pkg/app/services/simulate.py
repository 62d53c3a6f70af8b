"""
Move-to-front stochastic ranking process.

Every particle jumps to rank 1 at its own Poisson rate; all particles that
were ahead of it slide back by one. Events are drawn from the superposed
process (one exponential clock at the total rate, the mover picked with
probability proportional to its rate) and applied in chunks by jit-compiled
Fenwick kernels, so each jump costs O(log n).
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from app.config import settings
from app.exceptions import DomainValidationError
from app.schemas.mixture import RateMixture
from app.schemas.ranking import EmpiricalFront, Excursion, TrackedTrajectory
from app.services import fenwick

logger = logging.getLogger(__name__)

InitialOrder = Literal["uniform-random", "by-rate"]
Alignment = Literal["jump", "clock"]

RNG_NAME = "numpy.PCG64"


class RankingState:
    """Mutable ranking of ``n`` particles; ranks are 1-based, particle ids 0-based."""

    def __init__(self, rates, order=None, clock: float = 0.0, spare: int | None = None):
        self.rates = np.asarray(rates, dtype=float)
        self.n = self.rates.size
        if self.n == 0:
            raise DomainValidationError("at least one particle is needed")
        order = np.arange(self.n) if order is None else np.asarray(order, dtype=np.int64)
        if order.shape != (self.n,) or not np.array_equal(np.sort(order), np.arange(self.n)):
            raise DomainValidationError("initial order must be a permutation of the particle ids")
        self.clock = float(clock)
        self._spare = settings.SIM_CHUNK_EVENTS if spare is None else spare
        self._layout(order)

    def _layout(self, order: np.ndarray) -> None:
        capacity = self.n + self._spare
        self.head = capacity - self.n
        self.particle_at = np.full(capacity + 1, -1, dtype=np.int64)
        self.particle_at[self.head + 1:] = order
        self.slot_of = np.empty(self.n, dtype=np.int64)
        self.slot_of[order] = np.arange(self.head + 1, capacity + 1)
        self.tree = fenwick.build((self.particle_at >= 0).astype(np.int64))

    @property
    def order(self) -> np.ndarray:
        """Particle ids by rank (index 0 holds rank 1)."""
        occupied = self.particle_at[self.head + 1:]
        return occupied[occupied >= 0]

    def rank_of(self, particle: int) -> int:
        return int(fenwick.prefix(self.tree, self.slot_of[particle]))

    def particle_at_rank(self, rank: int) -> int:
        if not 1 <= rank <= self.n:
            raise DomainValidationError(f"rank {rank!r} outside 1..{self.n}")
        return int(self.particle_at[fenwick.find(self.tree, rank)])

    def move_to_front(self, particle: int) -> int:
        """Jumps one particle to rank 1 and returns its previous rank."""
        return int(self.apply(np.array([particle], dtype=np.int64))[0])

    def apply(self, movers: np.ndarray) -> np.ndarray:
        if self.head < movers.size:
            self._layout(self.order)
            if self.head < movers.size:
                self._spare = movers.size
                self._layout(self.order)
        old_ranks = np.empty(movers.size, dtype=np.int64)
        self.head = fenwick.move_to_front(self.tree, self.slot_of, self.particle_at, self.head, movers, old_ranks)
        return old_ranks

    def check_permutation(self) -> None:
        order = self.order
        if order.size != self.n or not np.array_equal(np.sort(order), np.arange(self.n)):
            raise AssertionError("ranking is no longer a permutation")
        if not np.array_equal(self.slot_of[order], np.flatnonzero(self.particle_at >= 0)):
            raise AssertionError("slot index out of sync with the ranking")


@dataclass(frozen=True)
class EventLog:
    times: np.ndarray
    particles: np.ndarray
    old_ranks: np.ndarray
    initial_order: np.ndarray
    seed: int
    spawn_key: tuple[int, ...] = ()
    rng: str = RNG_NAME

    @property
    def size(self) -> int:
        return self.times.size

    def header(self) -> str:
        key = ",".join(str(k) for k in self.spawn_key)
        return f"rng={self.rng} seed={self.seed} spawn_key={key}"


@dataclass(frozen=True)
class SimulationRun:
    state: RankingState
    log: EventLog
    horizon: float


def particle_rates(m: RateMixture, n: int) -> np.ndarray:
    """n particle rates, component i getting round(rho_i n) particles by largest remainder."""
    if n < 1:
        raise DomainValidationError(f"particle count must be positive, got {n!r}")
    quota = m.weights * n
    counts = np.floor(quota).astype(np.int64)
    short = n - int(counts.sum())
    if short:
        # stable sort keeps ties in component order
        counts[np.argsort(-(quota - counts), kind="stable")[:short]] += 1
    return np.repeat(m.rates, counts)


def _as_seed(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    seed = settings.DEFAULT_SEED if seed is None else int(seed)
    if not 0 <= seed < 2 ** 64:
        raise DomainValidationError(f"seed must be a 64-bit unsigned integer, got {seed!r}")
    return np.random.SeedSequence(seed)


def _check_rates(rates, idle: Sequence[int] = ()) -> np.ndarray:
    rates = np.asarray(rates, dtype=float)
    if rates.ndim != 1 or rates.size == 0:
        raise DomainValidationError("at least one particle is needed")
    if not np.all(np.isfinite(rates)):
        raise DomainValidationError("rates must be finite")
    positive = rates > 0
    positive[list(idle)] = True
    if not np.all(positive) or np.any(rates < 0):
        raise DomainValidationError("every rate must be positive")
    if not np.any(rates > 0):
        raise DomainValidationError("no particle ever jumps")
    return rates


def _simulate(
        rates: np.ndarray,
        horizon: float,
        seed,
        initial_order: InitialOrder,
        lead: int | None = None,
) -> SimulationRun:
    if not horizon > 0:
        raise DomainValidationError(f"horizon must be positive, got {horizon!r}")
    sequence = _as_seed(seed)
    rng = np.random.Generator(np.random.PCG64(sequence))
    if initial_order == "uniform-random":
        order = rng.permutation(rates.size)
    elif initial_order == "by-rate":
        order = np.argsort(-rates, kind="stable")
    else:
        raise DomainValidationError(f"unknown initial order policy {initial_order!r}")

    state = RankingState(rates, order)
    times, movers, old_ranks = [], [], []
    if lead is not None:
        # a jump at t = 0, ahead of every drawn event
        times.append(np.zeros(1))
        movers.append(np.array([lead], dtype=np.int64))
        old_ranks.append(np.array([state.move_to_front(lead)], dtype=np.int64))

    total = float(np.sum(rates))
    weights = rates / total
    chunk = settings.SIM_CHUNK_EVENTS
    clock = 0.0
    while True:
        stamps = clock + np.cumsum(rng.exponential(1.0 / total, size=chunk))
        # static rates: one cdf per chunk draws the same jumpers a weight tree would
        picks = rng.choice(rates.size, size=chunk, p=weights)
        inside = int(np.searchsorted(stamps, horizon, side="right"))
        stamps, picks = stamps[:inside], picks[:inside]
        old_ranks.append(state.apply(picks))
        times.append(stamps)
        movers.append(picks)
        if settings.DEBUG:
            state.check_permutation()
        if inside < chunk:
            break
        clock = float(stamps[-1])
    state.clock = float(horizon)

    log = EventLog(
        times=np.concatenate(times),
        particles=np.concatenate(movers),
        old_ranks=np.concatenate(old_ranks),
        initial_order=order,
        seed=int(sequence.entropy),
        spawn_key=tuple(sequence.spawn_key),
    )
    logger.debug(f"simulated {log.size} events on {rates.size} particles up to t={horizon!r}")
    return SimulationRun(state=state, log=log, horizon=float(horizon))


def run(rates, horizon: float, seed=None, initial_order: InitialOrder = "uniform-random") -> SimulationRun:
    """Simulates the process on [0, horizon]; identical inputs give identical event logs."""
    logger.info(f"running ranking simulation: n={np.size(rates)}, T={horizon!r}, seed={seed!r}")
    return _simulate(_check_rates(rates), horizon, seed, initial_order)


def _excursions(
        log: EventLog,
        horizon: float,
        interval: float,
        particle: int,
        align: Alignment,
) -> list[Excursion]:
    start_rank = int(np.flatnonzero(log.initial_order == particle)[0]) + 1
    ranks = fenwick.follow(log.particles, log.old_ranks, particle, start_rank)
    jumps = log.times[log.particles == particle]
    starts = np.concatenate([[0.0], jumps])
    ends = np.concatenate([jumps, [np.inf]])
    excursions = []
    for k, (start, end) in enumerate(zip(starts, ends)):
        if start == end:
            continue
        if align == "jump":
            grid = start + interval * np.arange(int(np.floor((horizon - start) / interval)) + 1)
        else:
            grid = interval * np.arange(int(np.ceil(start / interval)), int(np.floor(horizon / interval)) + 1)
        grid = grid[(grid >= start) & (grid < end) & (grid <= horizon)]
        last = np.searchsorted(log.times, grid, side="right") - 1
        if ranks.size:
            sampled = np.where(last >= 0, ranks[np.maximum(last, 0)], start_rank)
        else:
            sampled = np.full(grid.size, start_rank)
        excursions.append(Excursion(
            start=float(start),
            from_jump=k > 0,
            times=tuple((grid - start).tolist()),
            ranks=tuple(int(r) for r in sampled),
        ))
    return excursions


def track_many(
        rates,
        horizon: float,
        seed,
        interval: float,
        particles: Sequence[int],
        initial_order: InitialOrder = "uniform-random",
        start_at_front: bool = False,
        align: Alignment = "jump",
) -> tuple[list[TrackedTrajectory], SimulationRun]:
    """
    Ranks of several particles from one simulation, sampled every
    ``interval`` after each of their jumps. Tracked particles may have rate
    zero. ``start_at_front`` needs a single tracked particle and makes it
    jump at t = 0.
    """
    if not interval > 0:
        raise DomainValidationError(f"sampling interval must be positive, got {interval!r}")
    if align not in ("jump", "clock"):
        raise DomainValidationError(f"unknown alignment {align!r}")
    rates = np.asarray(rates, dtype=float)
    particles = [int(p) for p in particles]
    for particle in particles:
        if not 0 <= particle < rates.size:
            raise DomainValidationError(f"tracked particle {particle!r} outside 0..{rates.size - 1}")
    if start_at_front and len(particles) != 1:
        raise DomainValidationError("start_at_front needs exactly one tracked particle")
    rates = _check_rates(rates, idle=particles)

    lead = particles[0] if start_at_front else None
    sim = _simulate(rates, horizon, seed, initial_order, lead=lead)
    tracked = [
        TrackedTrajectory(
            particle=p,
            n=rates.size,
            excursions=tuple(_excursions(sim.log, sim.horizon, interval, p, align)),
        )
        for p in particles
    ]
    return tracked, sim


def track(
        rates,
        horizon: float,
        seed,
        interval: float,
        particle: int,
        initial_order: InitialOrder = "uniform-random",
        start_at_front: bool = False,
        align: Alignment = "jump",
) -> TrackedTrajectory:
    tracked, _ = track_many(rates, horizon, seed, interval, [particle], initial_order, start_at_front, align)
    return tracked[0]


def _first_excursion(rates, horizon, seed, interval, particle) -> tuple[list[float], list[float]]:
    traj = track(rates, horizon, seed, interval, particle, start_at_front=True)
    first = traj.first_jump()
    if first is None:
        return [], []
    n = traj.n
    return list(first.times), [(r - 1) / n for r in first.ranks]


def simulate_ensemble(
        rates,
        horizon: float,
        seed,
        interval: float,
        particle: int,
        replicas: int,
        workers: int | None = None,
) -> list[tuple[list[float], list[float]]]:
    """
    Relative ranks (x - 1) / n of ``particle`` from its jump at t = 0 until
    its next jump, for ``replicas`` runs with streams spawned from ``seed``.
    """
    if replicas < 1:
        raise DomainValidationError(f"ensemble needs at least one replica, got {replicas!r}")
    workers = settings.SIM_WORKERS if workers is None else workers
    children = _as_seed(seed).spawn(replicas)
    args = [(rates, horizon, child, interval, particle) for child in children]
    logger.info(f"simulating ensemble of {replicas} replicas on {workers} worker(s)")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_first_excursion, *zip(*args)))
    return [_first_excursion(*a) for a in args]


def empirical_front(histories: Sequence[tuple[Sequence[float], Sequence[float]]], replicas: int | None = None) -> EmpiricalFront:
    """
    Pointwise mean and standard error of relative-rank series.

    Series may stop early (the tracked particle jumped again) but every grid
    must be a prefix of the longest one. The standard error of a point seen
    by a single replica is 0.
    """
    if replicas is not None and replicas != len(histories):
        raise DomainValidationError(f"expected {replicas} histories, got {len(histories)}")
    if not histories:
        raise DomainValidationError("ensemble needs at least one replica")
    grid = max((np.asarray(t, dtype=float) for t, _ in histories), key=len)
    table = np.full((len(histories), grid.size), np.nan)
    for row, (times, values) in enumerate(histories):
        times = np.asarray(times, dtype=float)
        if len(values) != times.size:
            raise DomainValidationError(f"replica {row}: {times.size} times but {len(values)} values")
        if not np.array_equal(times, grid[: times.size]):
            raise DomainValidationError(f"replica {row} is sampled on a different grid")
        table[row, : times.size] = values

    count = np.sum(~np.isnan(table), axis=0)
    keep = count > 0
    table, count, grid = table[:, keep], count[keep], grid[keep]
    mean = np.nanmean(table, axis=0)
    stderr = np.zeros_like(mean)
    several = count > 1
    if np.any(several):
        stderr[several] = np.nanstd(table[:, several], axis=0, ddof=1) / np.sqrt(count[several])
    return EmpiricalFront(
        times=grid.tolist(),
        mean=mean.tolist(),
        stderr=stderr.tolist(),
        count=count.tolist(),
        replicas=len(histories),
    )
