"""
File formats: trajectory CSV, mixture/profile JSON, simulation event logs.

Trajectory CSV has the header ``label,t,rank,jump_t``; ``label`` and
``jump_t`` are optional on input, and files without a header are read by
column count (``t,rank`` / ``label,t,rank`` / ``label,t,rank,jump_t``). A
``jump_t`` cell is a time, empty, or ``unknown`` for an item whose jump time
must be fitted. Numbers are written in shortest round-trip form.
"""
import io
import logging
import math
from pathlib import Path
from typing import Literal

import pandas as pd

from app.exceptions import DomainValidationError, TrajectoryFormatError
from app.schemas.mixture import InitialProfile, RateMixture
from app.schemas.ranking import TrackedTrajectory, Trajectory

logger = logging.getLogger(__name__)

MissingJump = Literal["zero", "unknown", "error"]

COLUMNS = ("label", "t", "rank", "jump_t")
UNKNOWN = "unknown"
_POSITIONAL = {2: ("t", "rank"), 3: ("label", "t", "rank"), 4: COLUMNS}


def format_number(value: float) -> str:
    value = float(value)
    if value.is_integer() and abs(value) < 2 ** 53:
        return str(int(value))
    return repr(value)


def format_time(value: float) -> str:
    return repr(float(value))


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _read_table(path) -> tuple[pd.DataFrame, int]:
    """Raw string cells with canonical column names, plus the file line of the first data row."""
    try:
        raw = pd.read_csv(path, dtype=str, header=None, keep_default_na=False, skip_blank_lines=True)
    except pd.errors.EmptyDataError:
        raise TrajectoryFormatError("file contains no data")
    except pd.errors.ParserError as exc:
        raise TrajectoryFormatError(f"malformed CSV: {exc}")

    headerless = _is_number(raw.iat[0, 0]) or (raw.shape[1] > 2 and _is_number(raw.iat[0, 1]))
    if headerless:
        first_line = 1
        names = _POSITIONAL.get(raw.shape[1])
        if names is None:
            raise TrajectoryFormatError(f"expected 2 to 4 columns, found {raw.shape[1]}", line=1)
        raw.columns = list(names)
    else:
        first_line = 2
        header = [str(c).strip() for c in raw.iloc[0]]
        unknown = sorted(set(header) - set(COLUMNS))
        if unknown:
            raise TrajectoryFormatError(f"unknown columns {unknown}", line=1)
        if "t" not in header or "rank" not in header:
            raise TrajectoryFormatError("header must name the columns t and rank", line=1)
        raw = raw.iloc[1:].reset_index(drop=True)
        raw.columns = header
    if raw.empty:
        raise TrajectoryFormatError("file contains no observations")
    return raw, first_line


def _parse_float(text: str, what: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise TrajectoryFormatError(f"{what} {text!r} is not a number", line=line)
    if not math.isfinite(value):
        raise TrajectoryFormatError(f"{what} {text!r} is not finite", line=line)
    return value


def ingest_trajectories(path, missing_jump: MissingJump | None = None) -> list[Trajectory]:
    """
    Reads and validates trajectories, grouped by label in order of first
    appearance. ``missing_jump`` decides what a trajectory without a jump
    time becomes: re-zeroed at t = 0, offset-unknown, or an error; ``None``
    leaves it unmarked.
    """
    raw, first_line = _read_table(path)
    if "label" not in raw.columns:
        raw.insert(0, "label", "")
    if "jump_t" not in raw.columns:
        raw["jump_t"] = ""

    groups: dict[str, dict] = {}
    for row, record in enumerate(raw.itertuples(index=False)):
        line = first_line + row
        label = str(record.label)
        t = _parse_float(record.t.strip(), "time", line)
        rank = _parse_float(record.rank.strip(), "rank", line)
        if rank < 1:
            raise TrajectoryFormatError(f"rank {record.rank.strip()!r} is below 1", line=line)
        jump_text = record.jump_t.strip()

        group = groups.setdefault(label, {"times": [], "ranks": [], "jump": jump_text, "line": line})
        if group["times"] and t <= group["times"][-1]:
            raise TrajectoryFormatError(
                f"time {record.t.strip()!r} of trajectory {label!r} does not increase", line=line
            )
        if jump_text != group["jump"]:
            raise TrajectoryFormatError(f"trajectory {label!r} changes its jump_t marker", line=line)
        group["times"].append(t)
        group["ranks"].append(rank)

    trajectories = []
    for label, group in groups.items():
        jump_text = group["jump"]
        jump_t, unknown = None, False
        if jump_text == UNKNOWN:
            unknown = True
        elif jump_text:
            jump_t = _parse_float(jump_text, "jump time", group["line"])
        elif missing_jump == "zero":
            jump_t = 0.0
        elif missing_jump == "unknown":
            unknown = True
        elif missing_jump == "error":
            raise TrajectoryFormatError(f"trajectory {label!r} has no jump_t marker", line=group["line"])
        trajectories.append(Trajectory(
            label=label,
            times=tuple(group["times"]),
            ranks=tuple(group["ranks"]),
            jump_t=jump_t,
            offset_unknown=unknown,
        ))
    logger.info(f"read {len(trajectories)} trajectories ({sum(t.size for t in trajectories)} points) from {path}")
    return trajectories


def emit_trajectories(trajectories: list[Trajectory], path=None) -> str:
    """Writes the canonical four-column form; returns the text when ``path`` is None."""
    rows = []
    for traj in trajectories:
        if traj.offset_unknown:
            jump = UNKNOWN
        elif traj.jump_t is not None:
            jump = format_time(traj.jump_t)
        else:
            jump = ""
        for t, rank in zip(traj.times, traj.ranks):
            rows.append((traj.label, format_time(t), format_number(rank), jump))
    frame = pd.DataFrame(rows, columns=list(COLUMNS))
    return write_table(frame, path)


def write_table(frame: pd.DataFrame, path=None, comment: str | None = None) -> str:
    """CSV with newline line ends, optionally behind a ``#`` comment line; returns the text."""
    buffer = io.StringIO()
    if comment is not None:
        buffer.write(f"# {comment}\n")
    frame.to_csv(buffer, index=False, lineterminator="\n")
    text = buffer.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def load_mixture(path) -> RateMixture:
    return RateMixture.model_validate_json(Path(path).read_text())


def dump_mixture(m: RateMixture, path=None) -> str:
    text = m.model_dump_json(indent=2) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def load_profile(path) -> InitialProfile:
    return InitialProfile.model_validate_json(Path(path).read_text())


def dump_profile(p: InitialProfile, path=None) -> str:
    text = p.model_dump_json(indent=2) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def write_event_log(log, path=None) -> str:
    """``t,particle,old_rank`` per jump, preceded by a ``#`` line naming the generator and seed."""
    frame = pd.DataFrame({
        "t": [format_time(t) for t in log.times],
        "particle": log.particles,
        "old_rank": log.old_ranks,
    })
    return write_table(frame, path, comment=log.header())


def read_event_log(path) -> tuple[str, pd.DataFrame]:
    """Header comment and the event table of a log written by ``write_event_log``."""
    with open(path) as handle:
        first = handle.readline()
    header = first[1:].strip() if first.startswith("#") else ""
    frame = pd.read_csv(path, comment="#", dtype={"t": float, "particle": "int64", "old_rank": "int64"})
    if list(frame.columns) != ["t", "particle", "old_rank"]:
        raise DomainValidationError(f"{path}: not an event log (columns {list(frame.columns)})")
    return header, frame


def tracked_to_trajectories(tracked: list[TrackedTrajectory]) -> list[Trajectory]:
    """
    One jump-aligned trajectory per excursion that starts with a jump and
    holds at least two samples, the minimum a fit accepts.
    """
    out, short = [], 0
    for traj in tracked:
        for k, exc in enumerate(traj.excursions):
            if not exc.from_jump:
                continue
            if len(exc.times) < 2:
                short += 1
                continue
            out.append(Trajectory(
                label=f"{traj.particle}/{k}",
                times=exc.times,
                ranks=tuple(float(r) for r in exc.ranks),
                jump_t=0.0,
            ))
    if short:
        logger.info(f"skipped {short} excursions shorter than two samples")
    return out


def write_tracked(tracked: list[TrackedTrajectory], path=None) -> str:
    return emit_trajectories(tracked_to_trajectories(tracked), path)
