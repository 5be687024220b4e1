"""CSV schemas: readers and writers for every file the CLI produces or consumes."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from socialpref.choice import ChoiceSituation, Observation
from socialpref.inference.model import TASKS, TREATMENTS
from socialpref.measurement import DeltaEstimate, Schedule, SchemaError, SliderRecord

CHOICES_COLUMNS = (
    "individual_id", "task", "treatment", "decision_id", "delta", "preferred", "n_pref", "chose_pref",
)
SLIDERS_COLUMNS = ("group_id", "subject_id", "left", "right", "slider")
DELTAS_COLUMNS = ("group_id", "subject_id", "alt_a", "alt_b", "value", "delta", "preferred")
SCHEDULE_COLUMNS = ("subject", "phase", "comparison")
PEER_SAMPLE = 5


class RowError(SchemaError):
    def __init__(self, path, row: int, column: str, message: str):
        super().__init__(f"{path}: row {row}, column {column!r}: {message}")
        self.row = row
        self.column = column


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _read_rows(path, required: Sequence[str], optional: Sequence[str] = ()):
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if header is None:
            raise SchemaError(f"{path}: missing header")
        missing = [c for c in required if c not in header]
        unknown = [c for c in header if c not in required and c not in optional]
        if missing or unknown:
            raise SchemaError(f"{path}: header mismatch (missing {missing}, unexpected {unknown})")
        # data rows are numbered from 2; row 1 is the header
        for k, row in enumerate(reader, start=2):
            if None in row or any(v is None for v in row.values()):
                raise RowError(path, k, "*", "wrong number of fields")
            yield k, row


def _int(path, k, row, col, lo=None, hi=None) -> int:
    try:
        v = int(row[col])
    except ValueError:
        raise RowError(path, k, col, f"not an integer: {row[col]!r}") from None
    if (lo is not None and v < lo) or (hi is not None and v > hi):
        raise RowError(path, k, col, f"value {v} outside [{lo}, {hi}]")
    return v


def _float(path, k, row, col, lo=None, hi=None) -> float:
    try:
        v = float(row[col])
    except ValueError:
        raise RowError(path, k, col, f"not a number: {row[col]!r}") from None
    if not math.isfinite(v) or (lo is not None and v < lo) or (hi is not None and v > hi):
        raise RowError(path, k, col, f"value {v} outside [{lo}, {hi}]")
    return v


def _enum(path, k, row, col, allowed) -> str:
    v = row[col]
    if v not in allowed:
        raise RowError(path, k, col, f"{v!r} not one of {list(allowed)}")
    return v


# ----------------------------------------------------------------- choices


def parse_choices(path) -> list[Observation]:
    """Validated observations; ``nu`` is ``+-delta/2`` with the sign on ``preferred``."""
    out = []
    for k, row in _read_rows(path, CHOICES_COLUMNS):
        if not row["individual_id"]:
            raise RowError(path, k, "individual_id", "empty identifier")
        task = _enum(path, k, row, "task", TASKS)
        treatment = _enum(path, k, row, "treatment", TREATMENTS)
        delta = _float(path, k, row, "delta", 0.0, 1.0)
        preferred = _int(path, k, row, "preferred", 0, 1)
        n_pref = _int(path, k, row, "n_pref", 0, PEER_SAMPLE)
        chose = _int(path, k, row, "chose_pref", 0, 1)
        situation = ChoiceSituation.binary(delta, preferred, n_pref, PEER_SAMPLE)
        out.append(Observation(
            individual_id=row["individual_id"], task=task, treatment=treatment,
            situation=situation, chosen=preferred if chose else 1 - preferred,
            delta_measured=delta, preferred=preferred, decision_id=row["decision_id"], row=k,
        ))
    return out


def observations_to_frame(observations: Iterable[Observation]) -> pd.DataFrame:
    rows = []
    for o in observations:
        rows.append({
            "individual_id": o.individual_id, "task": o.task, "treatment": o.treatment,
            "decision_id": o.decision_id, "delta": o.delta_measured, "preferred": o.preferred,
            "n_pref": o.situation.counts[o.preferred], "chose_pref": int(o.chosen == o.preferred),
        })
    return pd.DataFrame(rows, columns=list(CHOICES_COLUMNS))


def frame_to_observations(df: pd.DataFrame) -> list[Observation]:
    out = []
    for k, r in enumerate(df.itertuples(index=False), start=2):
        p = int(r.preferred)
        out.append(Observation(
            individual_id=str(r.individual_id), task=r.task, treatment=r.treatment,
            situation=ChoiceSituation.binary(float(r.delta), p, int(r.n_pref), PEER_SAMPLE),
            chosen=p if int(r.chose_pref) else 1 - p, delta_measured=float(r.delta),
            preferred=p, decision_id=str(r.decision_id), row=k,
        ))
    return out


def write_table(df: pd.DataFrame, path) -> None:
    """CSV with a header; floats are written with full round-trip precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(df.columns)
        for row in df.itertuples(index=False):
            w.writerow([_fmt(v) for v in row])


def write_choices(choices: pd.DataFrame | Sequence[Observation], path) -> None:
    df = choices if isinstance(choices, pd.DataFrame) else observations_to_frame(choices)
    write_table(df[list(CHOICES_COLUMNS)], path)


# ------------------------------------------------------- sliders / deltas


def read_sliders(path) -> list[SliderRecord]:
    out = []
    for k, row in _read_rows(path, SLIDERS_COLUMNS, optional=("chosen",)):
        slider = _float(path, k, row, "slider", -1.0, 1.0)
        try:
            out.append(SliderRecord(
                group_id=row["group_id"], subject_id=row["subject_id"], left=row["left"],
                right=row["right"], slider=slider, chosen=row.get("chosen") or None,
            ))
        except SchemaError as exc:
            raise RowError(path, k, "left/right", str(exc)) from None
    return out


def deltas_frame(estimates: Iterable[tuple[str, str, DeltaEstimate]]) -> pd.DataFrame:
    rows = [
        (g, s, e.pair[0], e.pair[1], e.value, e.delta, e.preferred or "")
        for g, s, e in estimates
    ]
    return pd.DataFrame(rows, columns=list(DELTAS_COLUMNS))


def read_deltas(path) -> pd.DataFrame:
    rows = []
    for k, row in _read_rows(path, DELTAS_COLUMNS):
        rows.append((row["group_id"], row["subject_id"], row["alt_a"], row["alt_b"],
                     _float(path, k, row, "value", -1, 1), _float(path, k, row, "delta", 0, 1),
                     row["preferred"]))
    return pd.DataFrame(rows, columns=list(DELTAS_COLUMNS))


# --------------------------------------------------------------- schedule


def schedule_frame(schedule: Schedule) -> pd.DataFrame:
    rows = []
    for s, (p1, p2) in enumerate(zip(schedule.phase1, schedule.phase2), start=1):
        rows += [(s, 1, c) for c in sorted(p1)]
        rows.append((s, 2, p2))
    return pd.DataFrame(rows, columns=list(SCHEDULE_COLUMNS))


def read_schedule(path) -> Schedule:
    phase1: dict[int, set[int]] = {}
    phase2: dict[int, int] = {}
    for k, row in _read_rows(path, SCHEDULE_COLUMNS):
        s = _int(path, k, row, "subject", 1)
        phase = _int(path, k, row, "phase", 1, 2)
        c = _int(path, k, row, "comparison", 1)
        phase1.setdefault(s, set())
        if phase == 1:
            phase1[s].add(c)
        elif s in phase2:
            raise RowError(path, k, "phase", f"subject {s} has two phase-2 comparisons")
        else:
            phase2[s] = c
    subjects = sorted(phase1)
    if set(phase2) != set(subjects):
        raise SchemaError(f"{path}: every subject needs exactly one phase-2 comparison")
    return Schedule(tuple(frozenset(phase1[s]) for s in subjects), tuple(phase2[s] for s in subjects))


# --------------------------------------------------------------- generic


def read_table(path, columns: Sequence[str]) -> pd.DataFrame:
    df = pd.read_csv(path)
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise SchemaError(f"{path}: missing columns {missing}")
    return df
