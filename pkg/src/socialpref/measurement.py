"""Preference measurement from slider ratings and the two-phase group schedule.

A participant rates every pair of four alternatives on a slider in [-1, 1]
(negative leans to the left alternative, positive to the right). The
preference between A and B is estimated through the common alternatives C
and D, and the six comparisons are split so that each of six group members
meets one comparison in phase 2 that the other five completed in phase 1.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

GROUP_SIZE = 6


class SchemaError(ValueError):
    """Input records do not fit the expected layout."""


@dataclass(frozen=True)
class SliderRecord:
    group_id: str
    subject_id: str
    left: str
    right: str
    slider: float
    chosen: str | None = None

    def __post_init__(self):
        if self.left == self.right:
            raise SchemaError(f"left and right alternative are both {self.left!r}")
        if not -1.0 <= self.slider <= 1.0:
            raise SchemaError(f"slider value {self.slider} outside [-1, 1]")
        if self.chosen is not None and self.chosen not in self.pair:
            raise SchemaError(f"chosen alternative {self.chosen!r} not in {sorted(self.pair)}")

    @property
    def pair(self) -> frozenset[str]:
        return frozenset((self.left, self.right))

    def slider_disagrees_with_choice(self) -> bool:
        if self.chosen is None or self.slider == 0:
            return False
        return (self.slider > 0) != (self.chosen == self.right)


@dataclass(frozen=True)
class ComparisonSet:
    """Four alternatives and their six unordered pairs ``C1..C6``."""

    alternatives: tuple[str, str, str, str]

    def __post_init__(self):
        if len(set(self.alternatives)) != 4:
            raise SchemaError("a comparison set needs four distinct alternatives")

    @property
    def comparisons(self) -> tuple[tuple[str, str], ...]:
        return tuple(itertools.combinations(self.alternatives, 2))


@dataclass(frozen=True)
class DeltaEstimate:
    """Signed preference between ``pair[0]`` and ``pair[1]``.

    ``value > 0`` means the second element is preferred.
    """

    pair: tuple[str, str]
    value: float
    delta: float
    preferred: str | None

    @property
    def indifferent(self) -> bool:
        return self.value == 0


@dataclass(frozen=True)
class Schedule:
    """Phase assignment of comparisons to subjects.

    ``phase1[s]`` is the set of comparison ids subject ``s`` completes without
    social information; ``phase2[s]`` is the one it completes afterwards.
    """

    phase1: tuple[frozenset[int], ...]
    phase2: tuple[int, ...]

    def validate(self, comparisons: Iterable[int] | None = None) -> bool:
        return validate_schedule(self, comparisons)


def orient_slider(record: SliderRecord, common: str) -> float:
    """Slider value re-signed so that positive favors ``common``."""
    if common not in record.pair:
        raise SchemaError(f"{common!r} is not part of the pair {sorted(record.pair)}")
    return record.slider if common == record.right else -record.slider


def delta_estimate(target: tuple[str, str], records: Sequence[SliderRecord]) -> DeltaEstimate:
    """Preference between ``target = (A, B)`` from the four related comparisons.

    For each common alternative X, ``(orient(A vs X) - orient(B vs X)) / 2``
    estimates how much more B is liked than A; the two estimates are averaged.
    """
    a, b = target
    if a == b:
        raise SchemaError("target pair needs two distinct alternatives")
    by_pair: dict[frozenset[str], SliderRecord] = {}
    for rec in records:
        if rec.pair in by_pair:
            raise SchemaError(f"duplicate record for pair {sorted(rec.pair)}")
        by_pair[rec.pair] = rec
    labels = set().union(*by_pair) if by_pair else set()
    commons = sorted(labels - {a, b})
    if len(commons) != 2:
        raise SchemaError(f"expected exactly two common alternatives, found {commons}")
    related = {frozenset((x, c)) for x in (a, b) for c in commons}
    if set(by_pair) != related:
        missing = sorted(sorted(p) for p in related - set(by_pair))
        extra = sorted(sorted(p) for p in set(by_pair) - related)
        raise SchemaError(f"related comparisons mismatch: missing {missing}, unexpected {extra}")

    estimates = []
    for c in commons:
        oa = orient_slider(by_pair[frozenset((a, c))], c)
        ob = orient_slider(by_pair[frozenset((b, c))], c)
        estimates.append((oa - ob) / 2.0)
    value = (estimates[0] + estimates[1]) / 2.0
    preferred = b if value > 0 else a if value < 0 else None
    return DeltaEstimate(pair=(a, b), value=value, delta=abs(value), preferred=preferred)


def subject_deltas(records: Sequence[SliderRecord]) -> list[DeltaEstimate]:
    """All six pairwise estimates for one subject's four-alternative set."""
    for rec in records:
        if rec.slider_disagrees_with_choice():
            logger.warning(
                "group %s subject %s: slider %.3g disagrees with choice %r on %s vs %s",
                rec.group_id, rec.subject_id, rec.slider, rec.chosen, rec.left, rec.right,
            )
    labels = sorted(set().union(*(r.pair for r in records)))
    if len(labels) != 4 or len(records) != 6:
        raise SchemaError(
            f"expected 6 comparisons of 4 alternatives, got {len(records)} over {labels}"
        )
    out = []
    for a, b in itertools.combinations(labels, 2):
        related = [r for r in records if len(r.pair & {a, b}) == 1]
        out.append(delta_estimate((a, b), related))
    return out


def nu_from_delta(delta: float, preferred: int) -> tuple[float, float]:
    if not 0.0 <= delta <= 1.0:
        raise SchemaError(f"delta {delta} outside [0, 1]")
    if preferred not in (0, 1):
        raise SchemaError(f"preferred index must be 0 or 1, got {preferred}")
    nu = [-delta / 2.0, -delta / 2.0]
    nu[preferred] = delta / 2.0
    return (nu[0], nu[1])


def make_schedule(seed: int | np.random.Generator) -> Schedule:
    """Random six-subject schedule; the phase-2 map is a uniform bijection."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    comparisons = range(1, GROUP_SIZE + 1)
    phase2 = tuple(int(c) + 1 for c in rng.permutation(GROUP_SIZE))
    phase1 = tuple(frozenset(comparisons) - {c} for c in phase2)
    return Schedule(phase1=phase1, phase2=phase2)


def validate_schedule(schedule: Schedule, comparisons: Iterable[int] | None = None) -> bool:
    """Every subject's phase-2 comparison was done in phase 1 by all others.

    Works for any number of subjects and comparisons.
    """
    phase1, phase2 = schedule.phase1, schedule.phase2
    if len(phase1) != len(phase2):
        return False
    if comparisons is not None:
        universe = set(comparisons)
        for p1, p2 in zip(phase1, phase2):
            if set(p1) | {p2} != universe or p2 in p1:
                return False
    for s, c in enumerate(phase2):
        if any(c not in phase1[o] for o in range(len(phase1)) if o != s):
            return False
    return True


def schedule_from_mapping(phase2: Mapping[Hashable, int] | Sequence[int], n_comparisons: int = 6):
    """Schedule where each subject does every comparison but its phase-2 one first."""
    seq = list(phase2.values()) if isinstance(phase2, Mapping) else list(phase2)
    universe = frozenset(range(1, n_comparisons + 1))
    return Schedule(phase1=tuple(universe - {c} for c in seq), phase2=tuple(seq))
