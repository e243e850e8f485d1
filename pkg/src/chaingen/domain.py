"""Core vocabulary: agents, households, activities, chains, and validation.

Times are integer minutes since midnight within a single day (0..1440);
1440 is legal only as an activity end, so chains never cross midnight.
Gaps between consecutive activities represent (unmodeled) travel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable

MINUTES_PER_DAY = 1440


class ActivityType(IntEnum):
    """The 15 aggregated daily activity categories."""

    HOME = 1
    WORK = 2
    SCHOOL = 3
    CAREGIVING = 4
    BUY_GOODS = 5
    BUY_SERVICES = 6
    BUY_MEALS = 7
    GENERAL_ERRANDS = 8
    RECREATIONAL = 9
    EXERCISE = 10
    VISIT_FRIENDS = 11
    HEALTH_CARE = 12
    RELIGIOUS = 13
    SOMETHING_ELSE = 14
    DROP_OFF_PICK_UP = 15

    @property
    def label(self) -> str:
        return _TYPE_LABELS[self.value]

    @classmethod
    def from_code(cls, code: int) -> "ActivityType":
        """Strict code lookup; out-of-range codes are an error, never a default."""
        try:
            return cls(code)
        except ValueError:
            raise ValueError(f"activity code {code} out of range 1..15") from None


_TYPE_LABELS = {
    1: "Home",
    2: "Work",
    3: "School",
    4: "Caregiving",
    5: "Buy goods",
    6: "Buy services",
    7: "Buy meals",
    8: "General errands",
    9: "Recreational",
    10: "Exercise",
    11: "Visit friends",
    12: "Health care",
    13: "Religious",
    14: "Something else",
    15: "Drop off/Pick up",
}

HOUSEHOLD_RELATIONSHIPS = ("head", "spouse", "child", "other")


def parse_hhmm(text: str) -> int:
    """Parse a zero-padded 'HH:MM' clock time to minutes since midnight.

    '24:00' maps to 1440 and is the only legal time past 23:59.
    """
    parts = text.split(":")
    if len(parts) != 2 or not all(p.isdigit() for p in parts):
        raise ValueError(f"bad time {text!r}: expected HH:MM")
    hours, minutes = int(parts[0]), int(parts[1])
    if hours == 24 and minutes == 0:
        return MINUTES_PER_DAY
    if not (0 <= hours <= 23 and 0 <= minutes <= 59):
        raise ValueError(f"bad time {text!r}: out of range")
    return hours * 60 + minutes


def format_hhmm(minute: int) -> str:
    """Render minutes since midnight as zero-padded 'HH:MM' ('24:00' for 1440)."""
    if not (0 <= minute <= MINUTES_PER_DAY):
        raise ValueError(f"minute {minute} out of range 0..1440")
    hours, minutes = divmod(minute, 60)
    return f"{hours:02d}:{minutes:02d}"


@dataclass(frozen=True)
class SocioProfile:
    """The nine-attribute demographic record driving generation."""

    agent_id: str
    gender: str
    age: int
    education: str
    student_status: str
    employment_status: str
    household_relationship: str
    income_level: str
    has_driver_license: bool
    location_descriptor: str

    def __post_init__(self) -> None:
        if self.age < 0:
            raise ValueError(f"{self.agent_id}: age must be >= 0")
        if self.household_relationship not in HOUSEHOLD_RELATIONSHIPS:
            raise ValueError(
                f"{self.agent_id}: relationship {self.household_relationship!r} "
                f"not in {HOUSEHOLD_RELATIONSHIPS}"
            )

    @property
    def is_student(self) -> bool:
        return self.student_status == "student"

    @property
    def is_worker(self) -> bool:
        return self.employment_status == "employed"


def profile_group_tags(profile: SocioProfile) -> list[str]:
    """Statistical slice tags for a profile ('student', 'worker'; possibly both)."""
    tags = []
    if profile.is_student:
        tags.append("student")
    if profile.is_worker:
        tags.append("worker")
    return tags


@dataclass(frozen=True)
class Household:
    household_id: str
    members: tuple[SocioProfile, ...]

    def __post_init__(self) -> None:
        if not self.members:
            raise ValueError(f"{self.household_id}: household is empty")
        ids = [m.agent_id for m in self.members]
        if len(set(ids)) != len(ids):
            raise ValueError(f"{self.household_id}: duplicate member ids")
        heads = [m for m in self.members if m.household_relationship == "head"]
        if len(heads) != 1:
            raise ValueError(
                f"{self.household_id}: expected exactly one head, found {len(heads)}"
            )

    @property
    def member_ids(self) -> frozenset[str]:
        return frozenset(m.agent_id for m in self.members)

    def member(self, agent_id: str) -> SocioProfile:
        for m in self.members:
            if m.agent_id == agent_id:
                return m
        raise KeyError(f"{agent_id} not in household {self.household_id}")

    def coordination_order(self) -> list[SocioProfile]:
        """Generation order: head, spouse, children by age descending, others."""
        rank = {"head": 0, "spouse": 1, "child": 2, "other": 3}
        return sorted(
            self.members,
            key=lambda m: (rank[m.household_relationship], -m.age, m.agent_id),
        )


@dataclass(frozen=True)
class Activity:
    """One timed activity; participants are household co-participants, owner excluded."""

    activity_type: ActivityType
    start: int
    end: int
    participants: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "activity_type", ActivityType(self.activity_type))
        object.__setattr__(self, "participants", frozenset(self.participants))

    @property
    def duration(self) -> int:
        return self.end - self.start

    def shifted_to(self, start: int, end: int) -> "Activity":
        return Activity(self.activity_type, start, end, self.participants)


@dataclass(frozen=True)
class ActivityChain:
    """An agent's full-day chain: ordered, non-overlapping timed activities."""

    owner: str
    household_id: str
    activities: tuple[Activity, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "activities", tuple(self.activities))

    def __len__(self) -> int:
        return len(self.activities)


def chain_length(chain: ActivityChain) -> int:
    """Number of activities in the chain."""
    return len(chain.activities)


@dataclass(frozen=True)
class Violation:
    """One structural defect found by validate_chain; violations are data, not errors."""

    code: str
    message: str
    activity_index: int = -1

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


def validate_chain(chain: ActivityChain, household: Household) -> list[Violation]:
    """Check a chain against all structural invariants.

    Returns the complete list of violations (empty list means the chain is ok).
    Total over any syntactically well-formed chain; never raises.
    """
    violations: list[Violation] = []
    if not chain.activities:
        return [Violation("empty_chain", "chain has no activities")]
    if chain.owner not in household.member_ids:
        violations.append(
            Violation("foreign_owner", f"owner {chain.owner} not in household roster")
        )

    for i, act in enumerate(chain.activities):
        if act.start < 0 or act.end > MINUTES_PER_DAY:
            violations.append(
                Violation(
                    "out_of_day",
                    f"activity {i} [{act.start},{act.end}] outside 0..1440",
                    i,
                )
            )
        if act.start >= MINUTES_PER_DAY:
            violations.append(
                Violation("out_of_day", f"activity {i} starts at or after 24:00", i)
            )
        if act.start >= act.end:
            violations.append(
                Violation(
                    "reversed_times",
                    f"activity {i} start {act.start} not before end {act.end}",
                    i,
                )
            )
        if chain.owner in act.participants:
            violations.append(
                Violation("owner_participant", f"activity {i} lists the owner", i)
            )
        foreign = act.participants - household.member_ids
        if foreign:
            violations.append(
                Violation(
                    "foreign_participant",
                    f"activity {i} names non-members {sorted(foreign)}",
                    i,
                )
            )

    for i in range(len(chain.activities) - 1):
        a, b = chain.activities[i], chain.activities[i + 1]
        if a.start > b.start:
            violations.append(
                Violation("unordered", f"activity {i + 1} starts before activity {i}", i + 1)
            )
        elif a.end > b.start:
            violations.append(
                Violation(
                    "overlap",
                    f"activities {i} and {i + 1} overlap "
                    f"([{a.start},{a.end}] vs [{b.start},{b.end}])",
                    i,
                )
            )
    return violations


# --- Canonical chain record (JSONL store schema) --------------------------------
#
# {"owner": ..., "household_id": ..., "activities":
#   [{"type": int, "start": "HH:MM", "end": "HH:MM", "participants": [ids]}]}


def chain_to_record(chain: ActivityChain) -> dict:
    return {
        "owner": chain.owner,
        "household_id": chain.household_id,
        "activities": [
            {
                "type": int(a.activity_type),
                "start": format_hhmm(a.start),
                "end": format_hhmm(a.end),
                "participants": sorted(a.participants),
            }
            for a in chain.activities
        ],
    }


def record_to_chain(record: dict) -> ActivityChain:
    activities = tuple(
        Activity(
            ActivityType.from_code(int(item["type"])),
            parse_hhmm(item["start"]),
            parse_hhmm(item["end"]),
            frozenset(item.get("participants", ())),
        )
        for item in record["activities"]
    )
    return ActivityChain(record["owner"], record["household_id"], activities)


def chain_to_json_line(chain: ActivityChain) -> str:
    """Byte-stable single-line encoding used by the chain store."""
    return json.dumps(chain_to_record(chain), sort_keys=True, separators=(",", ":"))


def chains_by_household(chains: Iterable[ActivityChain]) -> dict[str, list[ActivityChain]]:
    grouped: dict[str, list[ActivityChain]] = {}
    for chain in chains:
        grouped.setdefault(chain.household_id, []).append(chain)
    return grouped


def carve_window(
    activities: Iterable[Activity], start: int, end: int
) -> tuple[Activity, ...]:
    """Free the minutes [start, end) by trimming or splitting whatever occupies them.

    Fragments keep their activity type but drop participants: a trimmed window
    no longer lines up with any partner's claim, so carrying the claim along
    would manufacture a mismatch. Pieces shorter than a minute are dropped.
    """
    out: list[Activity] = []
    for act in activities:
        if act.end <= start or act.start >= end:
            out.append(act)
            continue
        if act.start < start:
            out.append(Activity(act.activity_type, act.start, start))
        if act.end > end:
            out.append(Activity(act.activity_type, end, act.end))
    return tuple(sorted(out, key=lambda a: (a.start, a.end)))


def insert_activity(
    activities: Iterable[Activity], activity: Activity
) -> tuple[Activity, ...]:
    """Insert one activity, keeping the sequence sorted by (start, end)."""
    return tuple(sorted([*activities, activity], key=lambda a: (a.start, a.end)))
