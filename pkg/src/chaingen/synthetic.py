"""Deterministic synthetic population and travel-diary generator.

Used to build the bundled fixtures and the offline experiment inputs: a
roster of households with demographic profiles, and one coordinated day of
activities per member. Joint activities are written reciprocally into every
participant's chain with identical windows, so a synthetic diary always
audits as fully consistent.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass
from pathlib import Path

from .domain import (
    Activity,
    ActivityChain,
    ActivityType,
    Household,
    SocioProfile,
    carve_window,
    insert_activity,
    validate_chain,
)

_EDUCATION = ("high school", "college", "graduate")
_INCOME = ("low", "middle", "high")
_LOCATION = ("urban", "suburban", "rural")
_SOLO_TYPES = (
    ActivityType.BUY_GOODS,
    ActivityType.BUY_SERVICES,
    ActivityType.GENERAL_ERRANDS,
    ActivityType.EXERCISE,
    ActivityType.HEALTH_CARE,
    ActivityType.RECREATIONAL,
)
_EVENT_SLOT_HOURS = (8, 10, 12, 14, 16, 18, 20)


def _rng(*parts) -> random.Random:
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


@dataclass(frozen=True)
class DiaryStyle:
    """Knobs that shape a synthetic population's day; two different styles
    stand in for two different survey datasets."""

    wake_earliest: int = 360
    wake_spread: int = 120
    work_start_earliest: int = 420
    work_start_spread: int = 120
    work_hours: int = 8
    school_start: int = 480
    school_end: int = 900
    dinner_prob: float = 0.7
    family_outing_prob: float = 0.45
    errand_pair_prob: float = 0.3
    extra_solo_max: int = 2
    employment_rate: float = 0.75


DEFAULT_STYLE = DiaryStyle()
ALT_STYLE = DiaryStyle(
    wake_earliest=300,
    wake_spread=90,
    work_start_earliest=480,
    work_start_spread=90,
    work_hours=9,
    school_start=510,
    school_end=870,
    dinner_prob=0.5,
    family_outing_prob=0.25,
    errand_pair_prob=0.45,
    extra_solo_max=3,
    employment_rate=0.6,
)


def _make_member(
    rng: random.Random,
    agent_id: str,
    relationship: str,
    style: DiaryStyle,
) -> SocioProfile:
    if relationship == "child":
        age = rng.randint(6, 17)
        student, employed = "student", "not employed"
        license_ = age >= 16 and rng.random() < 0.5
        education = "high school"
    else:
        age = rng.randint(26, 64) if relationship != "other" else rng.randint(18, 80)
        employed = "employed" if rng.random() < style.employment_rate else "not employed"
        student = "student" if rng.random() < 0.06 else "not student"
        license_ = rng.random() < 0.9
        education = rng.choice(_EDUCATION)
    return SocioProfile(
        agent_id=agent_id,
        gender=rng.choice(("female", "male")),
        age=age,
        education=education,
        student_status=student,
        employment_status=employed,
        household_relationship=relationship,
        income_level=rng.choice(_INCOME),
        has_driver_license=license_,
        location_descriptor=rng.choice(_LOCATION),
    )


def make_roster(
    n_households: int,
    seed: int = 0,
    style: DiaryStyle = DEFAULT_STYLE,
    solo_only: bool = False,
) -> list[Household]:
    """Deterministic roster; solo_only produces single-member households."""
    roster = []
    for i in range(n_households):
        hid = f"h{i:04d}"
        rng = _rng(seed, "roster", hid)
        if solo_only:
            size = 1
        else:
            size = rng.choices((1, 2, 3, 4), weights=(20, 35, 27, 18))[0]
        relationships = ["head"]
        if size >= 2:
            relationships.append("spouse" if rng.random() < 0.75 else "other")
        relationships.extend(["child"] * (size - len(relationships)))
        members = tuple(
            _make_member(rng, f"{hid}a{j}", rel, style)
            for j, rel in enumerate(relationships)
        )
        roster.append(Household(hid, members))
    return roster


@dataclass(frozen=True)
class _JointEvent:
    activity_type: ActivityType
    start: int
    end: int
    members: frozenset[str]


def _household_events(
    rng: random.Random, household: Household, style: DiaryStyle
) -> list[_JointEvent]:
    members = household.coordination_order()
    head = members[0]
    spouse = next(
        (m for m in members if m.household_relationship == "spouse"), None
    )
    children = [m for m in members if m.household_relationship == "child"]
    others = [m for m in members if m.household_relationship == "other"]

    wanted: list[tuple[ActivityType, frozenset[str]]] = []
    if spouse is not None and rng.random() < style.dinner_prob:
        wanted.append(
            (ActivityType.BUY_MEALS, frozenset((head.agent_id, spouse.agent_id)))
        )
    for child in children[:2]:
        if rng.random() < style.family_outing_prob:
            wanted.append(
                (ActivityType.RECREATIONAL, frozenset((head.agent_id, child.agent_id)))
            )
    if spouse is not None and rng.random() < style.errand_pair_prob:
        wanted.append(
            (ActivityType.BUY_GOODS, frozenset((head.agent_id, spouse.agent_id)))
        )
    for other in others[:1]:
        if rng.random() < style.errand_pair_prob:
            wanted.append(
                (ActivityType.VISIT_FRIENDS, frozenset((head.agent_id, other.agent_id)))
            )

    wanted = wanted[: len(_EVENT_SLOT_HOURS)]
    slots = sorted(rng.sample(_EVENT_SLOT_HOURS, len(wanted)))
    events = []
    for (a_type, who), slot in zip(wanted, slots):
        start = slot * 60 + rng.choice((0, 15, 30))
        events.append(_JointEvent(a_type, start, start + rng.choice((45, 60)), who))
    return events


def _member_day(
    rng: random.Random, profile: SocioProfile, style: DiaryStyle
) -> tuple[Activity, ...]:
    """Solo skeleton: home-anchored day with work/school and a few errands."""
    wake = style.wake_earliest + 15 * rng.randint(0, style.wake_spread // 15)
    acts = [Activity(ActivityType.HOME, 0, wake)]
    cursor = wake
    if profile.is_student:
        start = max(cursor + 15, style.school_start)
        acts.append(Activity(ActivityType.SCHOOL, start, style.school_end))
        cursor = style.school_end
    elif profile.is_worker:
        start = max(
            cursor + 15,
            style.work_start_earliest + 15 * rng.randint(0, style.work_start_spread // 15),
        )
        end = min(start + style.work_hours * 60, 1380)
        acts.append(Activity(ActivityType.WORK, start, end))
        cursor = end
    for _ in range(rng.randint(0, style.extra_solo_max)):
        if cursor + 90 >= 1350:
            break
        start = cursor + 15 * rng.randint(1, 4)  # gaps read as travel time
        duration = rng.choice((30, 45, 60))
        acts.append(Activity(rng.choice(_SOLO_TYPES), start, start + duration))
        cursor = start + duration
    home_start = min(cursor + 15, 1425)
    acts.append(Activity(ActivityType.HOME, home_start, 1440))
    return tuple(acts)


def make_diaries(
    roster: list[Household],
    seed: int = 0,
    style: DiaryStyle = DEFAULT_STYLE,
) -> list[ActivityChain]:
    """One valid, household-consistent chain per roster member."""
    chains: list[ActivityChain] = []
    for household in roster:
        rng = _rng(seed, "diary", household.household_id)
        events = _household_events(rng, household, style)
        for member in household.coordination_order():
            day = _member_day(_rng(seed, "day", member.agent_id), member, style)
            for event in sorted(events, key=lambda e: e.start):
                if member.agent_id not in event.members:
                    continue
                day = carve_window(day, event.start, event.end)
                day = insert_activity(
                    day,
                    Activity(
                        event.activity_type,
                        event.start,
                        event.end,
                        event.members - {member.agent_id},
                    ),
                )
            chain = ActivityChain(member.agent_id, household.household_id, day)
            violations = validate_chain(chain, household)
            if violations:
                raise RuntimeError(
                    f"synthetic chain invalid for {member.agent_id}: {violations[0]}"
                )
            chains.append(chain)
    return chains


# --- roster persistence -------------------------------------------------------

ROSTER_SCHEMA_VERSION = 1


def save_roster(roster: list[Household], path: str | Path) -> Path:
    path = Path(path)
    payload = {
        "schema_version": ROSTER_SCHEMA_VERSION,
        "households": [
            {
                "household_id": h.household_id,
                "members": [
                    {
                        "agent_id": m.agent_id,
                        "gender": m.gender,
                        "age": m.age,
                        "education": m.education,
                        "student_status": m.student_status,
                        "employment_status": m.employment_status,
                        "household_relationship": m.household_relationship,
                        "income_level": m.income_level,
                        "has_driver_license": m.has_driver_license,
                        "location_descriptor": m.location_descriptor,
                    }
                    for m in h.members
                ],
            }
            for h in roster
        ],
    }
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return path


def load_roster(path: str | Path) -> list[Household]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("schema_version") != ROSTER_SCHEMA_VERSION:
        raise ValueError(f"unsupported roster schema: {data.get('schema_version')}")
    roster = []
    for entry in data["households"]:
        members = tuple(SocioProfile(**m) for m in entry["members"])
        roster.append(Household(entry["household_id"], members))
    return roster
