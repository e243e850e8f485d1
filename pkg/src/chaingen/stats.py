"""Empirical distributions over activity chains, and Jensen-Shannon divergence.

All statistics are kept as raw counts so that two independently computed
bundles can be compared for exact equality; normalized distributions are
derived on demand. Binning is fixed (hourly time bins, 30-minute duration
bins, chain lengths capped at 12 with an overflow bucket) so divergence
values are reproducible across runs.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .domain import (
    Activity,
    ActivityChain,
    ActivityType,
    Household,
    MINUTES_PER_DAY,
    SocioProfile,
    chain_length,
    format_hhmm,
    parse_hhmm,
    profile_group_tags,
    validate_chain,
)

N_TIME_BINS = 24
N_DURATION_BINS = 29
MAX_CHAIN_LENGTH = 12  # lengths beyond this land in one overflow bucket
N_LENGTH_BINS = MAX_CHAIN_LENGTH + 1
NORMALIZATION_TOL = 1e-6

RELATION_PAIRS = ("head-spouse", "head-child", "any")

LENGTH_BIN_LABELS = tuple(str(n) for n in range(1, MAX_CHAIN_LENGTH + 1)) + (
    f"{MAX_CHAIN_LENGTH + 1}+",
)

DIARY_HEADER = (
    "household_id",
    "agent_id",
    "relationship",
    "group_tags",
    "activity_code",
    "start",
    "end",
    "participants",
)


def bin_time(t: int) -> int:
    """Hourly bin index for a minute-of-day; 1440 folds into the last bin."""
    if not (0 <= t <= MINUTES_PER_DAY):
        raise ValueError(f"time {t} out of range 0..1440")
    return min(t // 60, N_TIME_BINS - 1)


def bin_duration(minutes: int) -> int:
    """30-minute duration bin; bin 28 is open-ended (14 h and longer)."""
    if minutes < 1:
        raise ValueError(f"duration {minutes} must be >= 1 minute")
    return min(minutes // 30, N_DURATION_BINS - 1)


def length_bin(n: int) -> int:
    if n < 1:
        raise ValueError(f"chain length {n} must be >= 1")
    return min(n, MAX_CHAIN_LENGTH + 1) - 1


def time_bin_label(index: int) -> str:
    return f"{index:02d}:00"


def duration_bin_label(index: int) -> str:
    if index == N_DURATION_BINS - 1:
        return f"{30 * index}+"
    return f"{30 * index}-{30 * index + 30}"


@dataclass
class Histogram:
    """Counts over a fixed, strictly increasing set of bin edges."""

    bin_edges: tuple[float, ...]
    counts: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        edges = tuple(self.bin_edges)
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError("bin edges must be strictly increasing")
        n_bins = len(edges) - 1
        if not self.counts:
            self.counts = [0] * n_bins
        if len(self.counts) != n_bins:
            raise ValueError(f"expected {n_bins} counts, got {len(self.counts)}")
        if any(c < 0 for c in self.counts):
            raise ValueError("histogram counts must be non-negative")
        self.bin_edges = edges

    @property
    def total(self) -> int:
        return sum(self.counts)

    def add(self, bin_index: int, weight: int = 1) -> None:
        self.counts[bin_index] += weight

    def to_distribution(self) -> list[float]:
        return normalize(self.counts)

    def copy(self) -> "Histogram":
        return Histogram(self.bin_edges, list(self.counts))


def time_histogram() -> Histogram:
    return Histogram(tuple(60 * k for k in range(N_TIME_BINS + 1)))


def duration_histogram() -> Histogram:
    edges = tuple(30 * k for k in range(N_DURATION_BINS)) + (math.inf,)
    return Histogram(edges)


def normalize(counts: Sequence[float]) -> list[float]:
    """Counts to probabilities; zero-count bins stay in the support (no smoothing)."""
    total = float(sum(counts))
    if total <= 0:
        raise ValueError("cannot normalize an empty histogram")
    return [c / total for c in counts]


def jsd(p: Sequence[float], q: Sequence[float]) -> float:
    """Jensen-Shannon divergence, log base 2, so the value lies in [0, 1].

    0*log(0) is taken as 0; identical distributions give exactly 0 and
    disjoint supports give exactly 1.
    """
    pa = np.asarray(p, dtype=float)
    qa = np.asarray(q, dtype=float)
    if pa.shape != qa.shape or pa.ndim != 1:
        raise ValueError(f"arity mismatch: {pa.shape} vs {qa.shape}")
    if np.any(pa < 0) or np.any(qa < 0):
        raise ValueError("distributions must be non-negative")
    if abs(pa.sum() - 1.0) > NORMALIZATION_TOL or abs(qa.sum() - 1.0) > NORMALIZATION_TOL:
        raise ValueError("distributions must sum to 1")
    m = 0.5 * (pa + qa)
    value = 0.5 * _kl_bits(pa, m) + 0.5 * _kl_bits(qa, m)
    # Guard float dust at the boundaries; JSD is provably within [0, 1] in base 2.
    return float(min(max(value, 0.0), 1.0))


def _kl_bits(p: np.ndarray, m: np.ndarray) -> float:
    mask = p > 0
    pm, mm = p[mask], m[mask]
    # m >= p/2 wherever p > 0, so a zero here is subnormal underflow; the true
    # log-ratio term is then at most p bits, safely treated as 0.
    return float(np.sum(pm * np.log2(pm / np.where(mm > 0, mm, pm))))


def bernoulli_jsd(rate_a: float, rate_b: float) -> float:
    """JSD between two participation rates viewed as Bernoulli distributions."""
    return jsd([rate_a, 1.0 - rate_a], [rate_b, 1.0 - rate_b])


@dataclass
class JointRateTable:
    """Per relation-pair, per activity-type joint-participation counts.

    numerators[pair][t] counts activities of type t+1 (owned by the pair's
    reference member) in which the paired relation participates;
    denominators[pair][t] counts all such activities. The 'any' pair covers
    every owner and any co-participant.
    """

    numerators: dict[str, list[int]] = field(
        default_factory=lambda: {p: [0] * len(ActivityType) for p in RELATION_PAIRS}
    )
    denominators: dict[str, list[int]] = field(
        default_factory=lambda: {p: [0] * len(ActivityType) for p in RELATION_PAIRS}
    )

    def rate(self, pair: str, activity_type: ActivityType) -> float:
        idx = int(activity_type) - 1
        den = self.denominators[pair][idx]
        return self.numerators[pair][idx] / den if den else 0.0

    def observe(self, pair: str, activity_type: ActivityType, joint: bool) -> None:
        idx = int(activity_type) - 1
        self.denominators[pair][idx] += 1
        if joint:
            self.numerators[pair][idx] += 1


@dataclass
class ReferenceStats:
    """Empirical distribution bundle for one population (or one slice of it)."""

    type_counts: list[int] = field(default_factory=lambda: [0] * len(ActivityType))
    start_hist: Histogram = field(default_factory=time_histogram)
    end_hist: Histogram = field(default_factory=time_histogram)
    duration_hist: Histogram = field(default_factory=duration_histogram)
    length_counts: list[int] = field(default_factory=lambda: [0] * N_LENGTH_BINS)
    joint_rates: JointRateTable = field(default_factory=JointRateTable)
    per_type_start: dict[int, Histogram] = field(default_factory=dict)
    per_type_end: dict[int, Histogram] = field(default_factory=dict)
    per_group: dict[str, "ReferenceStats"] = field(default_factory=dict)
    n_chains: int = 0
    n_activities: int = 0

    # -- derived distributions ----------------------------------------------
    @property
    def type_dist(self) -> list[float]:
        return normalize(self.type_counts)

    @property
    def length_dist(self) -> list[float]:
        return normalize(self.length_counts)

    @property
    def start_dist(self) -> list[float]:
        return self.start_hist.to_distribution()

    @property
    def end_dist(self) -> list[float]:
        return self.end_hist.to_distribution()

    @property
    def duration_dist(self) -> list[float]:
        return self.duration_hist.to_distribution()

    def type_timing(self, activity_type: ActivityType) -> tuple[Histogram, Histogram]:
        code = int(activity_type)
        start = self.per_type_start.setdefault(code, time_histogram())
        end = self.per_type_end.setdefault(code, time_histogram())
        return start, end

    # -- accumulation ---------------------------------------------------------
    def _observe_chain(self, chain: ActivityChain, household: Household | None) -> None:
        self.n_chains += 1
        self.length_counts[length_bin(chain_length(chain))] += 1
        owner_rel = household.member(chain.owner).household_relationship if household else None
        spouse_ids = child_ids = frozenset()
        if household is not None:
            spouse_ids = frozenset(
                m.agent_id for m in household.members if m.household_relationship == "spouse"
            )
            child_ids = frozenset(
                m.agent_id for m in household.members if m.household_relationship == "child"
            )
        for act in chain.activities:
            self.n_activities += 1
            self.type_counts[int(act.activity_type) - 1] += 1
            self.start_hist.add(bin_time(act.start))
            self.end_hist.add(bin_time(act.end))
            self.duration_hist.add(bin_duration(act.duration))
            start_h, end_h = self.type_timing(act.activity_type)
            start_h.add(bin_time(act.start))
            end_h.add(bin_time(act.end))
            self.joint_rates.observe(
                "any", act.activity_type, joint=bool(act.participants)
            )
            if owner_rel == "head":
                if spouse_ids:
                    self.joint_rates.observe(
                        "head-spouse",
                        act.activity_type,
                        joint=bool(act.participants & spouse_ids),
                    )
                if child_ids:
                    self.joint_rates.observe(
                        "head-child",
                        act.activity_type,
                        joint=bool(act.participants & child_ids),
                    )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ReferenceStats):
            return NotImplemented
        return _stats_payload(self) == _stats_payload(other)


def chains_to_stats(
    chains: Iterable[ActivityChain],
    profiles: Mapping[str, SocioProfile],
    households: Mapping[str, Household] | None = None,
) -> ReferenceStats:
    """Aggregate in-memory chains into a ReferenceStats bundle.

    Group slices (student/worker) are derived from the owners' profiles;
    joint rates need the household rosters to resolve relation pairs.
    """
    chain_list = list(chains)
    if not chain_list:
        raise ValueError("no chains to aggregate")
    stats = ReferenceStats()
    for chain in chain_list:
        household = households.get(chain.household_id) if households else None
        stats._observe_chain(chain, household)
        profile = profiles.get(chain.owner)
        if profile is None:
            continue
        for tag in profile_group_tags(profile):
            slice_stats = stats.per_group.setdefault(tag, ReferenceStats())
            slice_stats._observe_chain(chain, household)
    return stats


# --- travel-diary ingestion ------------------------------------------------------


class DiarySchemaError(ValueError):
    """The diary file header does not match the documented schema."""


@dataclass
class IngestResult:
    stats: ReferenceStats
    chains: list[ActivityChain]
    households: dict[str, Household]
    profiles: dict[str, SocioProfile]
    skipped: int
    skip_reasons: list[str]


def read_diary_rows(text: str) -> list[dict[str, str]]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or tuple(reader.fieldnames) != DIARY_HEADER:
        raise DiarySchemaError(
            f"diary header must be {','.join(DIARY_HEADER)}, got {reader.fieldnames}"
        )
    return list(reader)


def ingest_diary(rows: Iterable[dict[str, str]]) -> IngestResult:
    """Build ReferenceStats from travel-diary rows (one activity per row).

    Rows that fail validation are reported and skipped; an entire agent's
    chain is dropped if any of its rows is malformed or the assembled chain
    is structurally invalid.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("no usable records")

    by_agent: dict[str, list[dict[str, str]]] = {}
    agent_household: dict[str, str] = {}
    agent_relationship: dict[str, str] = {}
    agent_tags: dict[str, frozenset[str]] = {}
    household_members: dict[str, list[str]] = {}
    order: list[str] = []
    for row in rows:
        agent = row["agent_id"]
        if agent not in by_agent:
            by_agent[agent] = []
            order.append(agent)
            hid = row["household_id"]
            agent_household[agent] = hid
            agent_relationship[agent] = row["relationship"]
            agent_tags[agent] = frozenset(t for t in row["group_tags"].split(";") if t)
            household_members.setdefault(hid, []).append(agent)
        by_agent[agent].append(row)

    skip_reasons: list[str] = []
    chains: list[ActivityChain] = []
    households: dict[str, Household] = {}
    profiles: dict[str, SocioProfile] = {}
    for hid, members in household_members.items():
        try:
            households[hid] = _pseudo_household(
                hid, members, agent_relationship, agent_tags
            )
        except ValueError as exc:
            skip_reasons.append(f"{hid}: {exc}")
            continue
        for agent in members:
            profiles[agent] = households[hid].member(agent)

    for agent in order:
        hid = agent_household[agent]
        if hid not in households:
            skip_reasons.append(f"{agent}: household {hid} has a malformed roster")
            continue
        try:
            chain = _rows_to_chain(agent, hid, by_agent[agent])
        except ValueError as exc:
            skip_reasons.append(f"{agent}: {exc}")
            continue
        violations = validate_chain(chain, households[hid])
        if violations:
            skip_reasons.append(f"{agent}: {violations[0]}")
            continue
        chains.append(chain)

    if not chains:
        raise ValueError("no usable records")

    stats = ReferenceStats()
    for chain in chains:
        household = households[chain.household_id]
        stats._observe_chain(chain, household)
        for tag in sorted(agent_tags[chain.owner]):
            slice_stats = stats.per_group.setdefault(tag, ReferenceStats())
            slice_stats._observe_chain(chain, household)

    return IngestResult(
        stats=stats,
        chains=chains,
        households=households,
        profiles=profiles,
        skipped=len(skip_reasons),
        skip_reasons=skip_reasons,
    )


def _rows_to_chain(agent: str, household_id: str, rows: list[dict[str, str]]) -> ActivityChain:
    activities = []
    for row in rows:
        code = row["activity_code"]
        if not code.isdigit():
            raise ValueError(f"bad activity code {code!r}")
        participants = frozenset(p for p in row["participants"].split(";") if p)
        activities.append(
            Activity(
                ActivityType.from_code(int(code)),
                parse_hhmm(row["start"]),
                parse_hhmm(row["end"]),
                participants,
            )
        )
    activities.sort(key=lambda a: (a.start, a.end))
    return ActivityChain(agent, household_id, tuple(activities))


def _pseudo_household(
    hid: str,
    members: list[str],
    relationships: dict[str, str],
    tags: Mapping[str, frozenset[str]],
) -> Household:
    """Roster stub for joint-rate grouping and slice tags.

    Diary rows carry only ids, relationships, and group tags; the stub encodes
    the tags back into the status fields so profile_group_tags reproduces them.
    """
    profiles = tuple(
        SocioProfile(
            agent_id=agent,
            gender="unspecified",
            age=0,
            education="unspecified",
            student_status="student" if "student" in tags[agent] else "unspecified",
            employment_status="employed" if "worker" in tags[agent] else "unspecified",
            household_relationship=relationships[agent],
            income_level="unspecified",
            has_driver_license=False,
            location_descriptor="unspecified",
        )
        for agent in members
    )
    return Household(hid, profiles)


def chains_to_diary_rows(
    chains: Iterable[ActivityChain],
    profiles: Mapping[str, SocioProfile],
) -> list[dict[str, str]]:
    """Inverse of ingestion: write chains as diary rows (one activity per row)."""
    rows = []
    for chain in chains:
        profile = profiles[chain.owner]
        tags = ";".join(profile_group_tags(profile))
        for act in chain.activities:
            rows.append(
                {
                    "household_id": chain.household_id,
                    "agent_id": chain.owner,
                    "relationship": profile.household_relationship,
                    "group_tags": tags,
                    "activity_code": str(int(act.activity_type)),
                    "start": format_hhmm(act.start),
                    "end": format_hhmm(act.end),
                    "participants": ";".join(sorted(act.participants)),
                }
            )
    return rows


def write_diary_csv(path, rows: Iterable[dict[str, str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=DIARY_HEADER)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_diary_csv(path) -> list[dict[str, str]]:
    with open(path, "r", encoding="utf-8") as handle:
        return read_diary_rows(handle.read())


# --- persistence -----------------------------------------------------------------

STATS_SCHEMA_VERSION = 1


def _stats_payload(stats: ReferenceStats) -> dict:
    payload = {
        "type_counts": list(stats.type_counts),
        "start_counts": list(stats.start_hist.counts),
        "end_counts": list(stats.end_hist.counts),
        "duration_counts": list(stats.duration_hist.counts),
        "length_counts": list(stats.length_counts),
        "joint_numerators": {k: list(v) for k, v in stats.joint_rates.numerators.items()},
        "joint_denominators": {
            k: list(v) for k, v in stats.joint_rates.denominators.items()
        },
        "per_type_start": {
            str(code): list(h.counts)
            for code, h in sorted(stats.per_type_start.items())
            if h.total
        },
        "per_type_end": {
            str(code): list(h.counts)
            for code, h in sorted(stats.per_type_end.items())
            if h.total
        },
        "n_chains": stats.n_chains,
        "n_activities": stats.n_activities,
    }
    if stats.per_group:
        payload["per_group"] = {
            tag: _stats_payload(sub) for tag, sub in sorted(stats.per_group.items())
        }
    return payload


def _stats_from_payload(payload: dict) -> ReferenceStats:
    stats = ReferenceStats(
        type_counts=list(payload["type_counts"]),
        start_hist=Histogram(time_histogram().bin_edges, list(payload["start_counts"])),
        end_hist=Histogram(time_histogram().bin_edges, list(payload["end_counts"])),
        duration_hist=Histogram(
            duration_histogram().bin_edges, list(payload["duration_counts"])
        ),
        length_counts=list(payload["length_counts"]),
        n_chains=payload["n_chains"],
        n_activities=payload["n_activities"],
    )
    stats.joint_rates = JointRateTable(
        numerators={k: list(v) for k, v in payload["joint_numerators"].items()},
        denominators={k: list(v) for k, v in payload["joint_denominators"].items()},
    )
    for code, counts in payload.get("per_type_start", {}).items():
        stats.per_type_start[int(code)] = Histogram(time_histogram().bin_edges, list(counts))
    for code, counts in payload.get("per_type_end", {}).items():
        stats.per_type_end[int(code)] = Histogram(time_histogram().bin_edges, list(counts))
    for tag, sub in payload.get("per_group", {}).items():
        stats.per_group[tag] = _stats_from_payload(sub)
    return stats


def save_stats(stats: ReferenceStats, path) -> None:
    document = {"schema_version": STATS_SCHEMA_VERSION, **_stats_payload(stats)}
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(document, handle, indent=2, sort_keys=True)
        handle.write("\n")


def load_stats(path) -> ReferenceStats:
    with open(path, "r", encoding="utf-8") as handle:
        document = json.load(handle)
    version = document.get("schema_version")
    if version != STATS_SCHEMA_VERSION:
        raise ValueError(f"unsupported stats schema version {version}")
    return _stats_from_payload(document)
