"""Deterministic assembly of the five-section generation prompt.

The system prompt carries task description, verbalized population statistics,
generation guidelines, few-shot examples, and a live-feedback section; the
user message carries the agent's natural-language profile and household
roster. Identical inputs always yield byte-identical text (golden-tested).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import Mapping, Sequence

from .domain import (
    ActivityChain,
    ActivityType,
    Household,
    SocioProfile,
    chain_to_record,
    profile_group_tags,
)
from .stats import ReferenceStats, duration_histogram, time_bin_label

SECTION_LABELS = ("task", "statistics", "guidelines", "few_shot", "rag_feedback")
NO_FEEDBACK_SENTINEL = "no feedback available"
MIN_FEW_SHOT = 2
TOKEN_BUDGET = 1200

_SECTION_TITLES = {
    "task": "Task description",
    "statistics": "High-level statistical information",
    "guidelines": "Generation guidelines",
    "few_shot": "Few-shot examples",
    "rag_feedback": "Retrieval-augmented generation feedback",
}


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    user_text: str
    sections: tuple[tuple[str, str], ...]

    @property
    def section_labels(self) -> tuple[str, ...]:
        return tuple(label for label, _ in self.sections)

    def token_count(self) -> int:
        """Whitespace-split proxy token count over system plus user text."""
        return len(self.system_text.split()) + len(self.user_text.split())


def _load_template(name: str) -> str:
    return resources.files("chaingen.templates").joinpath(f"{name}.txt").read_text(
        encoding="utf-8"
    )


def render_profile(profile: SocioProfile) -> str:
    """One natural-language paragraph naming all nine demographic attributes."""
    license_clause = (
        "holds a driver license"
        if profile.has_driver_license
        else "does not hold a driver license"
    )
    return (
        f"This person (id {profile.agent_id}) is a {profile.age}-year-old "
        f"{profile.gender} living in {profile.location_descriptor}. "
        f"Education level: {profile.education}. Student status: "
        f"{profile.student_status}. Employment status: {profile.employment_status}. "
        f"Household role: {profile.household_relationship}. Income level: "
        f"{profile.income_level}. This person {license_clause}."
    )


def render_roster(household: Household) -> str:
    return "; ".join(
        f"{m.agent_id} ({m.household_relationship}, {m.age})"
        for m in household.members
    )


def render_chain_example(chain: ActivityChain) -> str:
    """One example chain in the exact wire schema the model must reply with."""
    return json.dumps(chain_to_record(chain)["activities"], separators=(",", ":"))


def select_few_shot(
    chains: Sequence[ActivityChain],
    profiles: Mapping[str, SocioProfile],
    profile: SocioProfile,
    k: int = 3,
) -> list[ActivityChain]:
    """First k reference chains whose owner shares the agent's student/worker group.

    Selection is positional, not random, so prompts are reproducible. When the
    matching group has fewer than k chains, the earliest remaining chains fill
    the gap.
    """
    wanted = set(profile_group_tags(profile))
    matching = [
        c
        for c in chains
        if c.owner in profiles
        and set(profile_group_tags(profiles[c.owner])) == wanted
    ]
    selected = matching[:k]
    if len(selected) < k:
        chosen = {id(c) for c in selected}
        for c in chains:
            if len(selected) >= k:
                break
            if id(c) not in chosen:
                selected.append(c)
    return selected


def build_prompt(
    profile: SocioProfile,
    stats: ReferenceStats,
    guidance: str | None,
    household_context: str | None,
    few_shot: Sequence[ActivityChain],
    household: Household | None = None,
) -> PromptBundle:
    """Assemble the system and user messages for one generation call."""
    if len(few_shot) < MIN_FEW_SHOT:
        raise ValueError(
            f"need at least {MIN_FEW_SHOT} few-shot examples, got {len(few_shot)}"
        )

    sections = (
        ("task", _load_template("task").strip()),
        ("statistics", _render_statistics(stats)),
        ("guidelines", _render_guidelines()),
        ("few_shot", _render_few_shot(few_shot)),
        ("rag_feedback", _render_feedback(guidance, household_context)),
    )
    system_text = "\n\n".join(
        f"## {_SECTION_TITLES[label]}\n{text}" for label, text in sections
    )
    user_text = (
        _load_template("user")
        .format(
            profile_paragraph=render_profile(profile),
            roster=render_roster(household) if household else profile.agent_id,
        )
        .strip()
    )
    return PromptBundle(system_text=system_text, user_text=user_text, sections=sections)


def _render_guidelines() -> str:
    type_codes = ", ".join(f"{int(t)}={t.label}" for t in ActivityType)
    return _load_template("guidelines").format(type_codes=type_codes).strip()


def _render_few_shot(few_shot: Sequence[ActivityChain]) -> str:
    examples = "\n".join(render_chain_example(c) for c in few_shot)
    return _load_template("few_shot").format(examples=examples).strip()


def _render_feedback(guidance: str | None, household_context: str | None) -> str:
    parts = [p for p in (guidance, household_context) if p]
    body = "\n".join(parts) if parts else NO_FEEDBACK_SENTINEL
    return _load_template("rag_feedback").format(feedback_body=body).strip()


def _render_statistics(stats: ReferenceStats) -> str:
    return (
        _load_template("statistics")
        .format(
            type_shares=_type_shares(stats),
            length_summary=_length_summary(stats),
            duration_summary=_duration_summary(stats),
            timing_summary=_timing_summary(stats),
            coordination_summary=_coordination_summary(stats),
        )
        .strip()
    )


def _pct(value: float) -> str:
    return f"{round(value * 100)}%"


def _type_shares(stats: ReferenceStats) -> str:
    dist = stats.type_dist
    parts = [
        f"{t.label} {_pct(dist[int(t) - 1])}"
        for t in ActivityType
        if round(dist[int(t) - 1] * 100) >= 1
    ]
    return ", ".join(parts) + "; any remaining types are each under 1%"


def _length_summary(stats: ReferenceStats) -> str:
    dist = stats.length_dist
    mode = max(range(len(dist)), key=lambda i: (dist[i], -i)) + 1
    mean = stats.n_activities / stats.n_chains
    shares = ", ".join(
        f"{i + 1}:{_pct(p)}" for i, p in enumerate(dist) if round(p * 100) >= 1
    )
    return (
        f"most often {mode} activities per day (average {mean:.1f}); "
        f"share per count {shares}"
    )


def _duration_summary(stats: ReferenceStats) -> str:
    q1 = _hist_quantile_minutes(stats.duration_hist.counts, 0.25)
    median = _hist_quantile_minutes(stats.duration_hist.counts, 0.5)
    q3 = _hist_quantile_minutes(stats.duration_hist.counts, 0.75)
    return (
        f"half of all activities last under {median} minutes; "
        f"the typical range is {q1}-{q3} minutes."
    )


def _hist_quantile_minutes(counts: Sequence[int], q: float) -> int:
    edges = duration_histogram().bin_edges
    total = sum(counts)
    target = q * total
    running = 0
    for i, c in enumerate(counts):
        running += c
        if running >= target and c:
            upper = edges[i + 1] if edges[i + 1] != float("inf") else edges[i] + 30
            return int((edges[i] + upper) / 2)
    return int(edges[-2])


def _timing_summary(stats: ReferenceStats) -> str:
    phrases = []
    for t in (ActivityType.WORK, ActivityType.SCHOOL, ActivityType.BUY_MEALS):
        start_h, end_h = stats.type_timing(t)
        if not start_h.total:
            continue
        start_mode = max(range(len(start_h.counts)), key=lambda i: (start_h.counts[i], -i))
        end_mode = max(range(len(end_h.counts)), key=lambda i: (end_h.counts[i], -i))
        phrases.append(
            f"{t.label} usually starts around {time_bin_label(start_mode)} "
            f"and ends around {time_bin_label(end_mode)}"
        )
    return ("; ".join(phrases) + ".") if phrases else "no per-activity timing available."


def _coordination_summary(stats: ReferenceStats) -> str:
    phrases = []
    for pair, who in (("head-spouse", "the spouse"), ("head-child", "a child")):
        rated = [
            (stats.joint_rates.rate(pair, t), t)
            for t in ActivityType
            if stats.joint_rates.denominators[pair][int(t) - 1] > 0
        ]
        top = sorted(rated, key=lambda rt: (-rt[0], int(rt[1])))[:3]
        top = [(r, t) for r, t in top if round(r * 100) >= 1]
        if top:
            inner = ", ".join(f"{t.label} {_pct(r)}" for r, t in top)
            phrases.append(f"{who} joins the head's activities most often for {inner}")
    return ("; ".join(phrases) + ".") if phrases else "no joint-activity data available."


def render_household_context_text(member_lines: Sequence[str], anchor_lines: Sequence[str]) -> str:
    """Compact textual digest of prior household schedules and coordination anchors."""
    parts = []
    if member_lines:
        parts.append("Already-generated household schedules: " + " | ".join(member_lines))
    if anchor_lines:
        parts.append(
            "Pre-established joint activities to honor (align type, time, and "
            "participants): " + " | ".join(anchor_lines)
        )
    return "\n".join(parts)
