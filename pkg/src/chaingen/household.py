"""Household coordination: chain store, context retrieval, claim matching, repair.

A "joint claim" is one activity naming one co-participant; an activity naming
two partners carries two claims. Claims are counted owner-side only, so a
fully reciprocated joint activity between two members contributes two matched
claims, one per side.
"""

from __future__ import annotations

import csv
import json
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path

from .domain import (
    Activity,
    ActivityChain,
    ActivityType,
    Household,
    carve_window,
    chain_to_json_line,
    format_hhmm,
    insert_activity,
    record_to_chain,
    validate_chain,
)
from .prompts import render_household_context_text

DEFAULT_TOLERANCE = 15
SNAP_WINDOW = 60
MAX_REGENERATIONS = 2

AUDIT_HEADER = ("owner", "activity_index", "partner", "matched", "reason")


class ChainStore:
    """Append-only store of committed chains: JSONL file plus an offset index.

    Pass path=None for a memory-only store (used when persistence is not
    wanted, e.g. hand-built audit fixtures). Appends to a file-backed store
    are durable immediately; the index sidecar is written on demand.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._chains: list[ActivityChain] = []
        self._by_owner: dict[str, ActivityChain] = {}
        self._by_household: dict[str, list[ActivityChain]] = {}
        self._offsets: dict[str, list[int]] = {}
        self._size = 0
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        assert self.path is not None
        with open(self.path, "rb") as fh:
            offset = 0
            for raw in fh:
                text = raw.decode("utf-8").strip()
                if text:
                    self._register(record_to_chain(json.loads(text)), offset)
                offset += len(raw)
            self._size = offset

    def _register(self, chain: ActivityChain, offset: int) -> None:
        if chain.owner in self._by_owner:
            raise ValueError(f"chain for {chain.owner} already committed")
        self._chains.append(chain)
        self._by_owner[chain.owner] = chain
        self._by_household.setdefault(chain.household_id, []).append(chain)
        self._offsets.setdefault(chain.household_id, []).append(offset)

    def append(self, chain: ActivityChain) -> None:
        line = chain_to_json_line(chain) + "\n"
        self._register(chain, self._size)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line)
        self._size += len(line.encode("utf-8"))

    def write_index(self) -> Path | None:
        """Persist the household_id -> line byte offsets sidecar."""
        if self.path is None:
            return None
        index_path = self.path.with_name(self.path.name + ".idx")
        payload = {"households": {hid: self._offsets[hid] for hid in sorted(self._offsets)}}
        index_path.write_text(
            json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n",
            encoding="utf-8",
        )
        return index_path

    def __len__(self) -> int:
        return len(self._chains)

    def has(self, owner: str) -> bool:
        return owner in self._by_owner

    def get(self, owner: str) -> ActivityChain:
        return self._by_owner[owner]

    def owners(self) -> tuple[str, ...]:
        return tuple(c.owner for c in self._chains)

    def chains(self) -> tuple[ActivityChain, ...]:
        return tuple(self._chains)

    def household_chains(self, household_id: str) -> tuple[ActivityChain, ...]:
        return tuple(self._by_household.get(household_id, ()))


@dataclass(frozen=True)
class Anchor:
    """A committed member's joint activity that a later member must honor."""

    activity_type: ActivityType
    start: int
    end: int
    participants: frozenset[str]
    source: str

    def describe(self) -> str:
        who = ", ".join(sorted(self.participants))
        return (
            f"{self.activity_type.label} {format_hhmm(self.start)}-"
            f"{format_hhmm(self.end)} with {who}"
        )


@dataclass(frozen=True)
class HouseholdContext:
    """Coordination context for the next member of a household.

    member_summaries cover exactly the members already committed this run, in
    commit order. The full household roster rides along so a backend can see
    who exists before anyone has generated.
    """

    household: Household
    member_summaries: tuple[tuple[str, str], ...] = ()
    anchors: tuple[Anchor, ...] = ()

    @property
    def household_id(self) -> str:
        return self.household.household_id

    def prompt_text(self) -> str | None:
        if not self.member_summaries and not self.anchors:
            return None
        member_lines = [f"{owner}: {digest}" for owner, digest in self.member_summaries]
        anchor_lines = [a.describe() for a in self.anchors]
        return render_household_context_text(member_lines, anchor_lines)


def summarize_chain(chain: ActivityChain) -> str:
    parts = []
    for act in chain.activities:
        entry = f"{act.activity_type.label} {format_hhmm(act.start)}-{format_hhmm(act.end)}"
        if act.participants:
            entry += f" with {', '.join(sorted(act.participants))}"
        parts.append(entry)
    return "; ".join(parts)


def build_context(
    store: ChainStore, household: Household, next_member: str
) -> HouseholdContext:
    """Digest committed members' schedules plus anchors addressed to next_member."""
    if next_member not in household.member_ids:
        raise KeyError(f"{next_member} not in household {household.household_id}")
    committed = [
        c for c in store.household_chains(household.household_id)
        if c.owner != next_member
    ]
    summaries = tuple((c.owner, summarize_chain(c)) for c in committed)
    anchors = []
    for chain in committed:
        for act in chain.activities:
            if next_member in act.participants:
                required = (act.participants | {chain.owner}) - {next_member}
                anchors.append(
                    Anchor(act.activity_type, act.start, act.end, required, chain.owner)
                )
    anchors.sort(key=lambda a: (a.start, a.end, a.source))
    return HouseholdContext(household, summaries, tuple(anchors))


def match_claim(
    claim: Activity,
    owner: str,
    partner_chain: ActivityChain,
    tolerance: int = DEFAULT_TOLERANCE,
) -> tuple[bool, str | None]:
    """Does the partner's chain corroborate this joint claim?

    A match needs the same activity type, both endpoints within tolerance
    minutes, and the partner naming the claim's owner back. The reason on
    failure is the first condition that no candidate survived.
    """
    same_type = [
        a for a in partner_chain.activities if a.activity_type == claim.activity_type
    ]
    if not same_type:
        return False, "type mismatch"
    timed = [
        a
        for a in same_type
        if abs(a.start - claim.start) <= tolerance
        and abs(a.end - claim.end) <= tolerance
    ]
    if not timed:
        return False, "timing mismatch"
    if any(owner in a.participants for a in timed):
        return True, None
    return False, "partner does not reciprocate participant"


@dataclass(frozen=True)
class Repair:
    action: str
    detail: str

    def __str__(self) -> str:
        return f"{self.action}: {self.detail}"


@dataclass
class ReconcilePolicy:
    """Knobs for the repair ladder; regenerate is wired in by the pipeline."""

    tolerance: int = DEFAULT_TOLERANCE
    snap_window: int = SNAP_WINDOW
    max_regenerations: int = MAX_REGENERATIONS
    regenerate: Callable[[int], ActivityChain] | None = None


def _spans_overlap(spans: list[tuple[int, int]], start: int, end: int) -> bool:
    return any(s < end and start < e for s, e in spans)


def _enforce_anchors(
    chain: ActivityChain,
    anchors: list[Anchor],
    policy: ReconcilePolicy,
    log: list[Repair],
) -> tuple[ActivityChain, list[tuple[int, int]]]:
    """Make the chain honor every anchor addressed to its owner.

    Ladder per anchor: adopt an activity already matching on type and time,
    snap a nearby solo activity of the same type onto the anchor window, or
    carve the window out and insert the joint activity outright. The terminal
    insert is what makes reconciliation exhaustive between committed members.
    Anchor windows already consumed by an earlier anchor are an unresolvable
    conflict (committed chains cannot be edited); these are logged and skipped.
    """
    acts = list(chain.activities)
    locked: list[tuple[int, int]] = []
    for anchor in anchors:
        exact = [
            i
            for i, a in enumerate(acts)
            if a.activity_type == anchor.activity_type
            and abs(a.start - anchor.start) <= policy.tolerance
            and abs(a.end - anchor.end) <= policy.tolerance
        ]
        if exact:
            i = min(
                exact,
                key=lambda i: abs(acts[i].start - anchor.start)
                + abs(acts[i].end - anchor.end),
            )
            a = acts[i]
            if not anchor.participants <= a.participants:
                acts[i] = Activity(
                    a.activity_type, a.start, a.end, a.participants | anchor.participants
                )
                log.append(Repair("anchor_adopt", f"{anchor.describe()} from {anchor.source}"))
            locked.append((acts[i].start, acts[i].end))
            continue
        if _spans_overlap(locked, anchor.start, anchor.end):
            log.append(
                Repair("anchor_conflict", f"{anchor.describe()} overlaps an earlier anchor")
            )
            continue
        snappable = [
            i
            for i, a in enumerate(acts)
            if a.activity_type == anchor.activity_type
            and not a.participants
            and abs(a.start - anchor.start) <= policy.snap_window
            and abs(a.end - anchor.end) <= policy.snap_window
        ]
        if snappable:
            i = min(
                snappable,
                key=lambda i: abs(acts[i].start - anchor.start)
                + abs(acts[i].end - anchor.end),
            )
            del acts[i]
            action = "anchor_snap"
        else:
            action = "anchor_insert"
        acts = list(carve_window(acts, anchor.start, anchor.end))
        acts = list(
            insert_activity(
                acts,
                Activity(anchor.activity_type, anchor.start, anchor.end, anchor.participants),
            )
        )
        log.append(Repair(action, f"{anchor.describe()} from {anchor.source}"))
        locked.append((anchor.start, anchor.end))
    return ActivityChain(chain.owner, chain.household_id, tuple(acts)), locked


def _phantom_claims(
    chain: ActivityChain,
    committed: dict[str, ActivityChain],
    tolerance: int,
) -> list[tuple[int, str, str]]:
    out = []
    for i, act in enumerate(chain.activities):
        for partner in sorted(act.participants):
            if partner not in committed:
                continue
            ok, reason = match_claim(act, chain.owner, committed[partner], tolerance)
            if not ok:
                out.append((i, partner, reason or ""))
    return out


def _try_snap(
    chain: ActivityChain,
    idx: int,
    partner_chain: ActivityChain,
    household: Household,
    committed: dict[str, ActivityChain],
    policy: ReconcilePolicy,
    locked: list[tuple[int, int]],
) -> tuple[ActivityChain, int] | None:
    """Shift activity idx onto the partner's reciprocating window if that helps.

    Returns the repaired chain and the shift size in minutes, or None when no
    candidate window exists or the shift would not reduce dangling claims.
    """
    act = chain.activities[idx]
    candidates = [
        p
        for p in partner_chain.activities
        if p.activity_type == act.activity_type
        and chain.owner in p.participants
        and abs(p.start - act.start) <= policy.snap_window
        and abs(p.end - act.end) <= policy.snap_window
    ]
    if not candidates:
        return None
    target = min(
        candidates, key=lambda p: abs(p.start - act.start) + abs(p.end - act.end)
    )
    if _spans_overlap(locked, target.start, target.end):
        return None
    rest = [a for j, a in enumerate(chain.activities) if j != idx]
    acts = carve_window(rest, target.start, target.end)
    acts = insert_activity(acts, act.shifted_to(target.start, target.end))
    trial = ActivityChain(chain.owner, chain.household_id, acts)
    if validate_chain(trial, household):
        return None
    before = len(_phantom_claims(chain, committed, policy.tolerance))
    after = len(_phantom_claims(trial, committed, policy.tolerance))
    if after >= before:
        return None
    shift = max(abs(target.start - act.start), abs(target.end - act.end))
    return trial, shift


def reconcile(
    chain: ActivityChain,
    store: ChainStore,
    household: Household,
    policy: ReconcilePolicy | None = None,
) -> tuple[ActivityChain, list[Repair]]:
    """Repair the new chain until no claim against a committed member dangles.

    Two duties, in order. First, anchors: joint activities committed partners
    claimed with this owner are enforced on the new chain (their side cannot
    be edited any more). Second, the owner's own claims against committed
    partners are matched, snapped (≤ snap_window shift onto the partner's
    reciprocating window), regenerated (fresh backend attempt, bounded), and
    finally demoted to solo. Claims naming not-yet-generated members are left
    for build_context to turn into anchors; they are not judged here.
    """
    policy = policy or ReconcilePolicy()
    committed = {
        c.owner: c
        for c in store.household_chains(chain.household_id)
        if c.owner != chain.owner
    }
    anchors = [
        Anchor(
            act.activity_type,
            act.start,
            act.end,
            (act.participants | {c.owner}) - {chain.owner},
            c.owner,
        )
        for c in committed.values()
        for act in c.activities
        if chain.owner in act.participants
    ]
    anchors.sort(key=lambda a: (a.start, a.end, a.source))

    log: list[Repair] = []
    current = chain
    attempt = 0
    while True:
        current, locked = _enforce_anchors(current, anchors, policy, log)
        # rung 1: snap, one dangling claim at a time (indices shift after each)
        while True:
            phantoms = _phantom_claims(current, committed, policy.tolerance)
            snapped = None
            for idx, partner, _reason in phantoms:
                snapped = _try_snap(
                    current, idx, committed[partner], household, committed, policy, locked
                )
                if snapped is not None:
                    current, shift = snapped
                    log.append(Repair("snap", f"{shift}min toward {partner}"))
                    break
            if snapped is None:
                break
        if not phantoms:
            break
        if attempt < policy.max_regenerations and policy.regenerate is not None:
            attempt += 1
            log.append(Repair("regenerate", f"attempt {attempt}"))
            current = policy.regenerate(attempt)
            continue
        acts = list(current.activities)
        for idx, partner, reason in phantoms:
            a = acts[idx]
            acts[idx] = Activity(a.activity_type, a.start, a.end, a.participants - {partner})
            log.append(Repair("demote", f"{partner} at activity {idx}: {reason}"))
        current = ActivityChain(current.owner, current.household_id, tuple(acts))
        break

    violations = validate_chain(current, household)
    if violations:
        raise RuntimeError(
            f"reconcile produced an invalid chain for {current.owner}: "
            + "; ".join(str(v) for v in violations)
        )
    return current, log


@dataclass(frozen=True)
class ClaimRecord:
    owner: str
    activity_index: int
    partner: str
    matched: bool
    reason: str


@dataclass(frozen=True)
class ConsistencyAudit:
    """Outcome of matching every joint claim in a store, owner-side."""

    consistent: int
    inconsistent: int
    per_claim: tuple[ClaimRecord, ...] = ()

    @property
    def total(self) -> int:
        return self.consistent + self.inconsistent

    @property
    def rate(self) -> float:
        # A store with no joint claims has nothing inconsistent in it.
        if self.total == 0:
            return 1.0
        return self.consistent / self.total

    def summary(self) -> dict:
        return {
            "consistent": self.consistent,
            "inconsistent": self.inconsistent,
            "total": self.total,
            "rate": self.rate,
        }


def audit_consistency(
    store: ChainStore,
    households: list[Household],
    tolerance: int = DEFAULT_TOLERANCE,
) -> ConsistencyAudit:
    """Match every joint claim in the store against the named partner's chain."""
    records: list[ClaimRecord] = []
    for household in households:
        for chain in store.household_chains(household.household_id):
            for i, act in enumerate(chain.activities):
                for partner in sorted(act.participants):
                    if store.has(partner):
                        ok, reason = match_claim(
                            act, chain.owner, store.get(partner), tolerance
                        )
                    else:
                        ok, reason = False, "partner has no chain"
                    records.append(
                        ClaimRecord(chain.owner, i, partner, ok, reason or "")
                    )
    consistent = sum(1 for r in records if r.matched)
    return ConsistencyAudit(consistent, len(records) - consistent, tuple(records))


def write_audit_csv(audit: ConsistencyAudit, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(AUDIT_HEADER)
        for r in audit.per_claim:
            writer.writerow(
                [r.owner, r.activity_index, r.partner, "true" if r.matched else "false", r.reason]
            )
    return path
