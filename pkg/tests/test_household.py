"""Chain store, context retrieval, claim matching, and the repair ladder."""

import csv
import json

import pytest

from chaingen.domain import Activity, ActivityChain, ActivityType, chain_to_json_line
from chaingen.household import (
    AUDIT_HEADER,
    DEFAULT_TOLERANCE,
    MAX_REGENERATIONS,
    ChainStore,
    ReconcilePolicy,
    audit_consistency,
    build_context,
    match_claim,
    reconcile,
    summarize_chain,
    write_audit_csv,
)


def _act(code, start, end, *participants):
    return Activity(ActivityType.from_code(code), start, end, frozenset(participants))


def _chain(owner, *acts, household_id="hh1"):
    return ActivityChain(owner, household_id, tuple(acts))


# ---------------------------------------------------------------- ChainStore


def test_store_append_and_lookup():
    store = ChainStore()
    c1 = _chain("p1", _act(1, 0, 600))
    c2 = _chain("p2", _act(2, 540, 1020))
    c3 = _chain("q1", _act(1, 0, 1440), household_id="hh2")
    for c in (c1, c2, c3):
        store.append(c)
    assert len(store) == 3
    assert store.has("p2") and not store.has("nobody")
    assert store.get("q1") is c3
    assert store.owners() == ("p1", "p2", "q1")
    assert store.chains() == (c1, c2, c3)
    assert store.household_chains("hh1") == (c1, c2)
    assert store.household_chains("hh9") == ()


def test_store_duplicate_owner_raises():
    store = ChainStore()
    store.append(_chain("p1", _act(1, 0, 600)))
    with pytest.raises(ValueError, match="chain for p1 already committed"):
        store.append(_chain("p1", _act(1, 0, 300)))


def test_store_file_roundtrip(tmp_path):
    path = tmp_path / "chains.jsonl"
    store = ChainStore(path)
    chains = [
        _chain("p1", _act(1, 0, 480), _act(2, 540, 1020)),
        _chain("p2", _act(1, 0, 1440)),
        _chain("q1", _act(7, 700, 760, "q2"), household_id="hh2"),
    ]
    for c in chains:
        store.append(c)

    reloaded = ChainStore(path)
    assert reloaded.owners() == ("p1", "p2", "q1")
    assert reloaded.chains() == tuple(chains)
    assert reloaded.household_chains("hh2") == (chains[2],)
    # appends go to the end of the existing file
    reloaded.append(_chain("q2", _act(7, 700, 760, "q1"), household_id="hh2"))
    lines = path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 4
    assert json.loads(lines[3])["owner"] == "q2"


def test_store_write_index_offsets(tmp_path):
    path = tmp_path / "chains.jsonl"
    store = ChainStore(path)
    chains = [
        _chain("p1", _act(1, 0, 480)),
        _chain("q1", _act(1, 0, 1440), household_id="hh2"),
        _chain("p2", _act(2, 540, 1020)),
    ]
    offsets = []
    pos = 0
    for c in chains:
        offsets.append(pos)
        pos += len((chain_to_json_line(c) + "\n").encode("utf-8"))
        store.append(c)
    idx_path = store.write_index()
    assert idx_path == tmp_path / "chains.jsonl.idx"
    payload = json.loads(idx_path.read_text(encoding="utf-8"))
    assert payload == {
        "households": {"hh1": [offsets[0], offsets[2]], "hh2": [offsets[1]]}
    }
    # offsets must point at the exact line starts
    raw = path.read_bytes()
    for hid, offs in payload["households"].items():
        for off in offs:
            line = raw[off:].split(b"\n", 1)[0]
            assert json.loads(line)["household_id"] == hid


def test_store_memory_only_has_no_index():
    store = ChainStore()
    store.append(_chain("p1", _act(1, 0, 600)))
    assert store.write_index() is None


# ------------------------------------------------------- context retrieval


def test_summarize_chain_format():
    chain = _chain("p1", _act(1, 0, 510), _act(7, 540, 600, "p3", "p2"))
    assert summarize_chain(chain) == (
        "Home 00:00-08:30; Buy meals 09:00-10:00 with p2, p3"
    )


def test_build_context_empty(trio_household):
    ctx = build_context(ChainStore(), trio_household, "p1")
    assert ctx.household_id == "hh1"
    assert ctx.member_summaries == ()
    assert ctx.anchors == ()
    assert ctx.prompt_text() is None


def test_build_context_unknown_member(trio_household):
    with pytest.raises(KeyError):
        build_context(ChainStore(), trio_household, "stranger")


def test_build_context_summaries_and_anchors(trio_household):
    store = ChainStore()
    store.append(_chain("p1", _act(1, 0, 540), _act(7, 1080, 1140, "p2", "p3")))
    store.append(_chain("p2", _act(6, 600, 660, "p3"), _act(7, 1080, 1140, "p1", "p3")))
    store.append(_chain("q1", _act(1, 0, 1440), household_id="hh2"))

    ctx = build_context(store, trio_household, "p3")
    assert [owner for owner, _ in ctx.member_summaries] == ["p1", "p2"]
    assert "Home 00:00-09:00" in ctx.member_summaries[0][1]

    # each committed activity naming p3 becomes one anchor; the co-participant
    # set folds the committed owner in and drops p3
    keyed = [
        (a.start, a.end, a.source, a.participants, a.activity_type)
        for a in ctx.anchors
    ]
    assert keyed == [
        (600, 660, "p2", frozenset({"p2"}), ActivityType.BUY_SERVICES),
        (1080, 1140, "p1", frozenset({"p1", "p2"}), ActivityType.BUY_MEALS),
        (1080, 1140, "p2", frozenset({"p1", "p2"}), ActivityType.BUY_MEALS),
    ]

    text = ctx.prompt_text()
    assert text is not None
    assert "p1: Home 00:00-09:00" in text
    assert "Buy services 10:00-11:00 with p2" in text


def test_build_context_skips_other_members_claims(trio_household):
    store = ChainStore()
    store.append(_chain("p1", _act(7, 1080, 1140, "p2")))
    ctx = build_context(store, trio_household, "p3")
    assert ctx.anchors == ()
    assert ctx.prompt_text() is not None  # summary alone still renders


# ------------------------------------------------------------- match_claim


def test_match_claim_accepts_within_tolerance(trio_household):
    claim = _act(7, 1110, 1170, "p2")
    partner = _chain("p2", _act(7, 1120, 1180, "p1"))
    ok, reason = match_claim(claim, "p1", partner, tolerance=15)
    assert ok and reason is None


def test_match_claim_exact_and_edge():
    claim = _act(7, 600, 660, "p2")
    assert match_claim(claim, "p1", _chain("p2", _act(7, 600, 660, "p1")))[0]
    # both endpoints exactly at the tolerance boundary still match
    edge = _chain("p2", _act(7, 615, 675, "p1"))
    assert match_claim(claim, "p1", edge, tolerance=15)[0]
    beyond = _chain("p2", _act(7, 616, 676, "p1"))
    assert match_claim(claim, "p1", beyond, tolerance=15) == (False, "timing mismatch")


def test_match_claim_reason_precedence():
    claim = _act(7, 600, 660, "p2")
    no_type = _chain("p2", _act(2, 540, 1020), _act(1, 0, 480))
    assert match_claim(claim, "p1", no_type) == (False, "type mismatch")

    wrong_time = _chain("p2", _act(7, 700, 760, "p1"))
    assert match_claim(claim, "p1", wrong_time) == (False, "timing mismatch")

    # a candidate survives type and timing, so the missing name is the reason,
    # even though another same-type activity failed on timing
    unreciprocated = _chain("p2", _act(7, 605, 665), _act(7, 700, 760, "p1"))
    assert match_claim(claim, "p1", unreciprocated) == (
        False,
        "partner does not reciprocate participant",
    )

    # any surviving candidate naming the owner is enough
    two_candidates = _chain("p2", _act(7, 605, 665), _act(7, 610, 670, "p1"))
    assert match_claim(claim, "p1", two_candidates)[0]


# --------------------------------------------------------------- reconcile


def test_reconcile_consistent_chain_untouched(trio_household):
    store = ChainStore()
    store.append(_chain("p2", _act(7, 1080, 1140, "p1")))
    chain = _chain("p1", _act(1, 0, 540), _act(7, 1080, 1140, "p2"))
    repaired, log = reconcile(chain, store, trio_household)
    assert repaired == chain
    assert log == []


def test_reconcile_anchor_adopt(trio_household):
    # p1 already has the window but forgot to name p2 on it
    store = ChainStore()
    store.append(_chain("p2", _act(6, 600, 660, "p1")))
    chain = _chain("p1", _act(1, 0, 540), _act(6, 610, 665))
    repaired, log = reconcile(chain, store, trio_household)
    assert repaired.activities[1] == _act(6, 610, 665, "p2")
    assert [r.action for r in log] == ["anchor_adopt"]
    assert log[0].detail == "Buy services 10:00-11:00 with p2 from p2"


def test_reconcile_anchor_snap(trio_household):
    # same-type solo activity within the snap window moves onto the anchor
    store = ChainStore()
    store.append(_chain("p2", _act(6, 600, 660, "p1")))
    chain = _chain("p1", _act(6, 540, 620))
    repaired, log = reconcile(chain, store, trio_household)
    assert repaired.activities == (_act(6, 600, 660, "p2"),)
    assert [r.action for r in log] == ["anchor_snap"]
    assert log[0].detail.endswith("from p2")


def test_reconcile_anchor_insert_carves(trio_household):
    # no matching type at all: the window is carved out and the joint
    # activity inserted, splitting the long solo block
    store = ChainStore()
    store.append(_chain("p2", _act(6, 600, 660, "p1")))
    chain = _chain("p1", _act(1, 570, 720))
    repaired, log = reconcile(chain, store, trio_household)
    assert repaired.activities == (
        _act(1, 570, 600),
        _act(6, 600, 660, "p2"),
        _act(1, 660, 720),
    )
    assert [r.action for r in log] == ["anchor_insert"]


def test_reconcile_anchor_conflict_skipped(trio_household):
    # two committed members claim overlapping windows with p1; the second
    # anchor cannot be honored without editing the first
    store = ChainStore()
    store.append(_chain("p2", _act(6, 600, 660, "p1")))
    store.append(_chain("p3", _act(7, 630, 690, "p1")))
    chain = _chain("p1", _act(1, 0, 300))
    repaired, log = reconcile(chain, store, trio_household)
    assert repaired.activities == (_act(1, 0, 300), _act(6, 600, 660, "p2"))
    assert [r.action for r in log] == ["anchor_insert", "anchor_conflict"]
    assert log[1].detail == "Buy meals 10:30-11:30 with p3 overlaps an earlier anchor"

    # the skipped anchor stays visible to the audit as p3's dangling claim
    store.append(repaired)
    audit = audit_consistency(store, [trio_household])
    assert (audit.consistent, audit.inconsistent) == (2, 1)
    bad = [r for r in audit.per_claim if not r.matched]
    assert bad[0].owner == "p3" and bad[0].reason == "type mismatch"


def test_reconcile_snap_rung(trio_household):
    # a short anchor adopts a nearby activity whose window clears the anchor
    # span, leaving room for a second dangling claim to slide into place
    store = ChainStore()
    store.append(_chain("p2", _act(6, 600, 610, "p1")))
    chain = _chain("p1", _act(6, 560, 570, "p2"), _act(6, 612, 622))
    repaired, log = reconcile(chain, store, trio_household)
    assert repaired.activities == (_act(6, 600, 610, "p2"), _act(6, 612, 622, "p2"))
    assert [r.action for r in log] == ["anchor_adopt", "snap"]
    assert log[1].detail == "40min toward p2"
    store.append(repaired)
    assert audit_consistency(store, [trio_household]).inconsistent == 0


def test_reconcile_regenerate_then_demote(trio_household):
    # partner never reciprocates and regeneration keeps producing the same
    # chain: after the bounded retries the claim is demoted to solo
    store = ChainStore()
    store.append(_chain("p2", _act(1, 0, 600)))
    chain = _chain("p1", _act(8, 300, 360, "p2"))
    calls = []

    def regen(attempt):
        calls.append(attempt)
        return chain

    policy = ReconcilePolicy(regenerate=regen)
    repaired, log = reconcile(chain, store, trio_household, policy)
    assert calls == [1, 2]
    assert MAX_REGENERATIONS == 2
    assert [(r.action, r.detail) for r in log] == [
        ("regenerate", "attempt 1"),
        ("regenerate", "attempt 2"),
        ("demote", "p2 at activity 0: type mismatch"),
    ]
    assert repaired.activities == (_act(8, 300, 360),)


def test_reconcile_regenerate_success_stops_early(trio_household):
    store = ChainStore()
    store.append(_chain("p2", _act(1, 0, 600)))
    chain = _chain("p1", _act(8, 300, 360, "p2"))
    good = _chain("p1", _act(8, 300, 360))
    policy = ReconcilePolicy(regenerate=lambda attempt: good)
    repaired, log = reconcile(chain, store, trio_household, policy)
    assert repaired == good
    assert [r.action for r in log] == ["regenerate"]


def test_reconcile_without_regenerate_demotes_directly(trio_household):
    store = ChainStore()
    store.append(_chain("p2", _act(7, 700, 760, "p1"), _act(7, 900, 960)))
    # second claim dangles: p2's 15:00 slot is solo on p2's side
    chain = _chain("p1", _act(7, 700, 760, "p2"), _act(7, 900, 960, "p2"))
    repaired, log = reconcile(chain, store, trio_household)
    assert [r.action for r in log] == ["demote"]
    assert log[0].detail == "p2 at activity 1: partner does not reciprocate participant"
    assert repaired.activities[1] == _act(7, 900, 960)


def test_reconcile_ignores_uncommitted_partners(trio_household):
    # claims naming members who have not generated yet are left alone; they
    # become anchors when those members generate
    store = ChainStore()
    chain = _chain("p1", _act(7, 700, 760, "p3"))
    repaired, log = reconcile(chain, store, trio_household)
    assert repaired == chain and log == []


# ------------------------------------------------------------------- audit


def test_audit_counts_owner_side(trio_household):
    store = ChainStore()
    store.append(_chain("p1", _act(7, 700, 760, "p2")))
    store.append(_chain("p2", _act(7, 700, 760, "p1")))
    store.append(_chain("p3", _act(6, 600, 660, "p1")))
    audit = audit_consistency(store, [trio_household])
    # reciprocated pair contributes one matched claim per side
    assert audit.consistent == 2
    assert audit.inconsistent == 1
    assert audit.total == 3
    assert audit.rate == pytest.approx(2 / 3)
    assert audit.summary() == {
        "consistent": 2,
        "inconsistent": 1,
        "total": 3,
        "rate": 2 / 3,
    }


def test_audit_missing_partner_reason(trio_household):
    store = ChainStore()
    store.append(_chain("p1", _act(7, 700, 760, "p2")))
    audit = audit_consistency(store, [trio_household])
    assert audit.total == 1 and audit.inconsistent == 1
    assert audit.per_claim[0].reason == "partner has no chain"


def test_audit_empty_store_rate_is_one(trio_household):
    audit = audit_consistency(ChainStore(), [trio_household])
    assert audit.total == 0
    assert audit.rate == 1.0


def test_audit_respects_tolerance(trio_household):
    store = ChainStore()
    store.append(_chain("p1", _act(7, 700, 760, "p2")))
    store.append(_chain("p2", _act(7, 730, 790, "p1")))
    assert audit_consistency(store, [trio_household], tolerance=15).consistent == 0
    assert audit_consistency(store, [trio_household], tolerance=30).consistent == 2
    assert DEFAULT_TOLERANCE == 15


def test_write_audit_csv(tmp_path, trio_household):
    store = ChainStore()
    store.append(_chain("p1", _act(7, 700, 760, "p2")))
    store.append(_chain("p2", _act(7, 700, 760, "p1"), _act(6, 900, 960, "p3")))
    audit = audit_consistency(store, [trio_household])
    path = write_audit_csv(audit, tmp_path / "audit.csv")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == list(AUDIT_HEADER)
    assert rows[1] == ["p1", "0", "p2", "true", ""]
    assert rows[2] == ["p2", "0", "p1", "true", ""]
    assert rows[3] == ["p2", "1", "p3", "false", "partner has no chain"]
