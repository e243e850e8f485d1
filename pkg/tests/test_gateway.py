"""Backend contract: HTTP retry behavior, the seeded mock, and the wire format."""

import json

import pytest
import requests
from hypothesis import given, settings
from hypothesis import strategies as st

from chaingen.domain import Activity, ActivityChain, ActivityType
from chaingen.feedback import Guidance
from chaingen.gateway import (
    BackendConfig,
    GatewayError,
    MockConfig,
    ParseError,
    RateLimiter,
    RawCompletion,
    complete,
    encode_activities,
    encode_chain,
    household_events,
    mock_complete,
    parse_completion,
    point_mass_length,
)
from chaingen.household import Anchor, HouseholdContext
from chaingen.prompts import PromptBundle
from chaingen.synthetic import make_roster

from conftest import DATA

BUNDLE = PromptBundle("system text", "user text", ())


# ----------------------------------------------------------- configuration


def test_backend_config_validation():
    cfg = BackendConfig(endpoint_url="https://api.example.test", model_name="m")
    assert cfg.api_key_env == "CHAINGEN_API_KEY"
    assert cfg.max_retries == 4
    with pytest.raises(ValueError, match="temperature"):
        BackendConfig(endpoint_url="u", model_name="m", temperature=-0.1)
    with pytest.raises(ValueError, match="max_retries"):
        BackendConfig(endpoint_url="u", model_name="m", max_retries=-1)


def test_mock_config_validation():
    with pytest.raises(ValueError, match="hallucination_rate"):
        MockConfig(seed=0, hallucination_rate=1.5)
    with pytest.raises(ValueError, match="guidance_compliance"):
        MockConfig(seed=0, guidance_compliance=-0.2)
    with pytest.raises(ValueError, match="13 weights"):
        MockConfig(seed=0, length_bias=(1.0,))
    with pytest.raises(ValueError, match="non-negative"):
        MockConfig(seed=0, length_bias=(0.0,) * 13)
    with pytest.raises(ValueError, match="non-negative"):
        MockConfig(seed=0, length_bias=(-1.0,) + (1.0,) * 12)


def test_point_mass_length():
    bias = point_mass_length(3)
    assert len(bias) == 13
    assert bias[2] == 1.0 and sum(bias) == 1.0
    for bad in (0, 14):
        with pytest.raises(ValueError):
            point_mass_length(bad)


def test_rate_limiter_paces_requests():
    with pytest.raises(ValueError):
        RateLimiter(0)
    limiter = RateLimiter(2.0)
    clock = [100.0]
    sleeps = []

    def now():
        return clock[0]

    def sleep(d):
        sleeps.append(d)
        clock[0] += d

    for _ in range(3):
        limiter.acquire(now=now, sleep=sleep)
    # first request is immediate, each later one waits out the interval
    assert sleeps == [0.5, 0.5]


# ------------------------------------------------------------ HTTP backend


class FakeResponse:
    def __init__(self, status, payload=None):
        self.status_code = status
        self._payload = payload

    def json(self):
        if self._payload is None:
            raise ValueError("no body")
        return self._payload


def _ok(text="[]", usage=None):
    return FakeResponse(
        200, {"choices": [{"message": {"content": text}}], "usage": usage or {}}
    )


class FakeSession:
    def __init__(self, script):
        self.script = list(script)
        self.calls = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.calls.append(
            {"url": url, "json": json, "headers": headers, "timeout": timeout}
        )
        item = self.script.pop(0)
        if isinstance(item, Exception):
            raise item
        return item


@pytest.fixture
def api_key(monkeypatch):
    monkeypatch.setenv("CHAINGEN_API_KEY", "sk-test")


CFG = BackendConfig(endpoint_url="https://api.example.test/", model_name="tiny")


def test_complete_sends_expected_payload(api_key):
    session = FakeSession([_ok("hello", usage={"total_tokens": 12})])
    result = complete(CFG, BUNDLE, session=session, sleep=lambda s: None)
    assert result.text == "hello"
    assert result.usage == {"total_tokens": 12}
    assert result.attempts == 1
    call = session.calls[0]
    assert call["url"] == "https://api.example.test/chat/completions"
    assert call["timeout"] == CFG.timeout
    assert call["headers"] == {"Authorization": "Bearer sk-test"}
    assert call["json"]["model"] == "tiny"
    assert call["json"]["temperature"] == 1.0
    assert call["json"]["messages"] == [
        {"role": "system", "content": "system text"},
        {"role": "user", "content": "user text"},
    ]


def test_complete_retries_on_429_then_succeeds(api_key):
    import random

    session = FakeSession([FakeResponse(429), FakeResponse(429), _ok("done")])
    sleeps = []
    result = complete(
        CFG, BUNDLE, session=session, sleep=sleeps.append, rng=random.Random(0)
    )
    assert result.attempts == 3
    assert result.text == "done"
    assert len(session.calls) == 3
    # exponential backoff with jitter: 1s then 2s base, plus up to 1s extra
    assert 1.0 <= sleeps[0] <= 2.0
    assert 2.0 <= sleeps[1] <= 3.0


def test_complete_retries_transport_failures(api_key):
    session = FakeSession([requests.ConnectionError("refused"), _ok("up")])
    result = complete(CFG, BUNDLE, session=session, sleep=lambda s: None)
    assert result.attempts == 2


@pytest.mark.parametrize("status", [401, 403])
def test_complete_auth_failure_is_permanent(api_key, status):
    session = FakeSession([FakeResponse(status)])
    with pytest.raises(GatewayError, match=f"authentication failed \\(HTTP {status}\\)"):
        complete(CFG, BUNDLE, session=session, sleep=lambda s: None)
    assert len(session.calls) == 1


def test_complete_other_4xx_is_permanent(api_key):
    session = FakeSession([FakeResponse(422)])
    with pytest.raises(GatewayError, match="backend rejected request \\(HTTP 422\\)"):
        complete(CFG, BUNDLE, session=session, sleep=lambda s: None)
    assert len(session.calls) == 1


def test_complete_gives_up_after_retry_budget(api_key):
    cfg = BackendConfig(
        endpoint_url="https://api.example.test", model_name="m", max_retries=2
    )
    session = FakeSession([FakeResponse(500), FakeResponse(503), FakeResponse(500)])
    with pytest.raises(GatewayError, match="giving up after 3 attempts: HTTP 500"):
        complete(cfg, BUNDLE, session=session, sleep=lambda s: None)
    assert len(session.calls) == 3


def test_complete_requires_env_key_before_any_request(monkeypatch):
    monkeypatch.delenv("CHAINGEN_API_KEY", raising=False)
    session = FakeSession([])
    with pytest.raises(GatewayError, match="CHAINGEN_API_KEY"):
        complete(CFG, BUNDLE, session=session, sleep=lambda s: None)
    assert session.calls == []


def test_complete_rejects_malformed_envelope(api_key):
    session = FakeSession([FakeResponse(200, {"nope": 1})])
    with pytest.raises(GatewayError, match="malformed response envelope"):
        complete(CFG, BUNDLE, session=session, sleep=lambda s: None)
    empty = FakeSession([FakeResponse(200, {"choices": [{"message": {"content": ""}}]})])
    with pytest.raises(GatewayError, match="empty completion text"):
        complete(CFG, BUNDLE, session=empty, sleep=lambda s: None)


# ------------------------------------------------------------- seeded mock


def _parse(raw, household, owner="p1"):
    return parse_completion(raw, household, owner)


def test_mock_complete_deterministic(bundled, trio_household):
    mock = MockConfig(seed=11)
    profile = trio_household.members[0]
    first = mock_complete(mock, bundled.stats, profile)
    again = mock_complete(mock, bundled.stats, profile)
    assert first.text == again.text
    retry = mock_complete(mock, bundled.stats, profile, attempt=1)
    assert retry.text != first.text


def test_mock_complete_emits_parseable_chains(bundled, trio_household):
    mock = MockConfig(seed=11)
    for profile in trio_household.members:
        chain = _parse(
            mock_complete(mock, bundled.stats, profile),
            trio_household,
            profile.agent_id,
        )
        assert len(chain.activities) >= 1
        assert chain.activities[0].activity_type == ActivityType.HOME


def test_mock_complete_follows_length_guidance(bundled, trio_household):
    mock = MockConfig(seed=11, guidance_compliance=1.0)
    profile = trio_household.members[0]
    for target in (2, 5, 9):
        guidance = Guidance(f"aim for about {target} activities", target)
        chain = _parse(
            mock_complete(mock, bundled.stats, profile, guidance=guidance),
            trio_household,
        )
        assert len(chain.activities) == target


def test_mock_complete_ignores_guidance_at_zero_compliance(bundled, trio_household):
    mock = MockConfig(
        seed=11, guidance_compliance=0.0, length_bias=point_mass_length(3)
    )
    profile = trio_household.members[0]
    guidance = Guidance("aim for about 7 activities", 7)
    chain = _parse(
        mock_complete(mock, bundled.stats, profile, guidance=guidance),
        trio_household,
    )
    assert len(chain.activities) == 3


def test_mock_complete_neutral_guidance_samples_reference(bundled):
    # neutral guidance overrides the bias and falls back to the reference
    # length distribution
    mock = MockConfig(
        seed=11, guidance_compliance=1.0, length_bias=point_mass_length(3)
    )
    roster = make_roster(30, seed=4, solo_only=True)
    guidance = Guidance("keep matching the reference shape", None)
    support = {i + 1 for i, w in enumerate(bundled.stats.length_dist) if w > 0}
    lengths = set()
    for household in roster:
        profile = household.members[0]
        chain = _parse(
            mock_complete(mock, bundled.stats, profile, guidance=guidance),
            household,
            profile.agent_id,
        )
        lengths.add(len(chain.activities))
    assert lengths <= support
    assert len(lengths) >= 3


def test_mock_complete_respects_length_bias(bundled):
    mock = MockConfig(seed=11, length_bias=point_mass_length(4))
    roster = make_roster(20, seed=4, solo_only=True)
    for household in roster:
        profile = household.members[0]
        chain = _parse(
            mock_complete(mock, bundled.stats, profile),
            household,
            profile.agent_id,
        )
        assert len(chain.activities) == 4


def test_mock_complete_honors_anchor_without_hallucination(bundled, trio_household):
    mock = MockConfig(seed=11, hallucination_rate=0.0)
    profile = trio_household.members[0]
    anchor = Anchor(ActivityType.BUY_MEALS, 1080, 1140, frozenset({"p2"}), "p2")
    ctx = HouseholdContext(trio_household, (("p2", "Buy meals"),), (anchor,))
    chain = _parse(
        mock_complete(mock, bundled.stats, profile, household_context=ctx),
        trio_household,
    )
    assert Activity(ActivityType.BUY_MEALS, 1080, 1140, frozenset({"p2"})) in (
        chain.activities
    )


def test_mock_complete_drops_every_claim_at_full_hallucination(
    bundled, trio_household
):
    mock = MockConfig(seed=11, hallucination_rate=1.0)
    profile = trio_household.members[0]
    anchor = Anchor(ActivityType.BUY_MEALS, 1080, 1140, frozenset({"p2"}), "p2")
    ctx = HouseholdContext(trio_household, (("p2", "Buy meals"),), (anchor,))
    chain = _parse(
        mock_complete(mock, bundled.stats, profile, household_context=ctx),
        trio_household,
    )
    assert all(not a.participants for a in chain.activities)


def test_household_events_derived_identically(bundled):
    mock = MockConfig(seed=6)
    roster = make_roster(40, seed=2)
    seen = 0
    for household in roster:
        events = household_events(mock, bundled.stats, household)
        assert events == household_events(mock, bundled.stats, household)
        member_ids = household.member_ids
        load = {}
        for e in events:
            assert e.members <= set(member_ids)
            assert len(e.members) == 2
            assert 0 <= e.start < e.end <= 1440
            for m in e.members:
                load[m] = load.get(m, 0) + 1
        assert all(n <= 2 for n in load.values())
        # windows sit on a 2-hour grid: pairwise gaps exceed the matching
        # tolerance so distinct events can never cross-match
        spans = sorted((e.start, e.end) for e in events)
        for (s1, e1), (s2, e2) in zip(spans, spans[1:]):
            assert s2 - e1 > 15
        seen += len(events)
    assert seen > 0


# ------------------------------------------------------------- wire format


def test_encode_activities_sorts_by_start():
    acts = [
        Activity(ActivityType.WORK, 540, 1020, frozenset()),
        Activity(ActivityType.HOME, 0, 480, frozenset({"p2"})),
    ]
    data = json.loads(encode_activities(acts))
    assert [d["start"] for d in data] == ["00:00", "09:00"]
    assert data[0]["participants"] == ["p2"]


def test_parse_rejects_boolean_type(trio_household):
    text = '[{"type":true,"start":"00:00","end":"24:00","participants":[]}]'
    with pytest.raises(ParseError, match="must be an integer code"):
        parse_completion(text, trio_household, "p1")


def test_parse_accepts_raw_completion_wrapper(trio_household):
    raw = RawCompletion(
        text='[{"type":1,"start":"00:00","end":"24:00","participants":[]}]'
    )
    chain = parse_completion(raw, trio_household, "p1")
    assert chain.activities == (Activity(ActivityType.HOME, 0, 1440, frozenset()),)


@st.composite
def valid_chains(draw):
    n = draw(st.integers(1, 6))
    bounds = sorted(
        draw(
            st.lists(
                st.integers(0, 1440), min_size=2 * n, max_size=2 * n, unique=True
            )
        )
    )
    acts = []
    for i in range(n):
        code = draw(st.integers(1, 15))
        parts = draw(st.sets(st.sampled_from(["p2", "p3"]), max_size=2))
        acts.append(
            Activity(
                ActivityType.from_code(code),
                bounds[2 * i],
                bounds[2 * i + 1],
                frozenset(parts),
            )
        )
    return ActivityChain("p1", "hh1", tuple(acts))


@settings(max_examples=120, deadline=None)
@given(chain=valid_chains())
def test_encode_parse_roundtrip(chain, trio_household):
    assert parse_completion(encode_chain(chain), trio_household, "p1") == chain


# ------------------------------------------------------------ reply corpus


def _corpus():
    expected = json.loads((DATA / "replies_expected.json").read_text("utf-8"))
    return sorted(expected.items())


@pytest.mark.parametrize("name,expect", _corpus())
def test_reply_corpus(name, expect, trio_household):
    text = (DATA / "replies" / name).read_text("utf-8")
    if expect["valid"]:
        chain = parse_completion(text, trio_household, "p1")
        assert len(chain.activities) == expect["length"]
        # canonical re-encoding parses back to the same chain
        assert parse_completion(encode_chain(chain), trio_household, "p1") == chain
    else:
        with pytest.raises(ParseError) as err:
            parse_completion(text, trio_household, "p1")
        assert err.value.reason == expect["reason"]


def test_corpus_covers_twenty_replies():
    assert len(_corpus()) == 20
    assert len(list((DATA / "replies").glob("*.txt"))) == 20
