"""Backends for chain generation: HTTP chat-completions client and a seeded mock.

The mock is a first-class offline backend, not a test shim. It samples from
ReferenceStats and is fully deterministic given (seed, agent_id, attempt).
Household coordination is simulated through "joint events" derived from
(seed, household_id): every member derives the identical event list, and each
member independently drops its own side of an event with probability
hallucination_rate. A dropped side is exactly what makes the partner's claim
phantom, so the long-run phantom fraction equals the configured rate.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import threading
import time
from dataclasses import dataclass, field

import requests

from .domain import (
    MINUTES_PER_DAY,
    Activity,
    ActivityChain,
    ActivityType,
    Household,
    SocioProfile,
    carve_window,
    format_hhmm,
    insert_activity,
    parse_hhmm,
    validate_chain,
)
from .feedback import Guidance
from .household import HouseholdContext
from .prompts import PromptBundle
from .stats import MAX_CHAIN_LENGTH, N_DURATION_BINS, N_LENGTH_BINS, ReferenceStats

BACKOFF_BASE = 1.0
BACKOFF_FACTOR = 2.0
RETRYABLE_STATUS = frozenset({408, 429})


class GatewayError(Exception):
    """Configuration, transport, or envelope failure talking to a backend."""


class ParseError(Exception):
    """Completion text could not be turned into a valid chain."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class BackendConfig:
    """Remote chat-completions endpoint. The key comes from the environment
    variable named by api_key_env, never from configuration contents."""

    endpoint_url: str
    model_name: str
    temperature: float = 1.0
    max_retries: int = 4
    timeout: float = 60.0
    api_key_env: str = "CHAINGEN_API_KEY"
    requests_per_second: float | None = None

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass(frozen=True)
class RawCompletion:
    text: str
    usage: dict = field(default_factory=dict)
    latency: float = 0.0
    attempts: int = 1


@dataclass(frozen=True)
class MockConfig:
    """Deterministic offline backend.

    hallucination_rate: probability a joint claim gets no counterpart.
    guidance_compliance: probability the sampled length follows guidance.
    length_bias: optional distribution over lengths 1..13+ overriding the
    reference length distribution (a point mass simulates a model stuck on
    one chain length).
    """

    seed: int
    hallucination_rate: float = 0.0
    guidance_compliance: float = 1.0
    length_bias: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.hallucination_rate <= 1.0:
            raise ValueError("hallucination_rate must be in [0, 1]")
        if not 0.0 <= self.guidance_compliance <= 1.0:
            raise ValueError("guidance_compliance must be in [0, 1]")
        if self.length_bias is not None:
            bias = tuple(float(w) for w in self.length_bias)
            if len(bias) != N_LENGTH_BINS:
                raise ValueError(f"length_bias must have {N_LENGTH_BINS} weights")
            if any(w < 0 for w in bias) or sum(bias) <= 0:
                raise ValueError("length_bias weights must be non-negative, sum > 0")
            object.__setattr__(self, "length_bias", bias)


def point_mass_length(n: int) -> tuple[float, ...]:
    """Length-bias distribution concentrated on a single chain length."""
    if not 1 <= n <= MAX_CHAIN_LENGTH + 1:
        raise ValueError(f"length {n} out of range 1..{MAX_CHAIN_LENGTH + 1}")
    return tuple(1.0 if i == n - 1 else 0.0 for i in range(N_LENGTH_BINS))


class RateLimiter:
    """Process-wide admission gate: at most `rate` requests per second."""

    def __init__(self, rate: float):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.interval = 1.0 / rate
        self._lock = threading.Lock()
        self._next = 0.0

    def acquire(self, now=time.monotonic, sleep=time.sleep) -> None:
        # Sleeping inside the lock is deliberate: admission is serialized.
        with self._lock:
            t = now()
            if t < self._next:
                sleep(self._next - t)
                t = self._next
            self._next = t + self.interval


_limiters: dict[tuple[str, float], RateLimiter] = {}
_limiters_lock = threading.Lock()


def _limiter_for(config: BackendConfig) -> RateLimiter | None:
    if config.requests_per_second is None:
        return None
    key = (config.endpoint_url, config.requests_per_second)
    with _limiters_lock:
        if key not in _limiters:
            _limiters[key] = RateLimiter(config.requests_per_second)
        return _limiters[key]


def complete(
    config: BackendConfig,
    bundle: PromptBundle,
    *,
    session=None,
    sleep=time.sleep,
    rng: random.Random | None = None,
) -> RawCompletion:
    """POST the prompt to {endpoint_url}/chat/completions and unwrap the reply.

    Retries transport failures and 408/429/5xx with exponential backoff
    (base 1s, factor 2, uniform jitter) up to max_retries; other 4xx are
    permanent. sleep and rng are injectable so tests never wait.
    """
    key = os.environ.get(config.api_key_env, "")
    if not key:
        raise GatewayError(
            f"environment variable {config.api_key_env} is not set; "
            "the API key is only ever read from the environment"
        )
    jitter = rng.uniform if rng is not None else random.uniform
    http = session if session is not None else requests
    url = config.endpoint_url.rstrip("/") + "/chat/completions"
    payload = {
        "model": config.model_name,
        "temperature": config.temperature,
        "messages": [
            {"role": "system", "content": bundle.system_text},
            {"role": "user", "content": bundle.user_text},
        ],
    }
    headers = {"Authorization": f"Bearer {key}"}
    limiter = _limiter_for(config)
    started = time.monotonic()
    attempts = 0
    failure = "no attempts made"
    while attempts <= config.max_retries:
        if limiter is not None:
            limiter.acquire(sleep=sleep)
        attempts += 1
        try:
            resp = http.post(url, json=payload, headers=headers, timeout=config.timeout)
        except requests.RequestException as exc:
            failure = f"transport failure: {exc}"
        else:
            status = resp.status_code
            if status == 200:
                return _unwrap_envelope(resp, attempts, time.monotonic() - started)
            if status in (401, 403):
                raise GatewayError(f"authentication failed (HTTP {status})")
            if status in RETRYABLE_STATUS or status >= 500:
                failure = f"HTTP {status}"
            else:
                raise GatewayError(f"backend rejected request (HTTP {status})")
        if attempts <= config.max_retries:
            delay = BACKOFF_BASE * (BACKOFF_FACTOR ** (attempts - 1))
            sleep(delay + jitter(0, BACKOFF_BASE))
    raise GatewayError(f"giving up after {attempts} attempts: {failure}")


def _unwrap_envelope(resp, attempts: int, latency: float) -> RawCompletion:
    try:
        data = resp.json()
        text = data["choices"][0]["message"]["content"]
        usage = data.get("usage") or {}
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise GatewayError(f"malformed response envelope: {exc}") from None
    if not isinstance(text, str) or not text:
        raise GatewayError("empty completion text")
    if not isinstance(usage, dict):
        usage = {}
    return RawCompletion(text=text, usage=usage, latency=latency, attempts=attempts)


# --- deterministic mock -----------------------------------------------------

_EVENT_SLOT_HOURS = (7, 9, 11, 13, 15, 17, 19, 21)


@dataclass(frozen=True)
class MockEvent:
    """One derived joint event; identical for every member of the household."""

    key: str
    activity_type: ActivityType
    start: int
    end: int
    members: frozenset[str]


def _seeded_rng(*parts) -> random.Random:
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def _event_key(
    household_id: str, code: int, start: int, end: int, members: frozenset[str]
) -> str:
    return f"{household_id}|{code}|{start}|{end}|{','.join(sorted(members))}"


def _draw_index(rng: random.Random, weights) -> int:
    total = sum(weights)
    if total <= 0:
        return rng.randrange(len(weights))
    x = rng.random() * total
    acc = 0.0
    for i, w in enumerate(weights):
        acc += w
        if x < acc:
            return i
    return len(weights) - 1


def _duration_minutes(rng: random.Random, b: int) -> int:
    lo = max(1, 30 * b)
    hi = 30 * b + 29 if b < N_DURATION_BINS - 1 else 30 * b + 120
    return rng.randint(lo, hi)


def _sample_length(
    rng: random.Random,
    mock: MockConfig,
    stats: ReferenceStats,
    guidance: Guidance | None,
) -> int:
    if guidance is not None and rng.random() < mock.guidance_compliance:
        if guidance.target_length is not None:
            return max(1, min(guidance.target_length, MAX_CHAIN_LENGTH + 1))
        return _draw_index(rng, stats.length_dist) + 1
    if mock.length_bias is not None:
        return _draw_index(rng, mock.length_bias) + 1
    return _draw_index(rng, stats.length_dist) + 1


def _fit_day(durations: list[int]) -> list[int]:
    """Scale drawn durations so the chain covers the day exactly, each >= 15 min."""
    total = sum(durations)
    scaled = [max(15, round(d * MINUTES_PER_DAY / total)) for d in durations]
    drift = MINUTES_PER_DAY - sum(scaled)
    i = 0
    while drift != 0:
        j = i % len(scaled)
        if drift < 0 and scaled[j] <= 15:
            i += 1
            continue
        step = 1 if drift > 0 else -1
        scaled[j] += step
        drift -= step
        i += 1
    return scaled


def _base_chain(
    rng: random.Random, stats: ReferenceStats, n: int
) -> tuple[Activity, ...]:
    durs = _fit_day(
        [_duration_minutes(rng, _draw_index(rng, stats.duration_dist)) for _ in range(n)]
    )
    acts = []
    t = 0
    for i, d in enumerate(durs):
        if i == 0 or (i == n - 1 and n >= 3):
            a_type = ActivityType.HOME
        else:
            a_type = ActivityType.from_code(_draw_index(rng, stats.type_dist) + 1)
        acts.append(Activity(a_type, t, t + d))
        t += d
    return tuple(acts)


def _pair_kind(a: SocioProfile, b: SocioProfile) -> str:
    kinds = {a.household_relationship, b.household_relationship}
    if kinds == {"head", "spouse"}:
        return "head-spouse"
    if kinds == {"head", "child"}:
        return "head-child"
    return "any"


def household_events(
    mock: MockConfig, stats: ReferenceStats, household: Household
) -> tuple[MockEvent, ...]:
    """Joint events for one household, derived from (seed, household_id) only.

    Every member computes the same list without seeing anyone's chain. Event
    windows sit on a 2-hour slot grid, so distinct events are always more
    than a matching tolerance apart and never overlap.
    """
    rng = _seeded_rng(mock.seed, "events", household.household_id)
    members = household.coordination_order()
    # cap at 2 events per member: more would pin that member's chain length
    # far above anything the reference distribution supports
    load: dict[str, int] = {}
    candidates: list[tuple[str, str, int]] = []
    for i in range(len(members)):
        for j in range(i + 1, len(members)):
            kind = _pair_kind(members[i], members[j])
            for code in range(1, len(ActivityType) + 1):
                rate = stats.joint_rates.rate(kind, ActivityType.from_code(code))
                if rate <= 0 or rng.random() >= rate:
                    continue
                a, b = members[i].agent_id, members[j].agent_id
                if load.get(a, 0) >= 2 or load.get(b, 0) >= 2:
                    continue
                load[a] = load.get(a, 0) + 1
                load[b] = load.get(b, 0) + 1
                candidates.append((a, b, code))
    candidates = candidates[: len(_EVENT_SLOT_HOURS)]
    slots = sorted(rng.sample(_EVENT_SLOT_HOURS, len(candidates)))
    events = []
    for (aid, bid, code), slot in zip(candidates, slots):
        start = slot * 60 + rng.choice((0, 15, 30))
        end = start + rng.choice((45, 60))
        members_set = frozenset((aid, bid))
        events.append(
            MockEvent(
                _event_key(household.household_id, code, start, end, members_set),
                ActivityType.from_code(code),
                start,
                end,
                members_set,
            )
        )
    return tuple(events)


def _apply_coordination(
    mock: MockConfig,
    stats: ReferenceStats,
    profile: SocioProfile,
    context: HouseholdContext,
    acts: tuple[Activity, ...],
    attempt: int,
) -> tuple[Activity, ...]:
    """Insert this member's side of each joint event it does not drop.

    Derived events and explicit context anchors are merged by event key, so
    an anchor that simply restates a derived event reuses the same drop coin;
    a novel anchor (hand-built context) is honored the same way.
    """
    items: dict[str, tuple[ActivityType, int, int, frozenset[str]]] = {}
    for e in household_events(mock, stats, context.household):
        if profile.agent_id in e.members:
            items[e.key] = (e.activity_type, e.start, e.end, e.members)
    for anchor in context.anchors:
        members_set = frozenset(anchor.participants | {profile.agent_id})
        key = _event_key(
            context.household_id,
            int(anchor.activity_type),
            anchor.start,
            anchor.end,
            members_set,
        )
        items.setdefault(
            key, (anchor.activity_type, anchor.start, anchor.end, members_set)
        )
    occupied: list[tuple[int, int]] = []
    for key in sorted(items, key=lambda k: (items[k][1], items[k][2], k)):
        a_type, start, end, members_set = items[key]
        coin = _seeded_rng(mock.seed, "omit", key, profile.agent_id, attempt)
        if coin.random() < mock.hallucination_rate:
            continue
        if any(s < end and start < e for s, e in occupied):
            continue
        acts = carve_window(acts, start, end)
        acts = insert_activity(
            acts, Activity(a_type, start, end, members_set - {profile.agent_id})
        )
        occupied.append((start, end))
    return acts


def _assemble_chain(
    mock: MockConfig,
    stats: ReferenceStats,
    profile: SocioProfile,
    context: HouseholdContext | None,
    target_len: int,
    attempt: int,
) -> tuple[Activity, ...]:
    """Build a chain whose final length lands as close to target_len as possible.

    Inserting a joint event usually splits a base activity, so the base size
    that yields the target depends on how many events this member keeps. The
    kept set is fixed by the drop coins regardless of the base chain, so we
    scan base sizes and take the best fit (ties to the smaller base).
    """
    if context is None:
        rng = _seeded_rng(mock.seed, profile.agent_id, attempt, "base", target_len)
        return _base_chain(rng, stats, target_len)
    best: tuple[int, tuple[Activity, ...]] | None = None
    for base_n in range(1, MAX_CHAIN_LENGTH + 2):
        rng = _seeded_rng(mock.seed, profile.agent_id, attempt, "base", base_n)
        acts = _apply_coordination(
            mock, stats, profile, context, _base_chain(rng, stats, base_n), attempt
        )
        gap = abs(len(acts) - target_len)
        if best is None or gap < best[0]:
            best = (gap, acts)
        if gap == 0:
            break
    assert best is not None
    return best[1]


def mock_complete(
    mock: MockConfig,
    stats: ReferenceStats,
    profile: SocioProfile,
    guidance: Guidance | None = None,
    household_context: HouseholdContext | None = None,
    attempt: int = 0,
) -> RawCompletion:
    """Sample a wire-format chain from the reference statistics.

    Deterministic given (seed, agent_id, attempt): repeated calls return
    byte-identical text. The attempt index salts regeneration requests so a
    retry can actually differ. Sampled and guided lengths refer to the chain
    as emitted, joint events included.
    """
    rng = _seeded_rng(mock.seed, profile.agent_id, attempt)
    n = _sample_length(rng, mock, stats, guidance)
    acts = _assemble_chain(mock, stats, profile, household_context, n, attempt)
    return RawCompletion(text=encode_activities(acts), usage={}, latency=0.0)


# --- wire format ------------------------------------------------------------


def encode_activities(activities) -> str:
    """Canonical wire encoding: JSON array of activity objects sorted by start."""
    items = [
        {
            "type": int(a.activity_type),
            "start": format_hhmm(a.start),
            "end": format_hhmm(a.end),
            "participants": sorted(a.participants),
        }
        for a in sorted(activities, key=lambda a: (a.start, a.end))
    ]
    return json.dumps(items, separators=(",", ":"))


def encode_chain(chain: ActivityChain) -> str:
    return encode_activities(chain.activities)


def _extract_array(text: str) -> list:
    """Lenient extraction: first well-formed JSON array anywhere in the text."""
    decoder = json.JSONDecoder()
    idx = text.find("[")
    while idx != -1:
        try:
            value, _ = decoder.raw_decode(text, idx)
        except ValueError:
            value = None
        if isinstance(value, list):
            return value
        idx = text.find("[", idx + 1)
    raise ParseError("no JSON array found in reply")


_WIRE_FIELDS = ("type", "start", "end", "participants")


def parse_completion(
    raw: RawCompletion | str, household: Household, owner: str
) -> ActivityChain:
    """Strict wire-schema parsing after lenient array extraction.

    Raises ParseError with a stable, machine-readable reason for anything
    short of a chain that passes validate_chain; the reason is what the
    pipeline feeds back into the retry prompt.
    """
    text = raw.text if isinstance(raw, RawCompletion) else raw
    data = _extract_array(text)
    activities = []
    for i, item in enumerate(data):
        if not isinstance(item, dict):
            raise ParseError(f"activity {i} is not an object")
        for name in _WIRE_FIELDS:
            if name not in item:
                raise ParseError(f"activity {i} is missing field '{name}'")
        code = item["type"]
        if isinstance(code, bool) or not isinstance(code, int):
            raise ParseError(f"activity {i} field 'type' must be an integer code")
        try:
            a_type = ActivityType.from_code(code)
        except ValueError as exc:
            raise ParseError(str(exc)) from None
        times = {}
        for name in ("start", "end"):
            value = item[name]
            if not isinstance(value, str):
                raise ParseError(f"activity {i} field '{name}' must be an HH:MM string")
            try:
                times[name] = parse_hhmm(value)
            except ValueError as exc:
                raise ParseError(f"activity {i} field '{name}': {exc}") from None
        parts = item["participants"]
        if not isinstance(parts, list) or not all(isinstance(p, str) for p in parts):
            raise ParseError(
                f"activity {i} field 'participants' must be a list of id strings"
            )
        activities.append(
            Activity(a_type, times["start"], times["end"], frozenset(parts))
        )
    chain = ActivityChain(owner, household.household_id, tuple(activities))
    violations = validate_chain(chain, household)
    if violations:
        v = violations[0]
        raise ParseError(f"invalid chain: {v.code}: {v.message}")
    return chain
