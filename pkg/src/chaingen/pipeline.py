"""End-to-end generation: sampling, the per-agent loop, persistence, manifests.

Layout written under out_dir: chains.jsonl (the store, one canonical record
per line in commit order), chains.jsonl.idx (household offsets), and
manifest.json (config snapshot plus accounting), written atomically at the
end of a run. A run pointed at an existing partial store resumes after the
last committed agent; with the mock backend the resumed result is
byte-identical to an uninterrupted run.
"""

from __future__ import annotations

import json
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .domain import (
    ActivityChain,
    Household,
    SocioProfile,
    chain_length,
    validate_chain,
)
from .feedback import (
    FeedbackState,
    next_guidance,
    record_chain,
    state_from_lengths,
)
from .gateway import (
    BackendConfig,
    MockConfig,
    ParseError,
    complete,
    mock_complete,
    parse_completion,
)
from .household import ChainStore, ReconcilePolicy, build_context, reconcile
from .prompts import build_prompt, select_few_shot
from .stats import ReferenceStats

MANIFEST_SCHEMA_VERSION = 1
STORE_FILENAME = "chains.jsonl"
MANIFEST_FILENAME = "manifest.json"


@dataclass
class RunConfig:
    backend: BackendConfig | MockConfig
    feedback_enabled: bool = True
    reconcile_enabled: bool = True
    sample_size: int | None = None
    seed: int = 0
    tolerance: int = 15
    max_parse_retries: int = 3
    concurrency: int = 1

    def __post_init__(self) -> None:
        if self.sample_size is not None and self.sample_size < 1:
            raise ValueError("sample_size must be >= 1")
        if self.max_parse_retries < 0:
            raise ValueError("max_parse_retries must be >= 0")
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")

    def snapshot(self) -> dict:
        backend = asdict(self.backend)
        backend["kind"] = "mock" if isinstance(self.backend, MockConfig) else "http"
        if backend.get("length_bias") is not None:
            backend["length_bias"] = list(backend["length_bias"])
        return {
            "backend": backend,
            "feedback_enabled": self.feedback_enabled,
            "reconcile_enabled": self.reconcile_enabled,
            "sample_size": self.sample_size,
            "seed": self.seed,
            "tolerance": self.tolerance,
            "max_parse_retries": self.max_parse_retries,
            "concurrency": self.concurrency,
        }


@dataclass
class RunManifest:
    config: dict
    generated: int
    sampled_agents: int
    skipped: list[dict] = field(default_factory=list)
    parse_failures: int = 0
    repairs: dict[str, int] = field(default_factory=dict)
    feedback: dict = field(default_factory=dict)
    wall_clock_seconds: float = 0.0
    latency: dict = field(default_factory=dict)
    store_lines: int = 0

    def to_dict(self) -> dict:
        return {
            "schema_version": MANIFEST_SCHEMA_VERSION,
            "config": self.config,
            "generated": self.generated,
            "sampled_agents": self.sampled_agents,
            "skipped": self.skipped,
            "parse_failures": self.parse_failures,
            "repairs": dict(sorted(self.repairs.items())),
            "feedback": self.feedback,
            "wall_clock_seconds": self.wall_clock_seconds,
            "latency": self.latency,
            "store_lines": self.store_lines,
        }


def save_manifest(manifest: RunManifest, path: str | Path) -> Path:
    """Write the manifest atomically (tmp file + rename in the same directory)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(
        json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    os.replace(tmp, path)
    return path


def load_manifest(path: str | Path) -> dict:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("schema_version") != MANIFEST_SCHEMA_VERSION:
        raise ValueError(f"unsupported manifest schema: {data.get('schema_version')}")
    return data


def sample_agents(
    roster: list[Household], n: int, seed: int
) -> tuple[list[Household], frozenset[str]]:
    """Seeded uniform sample of n agents, expanded to whole households.

    Coordination needs complete households, so every household containing a
    sampled agent is returned in full (in roster order); the second element
    flags which agents were actually drawn, for sample-size accounting.
    """
    population = [m.agent_id for h in roster for m in h.members]
    if n > len(population):
        raise ValueError(f"sample size {n} exceeds population {len(population)}")
    rng = random.Random(seed)
    sampled = frozenset(rng.sample(population, n))
    households = [h for h in roster if h.member_ids & sampled]
    return households, sampled


_RETRY_SUFFIX = (
    "\n\nYour previous reply could not be used: {reason}. "
    "Reply again with only the JSON array of activities."
)


def _call_backend(backend, bundle, stats, profile, guidance, context, attempt):
    if isinstance(backend, MockConfig):
        return mock_complete(
            backend, stats, profile, guidance, context, attempt=attempt
        )
    return complete(backend, bundle)


class _RunState:
    """Mutable accounting shared by workers; guarded by one lock."""

    def __init__(self, store: ChainStore, feedback: FeedbackState):
        self.store = store
        self.feedback = feedback
        self.lock = threading.Lock()
        self.skipped: list[dict] = []
        self.parse_failures = 0
        self.repairs: dict[str, int] = {}
        self.latencies: list[float] = []
        self.stop = False


def _generate_member(
    config: RunConfig,
    household: Household,
    member: SocioProfile,
    stats: ReferenceStats,
    examples: list[ActivityChain],
    example_profiles: dict[str, SocioProfile],
    state: _RunState,
    stop_after: int | None,
) -> None:
    context = build_context(state.store, household, member.agent_id)
    with state.lock:
        guidance = next_guidance(state.feedback)
    few = select_few_shot(examples, example_profiles, member)
    guidance_text = guidance.text if guidance is not None else None
    bundle = build_prompt(
        member, stats, guidance_text, context.prompt_text(), few, household
    )

    chain = None
    reason: str | None = None
    for parse_attempt in range(config.max_parse_retries + 1):
        attempt_bundle = bundle
        if reason is not None:
            attempt_bundle = replace(
                bundle, user_text=bundle.user_text + _RETRY_SUFFIX.format(reason=reason)
            )
        raw = _call_backend(
            config.backend, attempt_bundle, stats, member, guidance, context, attempt=0
        )
        with state.lock:
            state.latencies.append(raw.latency)
        try:
            chain = parse_completion(raw, household, member.agent_id)
            break
        except ParseError as exc:
            reason = exc.reason
            with state.lock:
                state.parse_failures += 1
    if chain is None:
        with state.lock:
            state.skipped.append(
                {
                    "agent_id": member.agent_id,
                    "household_id": household.household_id,
                    "reason": f"parse retries exhausted: {reason}",
                }
            )
        return

    repairs = []
    if config.reconcile_enabled:

        def regenerate(attempt_index: int) -> ActivityChain:
            raw2 = _call_backend(
                config.backend, bundle, stats, member, guidance, context,
                attempt=attempt_index,
            )
            with state.lock:
                state.latencies.append(raw2.latency)
            try:
                return parse_completion(raw2, household, member.agent_id)
            except ParseError:
                # an unusable regeneration is a no-op attempt; the ladder
                # falls through to demotion on its own
                return chain

        policy = ReconcilePolicy(tolerance=config.tolerance, regenerate=regenerate)
        chain, repairs = reconcile(chain, state.store, household, policy)

    violations = validate_chain(chain, household)
    if violations:
        with state.lock:
            state.skipped.append(
                {
                    "agent_id": member.agent_id,
                    "household_id": household.household_id,
                    "reason": f"invalid after repair: {violations[0]}",
                }
            )
        return

    with state.lock:
        state.store.append(chain)
        record_chain(state.feedback, chain)
        for repair in repairs:
            state.repairs[repair.action] = state.repairs.get(repair.action, 0) + 1
        if stop_after is not None and len(state.store) >= stop_after:
            state.stop = True


def _process_household(
    config: RunConfig,
    household: Household,
    stats: ReferenceStats,
    examples: list[ActivityChain],
    example_profiles: dict[str, SocioProfile],
    state: _RunState,
    stop_after: int | None,
) -> None:
    for member in household.coordination_order():
        with state.lock:
            if state.stop:
                return
            done = state.store.has(member.agent_id)
        if done:
            continue
        _generate_member(
            config, household, member, stats, examples, example_profiles, state,
            stop_after,
        )


def run_generation(
    config: RunConfig,
    roster: list[Household],
    stats: ReferenceStats,
    examples: list[ActivityChain],
    example_profiles: dict[str, SocioProfile],
    out_dir: str | Path,
    *,
    stop_after: int | None = None,
) -> tuple[ChainStore, RunManifest | None]:
    """Generate one chain per agent, household by household.

    stop_after simulates a crash for resume testing: the run halts cleanly
    after that many total committed chains without writing a manifest, and
    returns (store, None). Byte-identical stores across runs are guaranteed
    at concurrency=1 (the default); higher concurrency trades commit-order
    stability for throughput.
    """
    if not roster:
        raise ValueError("roster is empty")
    if len(examples) < 2:
        raise ValueError("need at least 2 example chains for few-shot prompting")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.monotonic()

    if config.sample_size is not None:
        households, sampled = sample_agents(roster, config.sample_size, config.seed)
    else:
        households = list(roster)
        sampled = frozenset(m.agent_id for h in roster for m in h.members)

    store = ChainStore(out_dir / STORE_FILENAME)
    feedback = state_from_lengths(
        stats.length_dist,
        [chain_length(c) for c in store.chains()],
        enabled=config.feedback_enabled,
    )
    state = _RunState(store, feedback)

    if config.concurrency == 1:
        for household in households:
            if state.stop:
                break
            _process_household(
                config, household, stats, examples, example_profiles, state, stop_after
            )
    else:
        with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
            futures = [
                pool.submit(
                    _process_household,
                    config, household, stats, examples, example_profiles, state,
                    stop_after,
                )
                for household in households
            ]
            for f in futures:
                f.result()

    store.write_index()
    if state.stop:
        return store, None

    lat = state.latencies
    manifest = RunManifest(
        config=config.snapshot(),
        generated=len(store),
        sampled_agents=len(sampled),
        skipped=state.skipped,
        parse_failures=state.parse_failures,
        repairs=state.repairs,
        feedback=state.feedback.checkpoint(),
        wall_clock_seconds=round(time.monotonic() - started, 6),
        latency={
            "count": len(lat),
            "total": round(sum(lat), 6),
            "mean": round(sum(lat) / len(lat), 6) if lat else 0.0,
            "max": round(max(lat), 6) if lat else 0.0,
        },
        store_lines=len(store),
    )
    save_manifest(manifest, out_dir / MANIFEST_FILENAME)
    return store, manifest
