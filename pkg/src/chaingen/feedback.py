"""Statistical feedback on generated chain lengths.

The loop tracks the running length distribution of committed chains and, once
warmed up, steers the next generation toward the length with the largest
positive deficit against the reference distribution. Feedback is restricted
to chain length on purpose; no other dimension is ever fed back.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .domain import ActivityChain, chain_length
from .stats import MAX_CHAIN_LENGTH, N_LENGTH_BINS, length_bin

DEFAULT_WARMUP = 20
DEFICIT_EPSILON = 0.01


@dataclass(frozen=True)
class Guidance:
    """Structured guidance plus the exact sentence embedded into the prompt.

    target_length is None for the neutral 'stay on distribution' reminder
    emitted when no length deficit exceeds the dead-band.
    """

    text: str
    target_length: int | None = None

    def __str__(self) -> str:
        return self.text


@dataclass
class FeedbackState:
    """Running chain-length histogram of generated output plus the target."""

    target_length_dist: list[float]
    generated_length_counts: list[int] = field(
        default_factory=lambda: [0] * N_LENGTH_BINS
    )
    chains_seen: int = 0
    enabled: bool = True
    warmup: int = DEFAULT_WARMUP

    def __post_init__(self) -> None:
        if len(self.target_length_dist) != N_LENGTH_BINS:
            raise ValueError(
                f"target length distribution must have {N_LENGTH_BINS} bins"
            )

    def checkpoint(self) -> dict:
        return {
            "generated_length_counts": list(self.generated_length_counts),
            "chains_seen": self.chains_seen,
            "enabled": self.enabled,
        }


def record_chain(state: FeedbackState, chain: ActivityChain) -> FeedbackState:
    """Count one committed chain; lengths beyond the cap land in the overflow bin."""
    state.generated_length_counts[length_bin(chain_length(chain))] += 1
    state.chains_seen += 1
    return state


def next_guidance(state: FeedbackState) -> Guidance | None:
    """Guidance for the next generation, or None while disabled or warming up.

    Picks the length with the maximum positive deficit (target share minus
    generated share), ties broken toward the smaller length. Inside the
    dead-band a neutral reminder of the target distribution is returned.
    """
    if not state.enabled or state.chains_seen < state.warmup:
        return None
    total = state.chains_seen
    deficits = [
        state.target_length_dist[i] - state.generated_length_counts[i] / total
        for i in range(N_LENGTH_BINS)
    ]
    best = max(range(N_LENGTH_BINS), key=lambda i: (deficits[i], -i))
    if deficits[best] <= DEFICIT_EPSILON:
        shares = ", ".join(
            f"{i + 1}:{state.target_length_dist[i]:.0%}"
            for i in range(N_LENGTH_BINS)
            if state.target_length_dist[i] >= 0.01
        )
        return Guidance(
            text=(
                "Recent output already tracks the reference chain-length "
                f"distribution ({shares}); keep matching it."
            ),
            target_length=None,
        )
    # The overflow bin is addressed as one past the cap.
    target = best + 1 if best < MAX_CHAIN_LENGTH else MAX_CHAIN_LENGTH + 1
    return Guidance(
        text=(
            "Recent output under-represents this day shape: aim for a chain of "
            f"about {target} activities today."
        ),
        target_length=target,
    )


def state_from_lengths(
    target_length_dist: list[float],
    lengths: list[int],
    enabled: bool = True,
    warmup: int = DEFAULT_WARMUP,
) -> FeedbackState:
    """Rebuild feedback state from the lengths of already-committed chains."""
    state = FeedbackState(
        target_length_dist=list(target_length_dist), enabled=enabled, warmup=warmup
    )
    for n in lengths:
        state.generated_length_counts[length_bin(n)] += 1
        state.chains_seen += 1
    return state
