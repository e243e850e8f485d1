"""Measurement: dimension-wise JSD reports, ablation harness, plot data.

All comparisons are distribution-level: the generated store is aggregated
with the same binning as the reference, then each dimension is scored with
base-2 Jensen-Shannon divergence. Reports go to JSON; every number in a
report can be recomputed from the plot CSVs emitted next to it.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

from .domain import ActivityType, Household, SocioProfile
from .household import ChainStore, ConsistencyAudit, audit_consistency
from .pipeline import RunConfig, RunManifest, run_generation
from .stats import (
    LENGTH_BIN_LABELS,
    N_DURATION_BINS,
    N_TIME_BINS,
    RELATION_PAIRS,
    ReferenceStats,
    bernoulli_jsd,
    chains_to_stats,
    duration_bin_label,
    jsd,
    time_bin_label,
)

REPORT_SCHEMA_VERSION = 1
DIMENSIONS = ("type", "start", "end", "duration", "length")
DEFAULT_TIMING_TYPES = (ActivityType.HOME, ActivityType.WORK, ActivityType.BUY_MEALS)
PLOT_HEADER = ("bin_label", "reference", "generated")


@dataclass
class EvalReport:
    jsd_by_dimension: dict[str, float]
    slices: dict[str, dict[str, float]] = field(default_factory=dict)
    per_activity_timing: dict[ActivityType, tuple[float, float]] = field(
        default_factory=dict
    )
    joint_rate_jsd: dict[str, dict[ActivityType, float]] = field(default_factory=dict)
    consistency: dict | None = None
    n_chains: int = 0
    n_reference_chains: int = 0

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "n_chains": self.n_chains,
            "n_reference_chains": self.n_reference_chains,
            "jsd_by_dimension": self.jsd_by_dimension,
            "slices": self.slices,
            "per_activity_timing": {
                t.label: {"start": s, "end": e}
                for t, (s, e) in self.per_activity_timing.items()
            },
            "joint_rate_jsd": {
                pair: {t.label: v for t, v in rates.items()}
                for pair, rates in self.joint_rate_jsd.items()
            },
            "consistency": self.consistency,
        }


def save_report(report: EvalReport, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return path


def _dimension_dists(stats: ReferenceStats) -> dict[str, list[float]]:
    return {
        "type": stats.type_dist,
        "start": stats.start_dist,
        "end": stats.end_dist,
        "duration": stats.duration_dist,
        "length": stats.length_dist,
    }


def _dimension_jsds(generated: ReferenceStats, reference: ReferenceStats) -> dict[str, float]:
    gen = _dimension_dists(generated)
    ref = _dimension_dists(reference)
    return {dim: jsd(gen[dim], ref[dim]) for dim in DIMENSIONS}


def evaluate(
    generated,
    profiles: dict[str, SocioProfile],
    reference: ReferenceStats,
    households: dict[str, Household] | None = None,
    tolerance: int = 15,
    timing_types: tuple[ActivityType, ...] = DEFAULT_TIMING_TYPES,
    all_timing_types: bool = False,
) -> EvalReport:
    """Score a generated store against reference statistics.

    generated may be a ChainStore or any iterable of chains. households are
    needed for relation-pair joint rates and the consistency audit; without
    them only the 'any' pair is scored and the audit is skipped. Slices and
    per-activity timing panels are emitted only where both sides have
    observations (a divergence against nothing is undefined, not zero).
    """
    store = generated if isinstance(generated, ChainStore) else None
    chains = tuple(store.chains()) if store is not None else tuple(generated)
    if not chains:
        raise ValueError("empty store: nothing to evaluate")
    gen_stats = chains_to_stats(chains, profiles, households)

    report = EvalReport(
        jsd_by_dimension=_dimension_jsds(gen_stats, reference),
        n_chains=gen_stats.n_chains,
        n_reference_chains=reference.n_chains,
    )

    for tag in sorted(set(gen_stats.per_group) & set(reference.per_group)):
        report.slices[tag] = _dimension_jsds(
            gen_stats.per_group[tag], reference.per_group[tag]
        )

    panel = tuple(ActivityType) if all_timing_types else timing_types
    for a_type in panel:
        code = int(a_type)
        if code not in gen_stats.per_type_start or code not in reference.per_type_start:
            continue
        g_start = gen_stats.per_type_start[code]
        g_end = gen_stats.per_type_end[code]
        r_start = reference.per_type_start[code]
        r_end = reference.per_type_end[code]
        if min(g_start.total, g_end.total, r_start.total, r_end.total) == 0:
            continue
        report.per_activity_timing[a_type] = (
            jsd(g_start.to_distribution(), r_start.to_distribution()),
            jsd(g_end.to_distribution(), r_end.to_distribution()),
        )

    pairs = RELATION_PAIRS if households is not None else ("any",)
    for pair in pairs:
        rates: dict[ActivityType, float] = {}
        for a_type in ActivityType:
            idx = int(a_type) - 1
            den_g = gen_stats.joint_rates.denominators[pair][idx]
            den_r = reference.joint_rates.denominators[pair][idx]
            if den_g == 0 and den_r == 0:
                continue
            rates[a_type] = bernoulli_jsd(
                gen_stats.joint_rates.rate(pair, a_type),
                reference.joint_rates.rate(pair, a_type),
            )
        report.joint_rate_jsd[pair] = rates

    if households is not None and store is not None:
        audit = audit_consistency(store, list(households.values()), tolerance)
        report.consistency = audit.summary()

    return report


@dataclass
class AblationResult:
    """Paired runs differing only in the feedback and reconciliation toggles."""

    with_report: EvalReport
    without_report: EvalReport
    with_audit: ConsistencyAudit
    without_audit: ConsistencyAudit
    with_manifest: RunManifest
    without_manifest: RunManifest

    def deltas(self) -> dict[str, float]:
        return {
            dim: self.with_report.jsd_by_dimension[dim]
            - self.without_report.jsd_by_dimension[dim]
            for dim in DIMENSIONS
        }

    def to_dict(self) -> dict:
        return {
            "with": self.with_report.to_dict(),
            "without": self.without_report.to_dict(),
            "deltas": self.deltas(),
            "consistency": {
                "with": self.with_audit.summary(),
                "without": self.without_audit.summary(),
            },
        }


def run_ablation(
    config: RunConfig,
    roster: list[Household],
    stats: ReferenceStats,
    examples,
    example_profiles: dict[str, SocioProfile],
    out_dir: str | Path,
    tolerance: int = 15,
) -> AblationResult:
    """Run the generator twice, with and without the closed-loop machinery.

    The 'with' arm enables both statistical feedback and household
    reconciliation; the 'without' arm disables both. Seed, roster, sampling,
    and backend are identical across arms.
    """
    out_dir = Path(out_dir)
    households = {h.household_id: h for h in roster}
    profiles = {m.agent_id: m for h in roster for m in h.members}
    arms = {}
    for name, enabled in (("with", True), ("without", False)):
        arm_config = replace(
            config, feedback_enabled=enabled, reconcile_enabled=enabled
        )
        store, manifest = run_generation(
            arm_config, roster, stats, examples, example_profiles, out_dir / name
        )
        report = evaluate(store, profiles, stats, households, tolerance)
        audit = audit_consistency(store, roster, tolerance)
        arms[name] = (report, audit, manifest)
    return AblationResult(
        with_report=arms["with"][0],
        without_report=arms["without"][0],
        with_audit=arms["with"][1],
        without_audit=arms["without"][1],
        with_manifest=arms["with"][2],
        without_manifest=arms["without"][2],
    )


# --- plot data ---------------------------------------------------------------


def _slug(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", text.lower()).strip("_")


def _write_panel(
    path: Path, labels, reference: list[float], generated: list[float]
) -> Path:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PLOT_HEADER)
        for label, r, g in zip(labels, reference, generated):
            writer.writerow([label, repr(float(r)), repr(float(g))])
    return path


def _panel_labels(dim: str) -> list[str]:
    if dim == "type":
        return [t.label for t in ActivityType]
    if dim in ("start", "end"):
        return [time_bin_label(i) for i in range(N_TIME_BINS)]
    if dim == "duration":
        return [duration_bin_label(i) for i in range(N_DURATION_BINS)]
    return list(LENGTH_BIN_LABELS)


def emit_plot_data(
    report: EvalReport,
    generated_stats: ReferenceStats,
    reference_stats: ReferenceStats,
    out_dir: str | Path,
) -> list[Path]:
    """Write one bin_label,reference,generated CSV per report panel.

    Full float precision is kept so every JSD in the report can be recomputed
    exactly from these files.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    gen = _dimension_dists(generated_stats)
    ref = _dimension_dists(reference_stats)
    for dim in DIMENSIONS:
        written.append(
            _write_panel(out_dir / f"{dim}.csv", _panel_labels(dim), ref[dim], gen[dim])
        )

    for tag in report.slices:
        g_slice = generated_stats.per_group.get(tag)
        r_slice = reference_stats.per_group.get(tag)
        if g_slice is None or r_slice is None:
            continue
        g_dists = _dimension_dists(g_slice)
        r_dists = _dimension_dists(r_slice)
        for dim in DIMENSIONS:
            written.append(
                _write_panel(
                    out_dir / f"slice_{_slug(tag)}_{dim}.csv",
                    _panel_labels(dim),
                    r_dists[dim],
                    g_dists[dim],
                )
            )

    for a_type in report.per_activity_timing:
        code = int(a_type)
        g_start = generated_stats.per_type_start[code].to_distribution()
        g_end = generated_stats.per_type_end[code].to_distribution()
        r_start = reference_stats.per_type_start[code].to_distribution()
        r_end = reference_stats.per_type_end[code].to_distribution()
        slug = _slug(a_type.label)
        written.append(
            _write_panel(
                out_dir / f"timing_{slug}_start.csv",
                _panel_labels("start"), r_start, g_start,
            )
        )
        written.append(
            _write_panel(
                out_dir / f"timing_{slug}_end.csv",
                _panel_labels("end"), r_end, g_end,
            )
        )

    for pair, rates in report.joint_rate_jsd.items():
        labels = [t.label for t in rates]
        r_rates = [reference_stats.joint_rates.rate(pair, t) for t in rates]
        g_rates = [generated_stats.joint_rates.rate(pair, t) for t in rates]
        written.append(
            _write_panel(
                out_dir / f"joint_rate_{_slug(pair)}.csv", labels, r_rates, g_rates
            )
        )

    return written
