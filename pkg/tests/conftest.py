import re

import pytest

from chaingen.domain import Household, SocioProfile
from chaingen.stats import ingest_diary, read_diary_csv
from chaingen.synthetic import make_diaries, make_roster

from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parent.parent
FIXTURES = REPO_ROOT / "fixtures"
DATA = Path(__file__).resolve().parent / "data"
GOLDEN = Path(__file__).resolve().parent / "golden"


def _profile(agent_id, relationship, **kw):
    base = dict(
        gender="female",
        age=40,
        education="bachelor",
        student_status="not a student",
        employment_status="employed",
        income_level="middle",
        has_driver_license=True,
        location_descriptor="suburban area",
    )
    base.update(kw)
    return SocioProfile(
        agent_id=agent_id, household_relationship=relationship, **base
    )


@pytest.fixture(scope="session")
def trio_household():
    """Three-member household used by parser and reconciliation tests."""
    return Household(
        "hh1",
        (
            _profile("p1", "head"),
            _profile("p2", "spouse", gender="male"),
            _profile("p3", "child", age=10, student_status="student",
                     employment_status="not employed", has_driver_license=False),
        ),
    )


@pytest.fixture(scope="session")
def bundled():
    """Ingested bundled diary fixture: stats, chains, households, profiles."""
    return ingest_diary(read_diary_csv(FIXTURES / "diaries.csv"))


@pytest.fixture(scope="session")
def small_world():
    """Small coupled roster with matching reference stats, for pipeline tests."""
    roster = make_roster(25, seed=9)
    diaries = make_diaries(roster, seed=9)
    profiles = {m.agent_id: m for h in roster for m in h.members}
    from chaingen.stats import chains_to_diary_rows

    result = ingest_diary(chains_to_diary_rows(diaries, profiles))
    return roster, result


# --- acceptance summary ---------------------------------------------------------
# One visible line per acceptance criterion at the end of the run, so the
# gate's verdicts survive output capturing.

CRITERIA = {
    1: "JSD matches brute force within 1e-12; identity is 0, disjoint support is 1",
    2: "feedback ablation: biased mock, 500 chains, length JSD < 0.05 and >= 2x no-feedback gap",
    3: "consistency ablation at hallucination 0.3: reconciled >= 94%, raw within 70% +/- 5pp",
    4: "audit arithmetic: 1011 matched / 63 unmatched reports 94.1% +/- 0.05pp",
    5: "20-reply corpus parses or fails with stable reasons; 10,000-chain round-trip",
    6: "byte-identical reruns; resume after a 50%-of-households interrupt equals uninterrupted",
    7: "self-comparison: evaluate(X, stats(X)) is zero on all five dimensions",
    8: "ingest_diary and chains_to_stats agree exactly on the bundled fixture",
    9: "live endpoint smoke, 5 agents parse and reconcile (env-gated)",
}

_acceptance_results: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance" not in report.nodeid:
        return
    match = re.search(r"test_criterion_(\d+)", report.nodeid)
    if not match:
        return
    if report.when == "call" or (report.when == "setup" and report.skipped):
        outcome = "PASS" if report.passed else "SKIP" if report.skipped else "FAIL"
        detail = dict(report.user_properties).get("detail", "")
        _acceptance_results[int(match.group(1))] = (outcome, detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for n in sorted(_acceptance_results):
        outcome, detail = _acceptance_results[n]
        line = f"criterion {n} {outcome}: {CRITERIA[n]}"
        if detail:
            line += f" [{detail}]"
        terminalreporter.write_line(line)
