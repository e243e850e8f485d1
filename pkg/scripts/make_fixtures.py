"""Regenerate the bundled fixtures under fixtures/.

Two diary files stand in for two independent reference datasets: diaries.csv
uses the default schedule style, diaries_alt.csv a shifted style (different
wake times, work hours, and coordination propensities). Output is fully
deterministic, so rerunning this script leaves the files unchanged.
"""

from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from chaingen.stats import chains_to_diary_rows, write_diary_csv  # noqa: E402
from chaingen.synthetic import (  # noqa: E402
    ALT_STYLE,
    make_diaries,
    make_roster,
    save_roster,
)

RUN_INI = """\
[run]
roster = fixtures/roster.json
diaries = fixtures/diaries.csv
backend = mock
seed = 7
sample_size =

[mock]
hallucination_rate = 0.1
guidance_compliance = 1.0
"""


def main() -> None:
    out = Path(__file__).resolve().parent.parent / "fixtures"
    out.mkdir(exist_ok=True)

    roster = make_roster(120, seed=0)
    diaries = make_diaries(roster, seed=0)
    profiles = {m.agent_id: m for h in roster for m in h.members}
    save_roster(roster, out / "roster.json")
    write_diary_csv(out / "diaries.csv", chains_to_diary_rows(diaries, profiles))

    alt_roster = make_roster(60, seed=1, style=ALT_STYLE)
    alt_diaries = make_diaries(alt_roster, seed=1, style=ALT_STYLE)
    alt_profiles = {m.agent_id: m for h in alt_roster for m in h.members}
    write_diary_csv(
        out / "diaries_alt.csv", chains_to_diary_rows(alt_diaries, alt_profiles)
    )

    (out / "run.ini").write_text(RUN_INI, encoding="utf-8")
    n_agents = sum(len(h.members) for h in roster)
    print(f"roster.json: {len(roster)} households, {n_agents} agents")
    print(f"diaries.csv: {len(diaries)} chains")
    print(f"diaries_alt.csv: {len(alt_diaries)} chains")


if __name__ == "__main__":
    main()
