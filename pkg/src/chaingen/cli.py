"""Command-line entry point: ingest, generate, evaluate, ablate, audit, report.

Configuration is a small INI file plus --set section.key=value overrides;
overrides win over file values, and unknown keys are rejected. The API key
for the HTTP backend is only ever named in the config (api_key_env) and read
from the environment.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from pathlib import Path

from .evaluation import emit_plot_data, evaluate, run_ablation, save_report
from .gateway import BackendConfig, MockConfig, point_mass_length
from .household import ChainStore, audit_consistency, write_audit_csv
from .pipeline import RunConfig, run_generation
from .stats import chains_to_stats, ingest_diary, load_stats, read_diary_csv, save_stats
from .synthetic import load_roster


class CliError(Exception):
    """Usage-level problem: bad flag combination or bad configuration."""


class _Parser(argparse.ArgumentParser):
    # usage errors exit 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


_CONFIG_SCHEMA = {
    "run": {
        "seed", "sample_size", "feedback", "reconcile", "tolerance",
        "max_parse_retries", "concurrency", "roster", "diaries", "backend", "out",
    },
    "backend": {
        "endpoint_url", "model_name", "temperature", "max_retries", "timeout",
        "api_key_env", "requests_per_second",
    },
    "mock": {"seed", "hallucination_rate", "guidance_compliance", "length_bias"},
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def load_config(path: str | None, overrides: list[str]) -> dict[str, dict[str, str]]:
    """INI file -> nested string dict, with section.key=value overrides applied."""
    config: dict[str, dict[str, str]] = {section: {} for section in _CONFIG_SCHEMA}
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise CliError(f"config file not found: {path}")
        for section in parser.sections():
            if section not in _CONFIG_SCHEMA:
                raise CliError(f"unknown config section [{section}]")
            for key, value in parser.items(section):
                if key not in _CONFIG_SCHEMA[section]:
                    raise CliError(f"unknown config key {section}.{key}")
                config[section][key] = value
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise CliError(f"override must look like section.key=value, got {item!r}")
        target, value = item.split("=", 1)
        section, key = target.split(".", 1)
        if section not in _CONFIG_SCHEMA or key not in _CONFIG_SCHEMA[section]:
            raise CliError(f"unknown config key {section}.{key}")
        config[section][key] = value
    return config


def _to_bool(value: str, name: str) -> bool:
    if value.lower() in _TRUE:
        return True
    if value.lower() in _FALSE:
        return False
    raise CliError(f"{name} must be a boolean, got {value!r}")


def _to_int(value: str, name: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise CliError(f"{name} must be an integer, got {value!r}") from None


def _to_float(value: str, name: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise CliError(f"{name} must be a number, got {value!r}") from None


def _parse_length_bias(value: str) -> tuple[float, ...] | None:
    value = value.strip()
    if not value:
        return None
    parts = [p.strip() for p in value.split(",")]
    if len(parts) == 1:
        return point_mass_length(_to_int(parts[0], "mock.length_bias"))
    return tuple(_to_float(p, "mock.length_bias") for p in parts)


def _build_backend(config: dict[str, dict[str, str]], kind: str, seed: int):
    if kind == "mock":
        mock = config["mock"]
        try:
            return MockConfig(
                seed=_to_int(mock["seed"], "mock.seed") if "seed" in mock else seed,
                hallucination_rate=_to_float(
                    mock.get("hallucination_rate", "0"), "mock.hallucination_rate"
                ),
                guidance_compliance=_to_float(
                    mock.get("guidance_compliance", "1"), "mock.guidance_compliance"
                ),
                length_bias=_parse_length_bias(mock.get("length_bias", "")),
            )
        except ValueError as exc:
            raise CliError(str(exc)) from None
    backend = config["backend"]
    if "endpoint_url" not in backend or "model_name" not in backend:
        raise CliError("http backend needs backend.endpoint_url and backend.model_name")
    try:
        return BackendConfig(
            endpoint_url=backend["endpoint_url"],
            model_name=backend["model_name"],
            temperature=_to_float(backend.get("temperature", "1.0"), "backend.temperature"),
            max_retries=_to_int(backend.get("max_retries", "4"), "backend.max_retries"),
            timeout=_to_float(backend.get("timeout", "60"), "backend.timeout"),
            api_key_env=backend.get("api_key_env", "CHAINGEN_API_KEY"),
            requests_per_second=(
                _to_float(backend["requests_per_second"], "backend.requests_per_second")
                if backend.get("requests_per_second", "").strip()
                else None
            ),
        )
    except ValueError as exc:
        raise CliError(str(exc)) from None


def _build_run_config(config: dict[str, dict[str, str]], args) -> RunConfig:
    run = config["run"]
    seed = args.seed if args.seed is not None else _to_int(run.get("seed", "0"), "run.seed")
    backend_kind = args.backend or run.get("backend", "mock")
    if backend_kind not in ("mock", "http"):
        raise CliError(f"run.backend must be mock or http, got {backend_kind!r}")
    sample_size: int | None
    if args.sample_size is not None:
        sample_size = args.sample_size
    elif run.get("sample_size", "").strip():
        sample_size = _to_int(run["sample_size"], "run.sample_size")
    else:
        sample_size = None
    feedback = _to_bool(run.get("feedback", "true"), "run.feedback")
    reconcile = _to_bool(run.get("reconcile", "true"), "run.reconcile")
    if args.no_feedback:
        feedback = False
    if args.no_reconcile:
        reconcile = False
    try:
        return RunConfig(
            backend=_build_backend(config, backend_kind, seed),
            feedback_enabled=feedback,
            reconcile_enabled=reconcile,
            sample_size=sample_size,
            seed=seed,
            tolerance=_to_int(run.get("tolerance", "15"), "run.tolerance"),
            max_parse_retries=_to_int(
                run.get("max_parse_retries", "3"), "run.max_parse_retries"
            ),
            concurrency=args.concurrency
            if args.concurrency is not None
            else _to_int(run.get("concurrency", "1"), "run.concurrency"),
        )
    except ValueError as exc:
        raise CliError(str(exc)) from None


def _require_path(value: str | None, what: str) -> Path:
    if not value:
        raise CliError(f"{what} is required (flag or config)")
    path = Path(value)
    if not path.exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _load_inputs(config: dict[str, dict[str, str]], args):
    roster_path = _require_path(
        getattr(args, "roster", None) or config["run"].get("roster"), "roster file"
    )
    diaries_path = _require_path(
        getattr(args, "diaries", None) or config["run"].get("diaries"), "diaries file"
    )
    roster = load_roster(roster_path)
    ingested = ingest_diary(read_diary_csv(diaries_path))
    return roster, ingested


# --- subcommands ---------------------------------------------------------------


def _cmd_ingest(args) -> int:
    rows = read_diary_csv(_require_path(args.diaries, "diaries file"))
    result = ingest_diary(rows)
    save_stats(result.stats, args.out)
    print(
        f"ingested {result.stats.n_chains} chains "
        f"({result.stats.n_activities} activities, {result.skipped} agents skipped) "
        f"-> {args.out}"
    )
    return 0


def _cmd_generate(args) -> int:
    config = load_config(args.config, args.set or [])
    run_config = _build_run_config(config, args)
    roster, ingested = _load_inputs(config, args)
    out_dir = Path(args.out or config["run"].get("out") or "run")
    store, manifest = run_generation(
        run_config, roster, ingested.stats, ingested.chains, ingested.profiles, out_dir
    )
    assert manifest is not None
    print(
        f"generated {manifest.generated} chains "
        f"({len(manifest.skipped)} skipped, {manifest.parse_failures} parse failures) "
        f"-> {out_dir}"
    )
    return 0


def _cmd_evaluate(args) -> int:
    config = load_config(args.config, args.set or [])
    store = ChainStore(_require_path(args.chains, "chain store"))
    if len(store) == 0:
        raise ValueError(f"chain store is empty: {args.chains}")
    reference = load_stats(_require_path(args.stats, "stats file"))
    roster = load_roster(
        _require_path(args.roster or config["run"].get("roster"), "roster file")
    )
    households = {h.household_id: h for h in roster}
    profiles = {m.agent_id: m for h in roster for m in h.members}
    out_dir = Path(args.out or "eval")
    out_dir.mkdir(parents=True, exist_ok=True)
    report = evaluate(store, profiles, reference, households, args.tolerance)
    save_report(report, out_dir / "report.json")
    generated_stats = chains_to_stats(store.chains(), profiles, households)
    emit_plot_data(report, generated_stats, reference, out_dir / "plots")
    dims = ", ".join(
        f"{dim}={value:.4f}" for dim, value in report.jsd_by_dimension.items()
    )
    print(f"report -> {out_dir / 'report.json'} ({dims})")
    return 0


def _cmd_ablate(args) -> int:
    config = load_config(args.config, args.set or [])
    run_config = _build_run_config(config, args)
    roster, ingested = _load_inputs(config, args)
    out_dir = Path(args.out or config["run"].get("out") or "ablation")
    result = run_ablation(
        run_config, roster, ingested.stats, ingested.chains, ingested.profiles,
        out_dir, run_config.tolerance,
    )
    import json

    (out_dir / "ablation.json").write_text(
        json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    length_with = result.with_report.jsd_by_dimension["length"]
    length_without = result.without_report.jsd_by_dimension["length"]
    print(
        f"ablation -> {out_dir}: length JSD with={length_with:.4f} "
        f"without={length_without:.4f}; consistency with={result.with_audit.rate:.3f} "
        f"without={result.without_audit.rate:.3f}"
    )
    return 0


def _cmd_audit(args) -> int:
    config = load_config(args.config, args.set or [])
    store = ChainStore(_require_path(args.chains, "chain store"))
    roster = load_roster(
        _require_path(args.roster or config["run"].get("roster"), "roster file")
    )
    audit = audit_consistency(store, roster, args.tolerance)
    write_audit_csv(audit, args.out)
    print(
        f"audit -> {args.out}: {audit.consistent}/{audit.total} consistent "
        f"({audit.rate:.1%})"
    )
    return 0


def _cmd_report(args) -> int:
    try:
        # imported here so every other subcommand runs without matplotlib
        from .figures import render_all
    except ImportError:
        raise CliError(
            "report needs matplotlib; install it or use the evaluate subcommand"
        ) from None
    code = _cmd_evaluate(args)
    if code != 0:
        return code
    out_dir = Path(args.out or "eval")
    figures = render_all(out_dir / "plots", out_dir / "figures")
    print(f"figures -> {out_dir / 'figures'} ({len(figures)} png)")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(
        prog="chaingen",
        description="Synthesize and evaluate daily activity chains.",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_common(p, config_based: bool):
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="config override; wins over file values")
        p.add_argument("--config", help="INI config file")
        if config_based:
            p.add_argument("--seed", type=int, help="sampling and mock seed")
            p.add_argument("--sample-size", type=int, dest="sample_size",
                           help="number of agents to sample")
            p.add_argument("--no-feedback", action="store_true",
                           help="disable chain-length feedback")
            p.add_argument("--no-reconcile", action="store_true",
                           help="disable household reconciliation")
            p.add_argument("--backend", choices=("http", "mock"),
                           help="backend kind (overrides run.backend)")
            p.add_argument("--concurrency", type=int,
                           help="household workers (default 1; 1 is byte-reproducible)")
            p.add_argument("--roster", help="roster JSON (overrides run.roster)")
            p.add_argument("--diaries", help="diary CSV (overrides run.diaries)")

    p = sub.add_parser("ingest", help="diary CSV -> reference stats JSON")
    p.add_argument("diaries", help="diary CSV file")
    p.add_argument("-o", "--out", default="stats.json", help="output stats file")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("generate", help="run the generation pipeline")
    add_common(p, config_based=True)
    p.add_argument("-o", "--out", help="output directory (default: run)")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("evaluate", help="score a chain store against reference stats")
    add_common(p, config_based=False)
    p.add_argument("--chains", required=True, help="chain store JSONL")
    p.add_argument("--stats", required=True, help="reference stats JSON")
    p.add_argument("--roster", help="roster JSON (or run.roster from config)")
    p.add_argument("--tolerance", type=int, default=15, help="match tolerance, minutes")
    p.add_argument("-o", "--out", help="output directory (default: eval)")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("ablate", help="paired runs with and without the feedback loop")
    add_common(p, config_based=True)
    p.add_argument("-o", "--out", help="output directory (default: ablation)")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("audit", help="household consistency audit -> CSV")
    add_common(p, config_based=False)
    p.add_argument("--chains", required=True, help="chain store JSONL")
    p.add_argument("--roster", help="roster JSON (or run.roster from config)")
    p.add_argument("--tolerance", type=int, default=15, help="match tolerance, minutes")
    p.add_argument("-o", "--out", default="audit.csv", help="output CSV path")
    p.set_defaults(func=_cmd_audit)

    p = sub.add_parser("report", help="evaluate plus rendered PNG figures")
    add_common(p, config_based=False)
    p.add_argument("--chains", required=True, help="chain store JSONL")
    p.add_argument("--stats", required=True, help="reference stats JSON")
    p.add_argument("--roster", help="roster JSON (or run.roster from config)")
    p.add_argument("--tolerance", type=int, default=15, help="match tolerance, minutes")
    p.add_argument("-o", "--out", help="output directory (default: eval)")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"chaingen: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001  single-line diagnostics by contract
        print(f"chaingen: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
