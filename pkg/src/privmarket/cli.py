"""Command-line interface.

Exit codes: 0 success, 1 runtime or protocol failure, 2 usage error.
All commands are deterministic given their flags (seeds included).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .envelope import unpack_bit_vector_stream
from .ldp import BitCounts, PrivacyParams, estimate_frequencies
from .ledger import Address, ContractPhase, EventLog, LogFormatError, verify_event_chain
from .protocol import (
    FilterCriteria,
    OperatorProfile,
    ProtocolError,
    SurveyConfiguration,
    run_survey,
)
from .simulate import (
    ExperimentConfig,
    Mode,
    default_query,
    export_results,
    run_trials,
    sample_true_choices,
    substream,
)

DEMO_CHOICES = 20
DEMO_REGIONS = ("NSW", "VIC", "QLD")


def _flip_probability(text: str) -> float:
    try:
        f = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not (0.0 <= f < 1.0):
        raise argparse.ArgumentTypeError(f"flip probability must satisfy 0 <= f < 1, got {text}")
    return f


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
    return value


def _populations(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("populations must be positive integers")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="privmarket",
        description="Privacy-preserving survey marketplace: simulations, demo runs, ledger tools.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run accuracy experiments and export CSVs")
    p_sim.add_argument("--populations", type=_populations, default=(500, 1000, 5000, 10000),
                       help="comma-separated operator counts (default 500,1000,5000,10000)")
    p_sim.add_argument("--choices", type=_positive_int, default=20)
    p_sim.add_argument("--mean", type=float, default=10.0)
    p_sim.add_argument("--sd", type=float, default=2.0)
    p_sim.add_argument("--f", type=_flip_probability, default=0.5, help="per-bit flip probability")
    p_sim.add_argument("--seed", type=_nonneg_int, default=0)
    p_sim.add_argument("--trials", type=_positive_int, default=1)
    p_sim.add_argument("--out", required=True, help="output directory for CSV files")
    p_sim.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.LDP_ONLY.value)

    p_demo = sub.add_parser("demo", help="run one full survey end to end and dump the ledger")
    p_demo.add_argument("--operators", type=_positive_int, default=5)
    p_demo.add_argument("--nr", type=_positive_int, default=3, help="required responses")
    p_demo.add_argument("--fee", type=_nonneg_int, default=100)
    p_demo.add_argument("--f", type=_flip_probability, default=0.5)
    p_demo.add_argument("--seed", type=_nonneg_int, default=7)
    p_demo.add_argument("--criteria-file", default=None,
                        help="JSON object: attribute -> list of allowed values")
    p_demo.add_argument("--trace-out", default=None,
                        help="directory for trace.txt, events.bin and events.txt")

    p_inspect = sub.add_parser("inspect-ledger", help="verify and print a binary event log")
    p_inspect.add_argument("--log-file", required=True)

    p_est = sub.add_parser("estimate", help="de-noise a file of bit-packed reports")
    p_est.add_argument("--reports-file", required=True)
    p_est.add_argument("--f", type=_flip_probability, required=True)

    return parser


def cmd_simulate(args: argparse.Namespace) -> int:
    if args.sd <= 0:
        print("error: --sd must be positive", file=sys.stderr)
        return 2
    results = []
    for population in args.populations:
        config = ExperimentConfig(
            population=population,
            n_choices=args.choices,
            mean=args.mean,
            sd=args.sd,
            privacy=PrivacyParams(args.f),
            seed=args.seed,
            trials=args.trials,
            mode=Mode(args.mode),
        )
        results.extend(run_trials(config))
    export_results(results, args.out)

    print(f"{'N':>8} {'trials':>7} {'mean_l1_norm':>14} {'sd_l1_norm':>12} {'seed':>10}")
    for population in sorted({r.population for r in results}):
        group = [r for r in results if r.population == population]
        values = [r.metrics.l1_normalized for r in group]
        mean = sum(values) / len(values)
        if len(values) > 1:
            var = sum((v - mean) ** 2 for v in values) / (len(values) - 1)
            sd = var**0.5
        else:
            sd = 0.0
        print(f"{population:>8} {len(group):>7} {mean:>14.6f} {sd:>12.6f} {args.seed:>10}")
    return 0


def _load_criteria(path: str | None) -> FilterCriteria:
    if path is None:
        return FilterCriteria.empty()
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, dict):
        raise ValueError("criteria file must hold a JSON object")
    return FilterCriteria([(attr, list(values)) for attr, values in raw.items()])


def cmd_demo(args: argparse.Namespace) -> int:
    criteria = _load_criteria(args.criteria_file)
    population = args.operators
    choices = sample_true_choices(population, 10.0, 2.0, DEMO_CHOICES, substream(args.seed, 0, 0))
    infra_rng = substream(args.seed, 0, population + 1)
    seen: set[bytes] = set()
    profiles = []
    for i in range(population):
        raw = infra_rng.bytes(20)
        while raw in seen:
            raw = infra_rng.bytes(20)
        seen.add(raw)
        profiles.append(
            OperatorProfile(
                operator_id=f"op-{i:02d}",
                addresses=(Address(raw),),
                attributes={"region": DEMO_REGIONS[i % len(DEMO_REGIONS)]},
                true_choice=int(choices[i]),
            )
        )
    config = SurveyConfiguration(
        query=default_query(DEMO_CHOICES),
        criteria=criteria,
        required_responses=args.nr,
        fee=args.fee,
        privacy=PrivacyParams(args.f),
    )
    operator_rngs = [substream(args.seed, 0, i + 1) for i in range(population)]
    try:
        outcome = run_survey(config, profiles, operator_rngs=operator_rngs, infra_rng=infra_rng)
    except ProtocolError as exc:
        for line in exc.trace:
            print(line)
        print(f"protocol failed: {exc}", file=sys.stderr)
        return 1

    for line in outcome.trace:
        print(line)
    print()
    print(outcome.contract.log.text_dump(), end="")
    ok, bad = verify_event_chain(outcome.contract.log)
    print()
    print(f"final phase: {outcome.contract.phase.name}")
    print(f"chain: {'OK' if ok else f'BROKEN at {bad}'}")

    if args.trace_out is not None:
        out = Path(args.trace_out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trace.txt").write_text("\n".join(outcome.trace) + "\n")
        (out / "events.bin").write_bytes(outcome.contract.log.to_bytes())
        (out / "events.txt").write_text(outcome.contract.log.text_dump())

    return 0 if ok and outcome.contract.phase == ContractPhase.SETTLED else 1


def cmd_inspect_ledger(args: argparse.Namespace) -> int:
    try:
        data = Path(args.log_file).read_bytes()
        log = EventLog.from_bytes(data)
    except OSError as exc:
        print(f"cannot read log file: {exc}", file=sys.stderr)
        return 1
    except LogFormatError as exc:
        print(f"corrupt log: {exc}", file=sys.stderr)
        return 1
    print(log.text_dump(), end="")
    ok, bad = verify_event_chain(log)
    print(f"chain {'OK' if ok else f'BROKEN at {bad}'}")
    return 0 if ok else 1


def cmd_estimate(args: argparse.Namespace) -> int:
    try:
        data = Path(args.reports_file).read_bytes()
        vectors = unpack_bit_vector_stream(data)
    except OSError as exc:
        print(f"cannot read reports file: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"corrupt reports file: {exc}", file=sys.stderr)
        return 1
    if not vectors:
        print("reports file holds no vectors", file=sys.stderr)
        return 1
    n = len(vectors[0])
    if any(len(v) != n for v in vectors):
        print("reports file mixes vector lengths", file=sys.stderr)
        return 1
    ones = [sum(v[j] for v in vectors) for j in range(n)]
    estimate = estimate_frequencies(BitCounts(ones, len(vectors)), PrivacyParams(args.f))
    print("choice_index,ones,estimated_raw,estimated_clamped")
    for j in range(n):
        print(f"{j},{int(ones[j])},{estimate.raw_estimates[j]!r},{estimate.clamped_estimates[j]!r}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handlers = {
        "simulate": cmd_simulate,
        "demo": cmd_demo,
        "inspect-ledger": cmd_inspect_ledger,
        "estimate": cmd_estimate,
    }
    try:
        return handlers[args.command](args)
    except (ProtocolError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
