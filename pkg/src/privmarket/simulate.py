"""Accuracy experiments: actual vs estimated choice distributions.

Populations of simulated operators answer one n-choice query; true choices
are drawn from a discretized normal distribution, randomized per operator,
then aggregated and de-noised. Two modes share operator-level randomness:
`ldp_only` exercises just the encoding pipeline, `full_protocol` runs the
whole marketplace (ledger, escrow, delivery) and must land on the exact
same estimate.

Random stream discipline: one master seed, substreams keyed by
(trial, slot) where slot 0 samples the true choices, slot i+1 belongs to
operator i, and slot N+1 covers protocol infrastructure (addresses, key
material). Both modes therefore consume identical randomness per operator.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .ldp import PrivacyParams, QuerySpec, accumulate_counts, encode_one_hot, estimate_frequencies, randomize_response
from .ledger import Address, EventLog
from .protocol import FilterCriteria, OperatorProfile, SurveyConfiguration, run_survey


class Mode(enum.Enum):
    LDP_ONLY = "ldp_only"
    FULL_PROTOCOL = "full_protocol"


@dataclass(frozen=True)
class ExperimentConfig:
    population: int
    n_choices: int = 20
    mean: float = 10.0
    sd: float = 2.0
    privacy: PrivacyParams = PrivacyParams(0.5)
    seed: int = 0
    trials: int = 1
    mode: Mode = Mode.LDP_ONLY
    required_responses: int | None = None  # full protocol; defaults to population
    fee: int | None = None  # full protocol; defaults to 10 * population

    def __post_init__(self):
        if self.population < 1:
            raise ValueError("population must be at least 1")
        if self.n_choices < 2:
            raise ValueError("need at least 2 choices")
        if self.sd <= 0:
            raise ValueError("standard deviation must be positive")
        if self.trials < 1:
            raise ValueError("need at least one trial")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass(frozen=True)
class ErrorMetrics:
    l1: float
    l1_normalized: float
    l2: float
    max_bin_abs: float


@dataclass
class ExperimentResult:
    population: int
    trial: int
    seed: int
    mode: Mode
    actual_counts: tuple[int, ...]
    estimated_raw: tuple[float, ...]
    estimated_clamped: tuple[float, ...]
    metrics: ErrorMetrics
    runtime_seconds: float


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for one (trial, slot) coordinate."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def sample_true_choices(
    population: int, mean: float, sd: float, n_choices: int, rng: np.random.Generator
) -> np.ndarray:
    """Normal draws rounded to the nearest choice, clamped into [1, n], 0-based."""
    draws = rng.normal(mean, sd, size=population)
    return (np.clip(np.rint(draws), 1, n_choices) - 1).astype(np.int64)


def compute_error_metrics(actual: Sequence[float], estimated_raw: Sequence[float]) -> ErrorMetrics:
    if len(actual) != len(estimated_raw):
        raise ValueError("actual and estimated lengths differ")
    a = np.asarray(actual, dtype=np.float64)
    e = np.asarray(estimated_raw, dtype=np.float64)
    diff = np.abs(a - e)
    l1 = float(diff.sum())
    total = float(a.sum())
    return ErrorMetrics(
        l1=l1,
        l1_normalized=l1 / (2.0 * total) if total > 0 else 0.0,
        l2=float(np.sqrt(((a - e) ** 2).sum())),
        max_bin_abs=float(diff.max()) if len(diff) else 0.0,
    )


def run_ldp_experiment(config: ExperimentConfig, trial: int = 0) -> ExperimentResult:
    """Sample, randomize and estimate, without any protocol machinery."""
    started = time.perf_counter()
    choices = sample_true_choices(
        config.population, config.mean, config.sd, config.n_choices, substream(config.seed, trial, 0)
    )
    actual = np.bincount(choices, minlength=config.n_choices)
    reports = [
        randomize_response(
            encode_one_hot(int(choice), config.n_choices),
            config.privacy,
            substream(config.seed, trial, i + 1),
        )
        for i, choice in enumerate(choices)
    ]
    estimate = estimate_frequencies(accumulate_counts(reports), config.privacy)
    metrics = compute_error_metrics(actual, estimate.raw_estimates)
    return ExperimentResult(
        population=config.population,
        trial=trial,
        seed=config.seed,
        mode=Mode.LDP_ONLY,
        actual_counts=tuple(int(c) for c in actual),
        estimated_raw=estimate.raw_estimates,
        estimated_clamped=estimate.clamped_estimates,
        metrics=metrics,
        runtime_seconds=time.perf_counter() - started,
    )


def default_query(n_choices: int) -> QuerySpec:
    return QuerySpec(tuple(f"choice-{j:02d}" for j in range(n_choices)))


def _distinct_addresses(count: int, rng: np.random.Generator) -> list[Address]:
    seen: set[bytes] = set()
    out: list[Address] = []
    while len(out) < count:
        raw = rng.bytes(20)
        if raw not in seen:
            seen.add(raw)
            out.append(Address(raw))
    return out


def run_full_protocol_experiment(
    config: ExperimentConfig, trial: int = 0
) -> tuple[ExperimentResult, EventLog, list[str]]:
    """End-to-end marketplace run; the estimate matches run_ldp_experiment
    for the same seed and trial bit for bit."""
    started = time.perf_counter()
    population = config.population
    choices = sample_true_choices(
        population, config.mean, config.sd, config.n_choices, substream(config.seed, trial, 0)
    )
    actual = np.bincount(choices, minlength=config.n_choices)

    infra_rng = substream(config.seed, trial, population + 1)
    addresses = _distinct_addresses(population, infra_rng)
    profiles = [
        OperatorProfile(
            operator_id=f"op-{i:05d}",
            addresses=(addresses[i],),
            attributes={},
            true_choice=int(choices[i]),
        )
        for i in range(population)
    ]
    survey_config = SurveyConfiguration(
        query=default_query(config.n_choices),
        criteria=FilterCriteria.empty(),
        required_responses=config.required_responses or population,
        fee=config.fee if config.fee is not None else 10 * population,
        privacy=config.privacy,
    )
    operator_rngs = [substream(config.seed, trial, i + 1) for i in range(population)]
    outcome = run_survey(
        survey_config, profiles, operator_rngs=operator_rngs, infra_rng=infra_rng
    )
    estimate = outcome.aggregation.estimate
    metrics = compute_error_metrics(actual, estimate.raw_estimates)
    result = ExperimentResult(
        population=population,
        trial=trial,
        seed=config.seed,
        mode=Mode.FULL_PROTOCOL,
        actual_counts=tuple(int(c) for c in actual),
        estimated_raw=estimate.raw_estimates,
        estimated_clamped=estimate.clamped_estimates,
        metrics=metrics,
        runtime_seconds=time.perf_counter() - started,
    )
    return result, outcome.contract.log, outcome.trace


def run_trials(config: ExperimentConfig) -> list[ExperimentResult]:
    """All trials of one configuration, in trial order."""
    results = []
    for trial in range(config.trials):
        if config.mode == Mode.LDP_ONLY:
            results.append(run_ldp_experiment(config, trial))
        else:
            result, _, _ = run_full_protocol_experiment(config, trial)
            results.append(result)
    return results


RESULT_HEADER = "choice_index,actual_count,estimated_raw,estimated_clamped"
SUMMARY_HEADER = "N,trials,mean_l1_normalized,sd_l1_normalized,seed"


def result_filename(result: ExperimentResult) -> str:
    return f"N{result.population}_trial{result.trial:03d}.csv"


def export_results(
    results: Sequence[ExperimentResult], out_dir: str | Path, format: str = "csv"
) -> list[Path]:
    """One CSV per (population, trial) plus a per-population summary."""
    if format != "csv":
        raise ValueError(f"unsupported export format: {format}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for result in results:
        lines = [RESULT_HEADER]
        for j, count in enumerate(result.actual_counts):
            lines.append(
                f"{j},{count},{result.estimated_raw[j]!r},{result.estimated_clamped[j]!r}"
            )
        path = out / result_filename(result)
        path.write_text("\n".join(lines) + "\n")
        written.append(path)

    lines = [SUMMARY_HEADER]
    for population in sorted({r.population for r in results}):
        group = [r for r in results if r.population == population]
        values = [r.metrics.l1_normalized for r in group]
        mean = float(np.mean(values))
        sd = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
        lines.append(f"{population},{len(group)},{mean!r},{sd!r},{group[0].seed}")
    summary = out / "summary.csv"
    summary.write_text("\n".join(lines) + "\n")
    written.append(summary)
    return written
