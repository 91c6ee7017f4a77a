"""Seeded Monte Carlo experiment harness.

A run is a pure function of its config: per trial, the oracle stream is
derived from (master_seed, trial index) and each mechanism's internal
randomness from (master_seed, trial index, mechanism position), so repeated
runs are byte-identical and trials can be distributed freely as long as
aggregation stays in trial order.

Config files are a single JSON document:

    {
      "instance": {"family": "uniform", "size": 4096, "scale": 1000.0,
                   "seed": 7},
      "mechanisms": [{"name": "binary_tree"},
                     {"name": "recursive_gap",
                      "constants": {"c_xi": 1.0, "p_xi": 1,
                                    "base_threshold_log": 6}}],
      "rho": 1.0,
      "beta": 0.1,
      "trials": 1000,
      "master_seed": 42,
      "failure_threshold": 0.0,
      "fresh_instance_per_trial": false
    }

`instance.seed` defaults to the master seed; `constants` entries override the
default mechanism constants field-wise.  Summary CSV columns are frozen:

    mechanism,trials,mean_error,p50_error,p90_error,p99_error,
    failure_frequency,threshold,mean_rounds,mean_budget_spent,master_seed
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    INSTANCE_FAMILIES, LossInstance, MechanismConstants, PrivacyParams,
    generate_instance,
)
from .mechanisms import (
    binary_tree_select, combined_select, exponential_mechanism,
    query_all_baseline, recursive_gap_select,
)
from .oracle import BudgetOracle

__all__ = [
    "MECHANISM_NAMES", "ConfigError", "EmptyRecordsError",
    "InstanceSpec", "MechanismSpec", "ExperimentConfig",
    "TrialRecord", "MechanismSummary", "ExperimentSummary",
    "SUMMARY_CSV_HEADER", "nearest_rank_quantile",
    "run_trials", "summarize", "run_experiment",
]

MECHANISM_NAMES = ("binary_tree", "recursive_gap", "combined", "exponential", "query_all")

SUMMARY_CSV_HEADER = ("mechanism,trials,mean_error,p50_error,p90_error,p99_error,"
                      "failure_frequency,threshold,mean_rounds,mean_budget_spent,master_seed")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class EmptyRecordsError(ValueError):
    """summarize() needs at least one trial record."""


@dataclass(frozen=True)
class InstanceSpec:
    family: str
    size: int
    scale: float = 1.0
    seed: int | None = None


@dataclass(frozen=True)
class MechanismSpec:
    name: str
    constants: MechanismConstants | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    instance: InstanceSpec
    mechanisms: tuple[MechanismSpec, ...]
    rho: float
    beta: float = 0.1
    trials: int = 1000
    master_seed: int = 0
    failure_threshold: float = 0.0
    fresh_instance_per_trial: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mechanisms", tuple(self.mechanisms))
        if self.instance.family not in INSTANCE_FAMILIES:
            raise ConfigError(f"unknown instance family {self.instance.family!r}")
        if self.instance.size < 1:
            raise ConfigError("instance size must be >= 1")
        if not self.mechanisms:
            raise ConfigError("at least one mechanism is required")
        for spec in self.mechanisms:
            if spec.name not in MECHANISM_NAMES:
                raise ConfigError(
                    f"unknown mechanism {spec.name!r}; expected one of {MECHANISM_NAMES}")
        try:
            PrivacyParams(self.rho, self.beta)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not (isinstance(self.master_seed, int) and self.master_seed >= 0):
            raise ConfigError("master_seed must be a nonnegative integer")

    def to_json(self) -> dict:
        doc = {
            "instance": {k: v for k, v in dataclasses.asdict(self.instance).items()
                         if v is not None},
            "mechanisms": [
                {"name": m.name} | (
                    {"constants": dataclasses.asdict(m.constants)} if m.constants else {})
                for m in self.mechanisms
            ],
            "rho": self.rho,
            "beta": self.beta,
            "trials": self.trials,
            "master_seed": self.master_seed,
            "failure_threshold": self.failure_threshold,
            "fresh_instance_per_trial": self.fresh_instance_per_trial,
        }
        return doc

    @classmethod
    def from_json(cls, doc: dict, default_constants: MechanismConstants | None = None
                  ) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        try:
            inst_doc = dict(doc["instance"])
            mech_docs = list(doc["mechanisms"])
            rho = float(doc["rho"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"missing or malformed required field: {exc}") from exc
        known_inst = {"family", "size", "scale", "seed"}
        extra = set(inst_doc) - known_inst
        if extra:
            raise ConfigError(f"unknown instance fields: {sorted(extra)}")
        instance = InstanceSpec(
            family=str(inst_doc.get("family", "")),
            size=int(inst_doc.get("size", 0)),
            scale=float(inst_doc.get("scale", 1.0)),
            seed=None if inst_doc.get("seed") is None else int(inst_doc["seed"]),
        )
        mechanisms = []
        for m in mech_docs:
            if not isinstance(m, dict) or "name" not in m:
                raise ConfigError(f"malformed mechanism entry: {m!r}")
            consts = m.get("constants")
            if consts is not None:
                try:
                    consts = MechanismConstants(**consts)
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"bad constants for {m['name']}: {exc}") from exc
            elif default_constants is not None:
                consts = default_constants
            mechanisms.append(MechanismSpec(str(m["name"]), consts))
        known = {"instance", "mechanisms", "rho", "beta", "trials", "master_seed",
                 "failure_threshold", "fresh_instance_per_trial"}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown config fields: {sorted(extra)}")
        try:
            return cls(
                instance=instance,
                mechanisms=tuple(mechanisms),
                rho=rho,
                beta=float(doc.get("beta", 0.1)),
                trials=int(doc.get("trials", 1000)),
                master_seed=int(doc.get("master_seed", 0)),
                failure_threshold=float(doc.get("failure_threshold", 0.0)),
                fresh_instance_per_trial=bool(doc.get("fresh_instance_per_trial", False)),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json_text(cls, text: str,
                       default_constants: MechanismConstants | None = None
                       ) -> "ExperimentConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_json(doc, default_constants)


@dataclass(frozen=True)
class TrialRecord:
    mechanism: str
    trial: int
    winner: int
    error: float
    rounds_used: int
    budget_spent: float
    recursion_depth: int

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class MechanismSummary:
    mechanism: str
    trials: int
    mean_error: float
    p50_error: float
    p90_error: float
    p99_error: float
    failure_frequency: float
    threshold: float
    mean_rounds: float
    mean_budget_spent: float


@dataclass(frozen=True)
class ExperimentSummary:
    master_seed: int | None
    rows: tuple[MechanismSummary, ...] = field(default_factory=tuple)

    def row(self, mechanism: str) -> MechanismSummary:
        for r in self.rows:
            if r.mechanism == mechanism:
                return r
        raise KeyError(mechanism)

    def to_csv(self) -> str:
        lines = [SUMMARY_CSV_HEADER]
        for r in self.rows:
            lines.append(
                f"{r.mechanism},{r.trials},{r.mean_error!r},{r.p50_error!r},"
                f"{r.p90_error!r},{r.p99_error!r},{r.failure_frequency!r},"
                f"{r.threshold!r},{r.mean_rounds!r},{r.mean_budget_spent!r},"
                f"{'' if self.master_seed is None else self.master_seed}")
        return "\n".join(lines) + "\n"


def nearest_rank_quantile(sorted_values: np.ndarray, q: float) -> float:
    """Nearest-rank quantile: the ceil(q/100 * n)-th smallest value."""
    n = len(sorted_values)
    rank = max(1, math.ceil(q / 100.0 * n))
    return float(sorted_values[rank - 1])


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _run_one(name: str, instance: LossInstance, config: ExperimentConfig,
             consts: MechanismConstants | None, trial: int, mech_index: int):
    oracle_seed = np.random.SeedSequence([config.master_seed, trial])
    mech_rng = np.random.default_rng(
        np.random.SeedSequence([config.master_seed, trial, 1 + mech_index]))
    kwargs = {} if consts is None else {"consts": consts}
    if name == "exponential":
        return exponential_mechanism(instance, config.rho, mech_rng)
    oracle = BudgetOracle(instance, config.rho, oracle_seed, record_log=False)
    if name == "binary_tree":
        return binary_tree_select(oracle, config.rho)
    if name == "recursive_gap":
        return recursive_gap_select(oracle, config.rho, config.beta, rng=mech_rng, **kwargs)
    if name == "combined":
        return combined_select(oracle, config.rho, rng=mech_rng, **kwargs)
    if name == "query_all":
        return query_all_baseline(oracle, config.rho)
    raise ConfigError(f"unknown mechanism {name!r}")


def run_trials(config: ExperimentConfig) -> list[TrialRecord]:
    """All trial records, in (trial, mechanism) order."""
    instance_seed = (config.instance.seed if config.instance.seed is not None
                     else config.master_seed)
    instance = None
    if not config.fresh_instance_per_trial:
        instance = generate_instance(config.instance.family, config.instance.size,
                                     config.instance.scale, instance_seed)
    records = []
    for trial in range(config.trials):
        if config.fresh_instance_per_trial:
            instance = generate_instance(
                config.instance.family, config.instance.size, config.instance.scale,
                _derived_seed(instance_seed, trial))
        best = instance.min_loss()
        for mi, spec in enumerate(config.mechanisms):
            result = _run_one(spec.name, instance, config, spec.constants, trial, mi)
            records.append(TrialRecord(
                mechanism=spec.name,
                trial=trial,
                winner=result.winner,
                error=instance.losses[result.winner] - best,
                rounds_used=result.rounds_used,
                budget_spent=result.budget_spent,
                recursion_depth=result.recursion_depth,
            ))
    return records


def summarize(records: list[TrialRecord], threshold: float,
              master_seed: int | None = None) -> ExperimentSummary:
    """Exact sample statistics per mechanism.

    Failure frequency is the fraction of trials with error strictly above the
    threshold; quantiles are nearest-rank.
    """
    if not records:
        raise EmptyRecordsError("no trial records to summarize")
    order: list[str] = []
    grouped: dict[str, list[TrialRecord]] = {}
    for rec in records:
        if rec.mechanism not in grouped:
            order.append(rec.mechanism)
            grouped[rec.mechanism] = []
        grouped[rec.mechanism].append(rec)
    rows = []
    for name in order:
        recs = grouped[name]
        errors = np.sort(np.asarray([r.error for r in recs]))
        rows.append(MechanismSummary(
            mechanism=name,
            trials=len(recs),
            mean_error=float(errors.mean()),
            p50_error=nearest_rank_quantile(errors, 50),
            p90_error=nearest_rank_quantile(errors, 90),
            p99_error=nearest_rank_quantile(errors, 99),
            failure_frequency=float(np.count_nonzero(errors > threshold) / len(recs)),
            threshold=threshold,
            mean_rounds=float(np.mean([r.rounds_used for r in recs])),
            mean_budget_spent=float(np.mean([r.budget_spent for r in recs])),
        ))
    return ExperimentSummary(master_seed=master_seed, rows=tuple(rows))


def run_experiment(config: ExperimentConfig) -> ExperimentSummary:
    """Run all trials and aggregate; a pure function of the config."""
    return summarize(run_trials(config), config.failure_threshold, config.master_seed)
