from __future__ import annotations

import csv
import json
import time
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Literal

import torch
from torch import nn

from ..attacks import run_attack, universal_perturbation
from ..core import derive_seed, seeded_rng
from ..data import LabeledAudio
from ..defenses.chain import DefenseChain, as_chain
from ..errors import ConfigError, MissingArtifactError
from ..logger import get_logger
from ..types import Algorithm, AttackConfig, AttackResult, norm_name
from ..workers import WorkerPool

__all__ = (
    "CLEAN",
    "SCHEMA_VERSION",
    "EvalReport",
    "ReportRow",
    "accuracy_grid",
    "craft_attacks",
    "load_report",
    "universal_delta",
)

SCHEMA_VERSION = 1
CLEAN = "clean"
"""Attack id of the unattacked row"""

Metric = Literal["accuracy", "eer"]

log = get_logger("grid")


@dataclass(frozen=True)
class ReportRow:
    """One (defense, attack) cell of a report"""

    defense: str
    attack: str
    algorithm: str
    norm: str
    epsilon: float
    mode: str
    metric: Metric
    value: float
    """Accuracy in [0, 1] or EER in percent"""
    n_utterances: int
    failures: int
    """Utterances whose attack raised and that were scored unperturbed"""
    seed: int

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ReportRow:
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown report columns: {', '.join(sorted(unknown))}")
        values = dict(data)
        for name in ("epsilon", "value"):
            values[name] = float(values[name])
        for name in ("n_utterances", "failures", "seed"):
            values[name] = int(values[name])
        return cls(**values)


@dataclass
class EvalReport:
    """
    Result grid of an evaluation run.

    Rows are unique per `(defense, attack, metric)`. Metadata carries provenance such as
    the model hash, toolkit version and wall time.
    """

    rows: list[ReportRow] = field(default_factory=list)
    metadata: dict[str, Any] = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def add(self, row: ReportRow) -> None:
        key = (row.defense, row.attack, row.metric)
        if any((r.defense, r.attack, r.metric) == key for r in self.rows):
            raise ValueError(f"duplicate report cell {key}")
        self.rows.append(row)

    def extend(self, other: EvalReport) -> None:
        for row in other.rows:
            self.add(row)

    @property
    def defenses(self) -> list[str]:
        """Defense names in first-seen order"""
        return list(dict.fromkeys(r.defense for r in self.rows))

    @property
    def attacks(self) -> list[str]:
        """Attack ids in first-seen order"""
        return list(dict.fromkeys(r.attack for r in self.rows))

    def get(self, defense: str, attack: str, metric: Metric = "accuracy") -> ReportRow | None:
        return next((r for r in self.rows if (r.defense, r.attack, r.metric) == (defense, attack, metric)), None)

    def value(self, defense: str, attack: str, metric: Metric = "accuracy") -> float:
        """
        Raises:
            KeyError: If the cell is absent
        """
        row = self.get(defense, attack, metric)
        if row is None:
            raise KeyError(f"no {metric} cell for defense {defense!r}, attack {attack!r}")
        return row.value

    def to_csv(self, path: str | Path) -> Path:
        """One row per cell, no metadata."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow([f.name for f in fields(ReportRow)])
            for row in self.rows:
                writer.writerow([_format(v) for v in asdict(row).values()])
        return path

    def to_json(self, path: str | Path) -> Path:
        """Rows nested by defense, with metadata and schema version."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        nested: dict[str, list[dict[str, Any]]] = {}
        for row in self.rows:
            data = asdict(row)
            nested.setdefault(data.pop("defense"), []).append(data)
        document = {"schema_version": self.schema_version, "metadata": self.metadata, "defenses": nested}
        path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n")
        return path


def _format(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def load_report(path: str | Path) -> EvalReport:
    """
    Read a report written by `EvalReport.to_json` or `EvalReport.to_csv`.

    Raises:
        MissingArtifactError: If the file does not exist
        ValueError: On an unsupported schema version
    """
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"report {path} not found, run `xvguard evaluate` first")

    if path.suffix == ".csv":
        with path.open(newline="") as f:
            return EvalReport(rows=[ReportRow.from_dict(r) for r in csv.DictReader(f)])

    document = json.loads(path.read_text())
    version = document.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"{path}: report schema version {version}, expected {SCHEMA_VERSION}")
    rows = [
        ReportRow.from_dict({"defense": defense, **data})
        for defense, cells in document["defenses"].items()
        for data in cells
    ]
    return EvalReport(rows=rows, metadata=document.get("metadata", {}))


# -----Accuracy Grid-----


def _craft(
    chain: DefenseChain,
    config: AttackConfig,
    x: torch.Tensor,
    y: int,
    seed: int,
    defense: str,
    utt_id: str,
    universal_delta: torch.Tensor | None,
) -> tuple[AttackResult | None, str | None]:
    """Attack one utterance on its own stream, returning the error text instead of raising."""
    stream = seeded_rng(derive_seed(seed, defense, config.id, utt_id))
    try:
        result = run_attack(
            config, chain, x.unsqueeze(0), y, generator=stream, mode=chain.mode, universal_delta=universal_delta
        )
    except (RuntimeError, ValueError) as exc:
        return None, f"{type(exc).__name__}: {exc}"
    return result, None


def _craft_task(
    chain: DefenseChain,
    config: AttackConfig,
    x: torch.Tensor,
    y: int,
    seed: int,
    defense: str,
    utt_id: str,
    universal_delta: torch.Tensor | None,
) -> tuple[torch.Tensor, dict[str, Any], str | None]:
    result, error = _craft(chain, config, x, y, seed, defense, utt_id, universal_delta)
    if result is None:
        return x, {"success": False, "l2": 0.0, "linf": 0.0, "iterations": 0, "failed": True}, error
    info = {
        "success": bool(result.success[0]),
        "l2": float(result.l2[0]),
        "linf": float(result.linf[0]),
        "iterations": result.iterations_used,
        "failed": False,
    }
    return result.adversarial[0], info, None


def craft_attacks(
    chain: nn.Module,
    config: AttackConfig,
    data: LabeledAudio,
    *,
    seed: int = 0,
    defense: str = "none",
    jobs: int = 1,
    universal_delta: torch.Tensor | None = None,
) -> list[tuple[torch.Tensor, dict[str, Any]]]:
    """
    Adversarial version of every utterance, for persisting.

    Streams match the ones `accuracy_grid` uses, so a persisted batch equals what the
    grid would craft against the same chain. Utterances whose attack raised come back
    unperturbed with `failed` set in their info.

    Returns:
        `(adversarial samples, info)` per utterance, info holding success, realized
        norms and iterations
    """
    chain = as_chain(chain)
    chain.check_mode(chain.mode)
    if config.algorithm is Algorithm.UNIVERSAL and universal_delta is None:
        raise ConfigError(f"attack {config.id!r} needs a universal perturbation")

    tasks = [
        (chain, config, w.samples, int(y), seed, defense, utt_id, universal_delta)
        for utt_id, w, y in zip(data.utt_ids, data.waveforms, data.labels)
    ]
    crafted = []
    for utt_id, (adversarial, info, error) in zip(data.utt_ids, WorkerPool(jobs).map(_craft_task, tasks)):
        if error is not None:
            log.warning(f"{defense} / {config.id}: attack on {utt_id} failed, kept unperturbed ({error})")
        crafted.append((adversarial, info))
    return crafted


def _utterance_task(
    chain: DefenseChain,
    config: AttackConfig | None,
    x: torch.Tensor,
    y: int,
    seed: int,
    defense: str,
    utt_id: str,
    universal_delta: torch.Tensor | None,
    reused: torch.Tensor | None,
) -> tuple[bool, str | None]:
    """Attack one utterance and score the defended prediction."""
    attack_id = CLEAN if config is None else config.id
    adversarial, error = x.unsqueeze(0), None
    if reused is not None:
        adversarial = reused.unsqueeze(0)
    elif config is not None:
        result, error = _craft(chain, config, x, y, seed, defense, utt_id, universal_delta)
        if result is not None:
            adversarial = result.adversarial

    stream = seeded_rng(derive_seed(seed, defense, attack_id, utt_id, "predict"))
    predicted = int(chain.predict(adversarial, stream)[0])
    return predicted == y, error


def _row(defense: str, chain: DefenseChain, config: AttackConfig | None, value: float, n: int, failures: int, seed: int) -> ReportRow:
    return ReportRow(
        defense=defense,
        attack=CLEAN if config is None else config.id,
        algorithm="none" if config is None else config.algorithm.value,
        norm="none" if config is None else norm_name(config.p),
        epsilon=0.0 if config is None else config.epsilon,
        mode=chain.mode.value,
        metric="accuracy",
        value=value,
        n_utterances=n,
        failures=failures,
        seed=seed,
    )


def accuracy_grid(
    chains: Mapping[str, nn.Module],
    attacks: Sequence[AttackConfig],
    data: LabeledAudio,
    *,
    seed: int = 0,
    jobs: int = 1,
    surrogate: nn.Module | None = None,
    surrogate_data: LabeledAudio | None = None,
    reuse: Mapping[str, Mapping[str, torch.Tensor]] | None = None,
    metadata: Mapping[str, Any] | None = None,
) -> EvalReport:
    """
    Identification accuracy of every defense under every attack.

    A clean row is always included. Every utterance gets its own stream derived from
    `(seed, defense, attack id, utterance id)`, so cells do not depend on `jobs` or on
    utterance order. An attack that raises on an utterance is logged and the utterance
    is scored unperturbed.

    Universal attacks are searched once per attack setting on `surrogate` (each chain's
    own classifier when omitted) over `surrogate_data` (the evaluation data when
    omitted), then applied to every utterance.

    Args:
        chains: Defense name to classifier or chain
        attacks: Attack settings, unique ids
        data: Evaluation utterances and labels
        seed: Run seed
        jobs: Worker processes
        surrogate: Model universal perturbations are computed on
        surrogate_data: Utterances for the universal search
        reuse: Defense name to attack id to persisted `(N, T)` adversarial batches,
            used instead of attacking
        metadata: Provenance merged into the report metadata

    Raises:
        ConfigError: On duplicate attack ids or an illegal threat mode

    Returns:
        The report
    """
    ids = [config.id for config in attacks]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"attack ids must be unique, got {', '.join(ids)}")

    started = time.perf_counter()
    pool = WorkerPool(jobs)
    report = EvalReport(metadata=dict(metadata or {}))
    samples = [w.samples for w in data.waveforms]
    labels = [int(v) for v in data.labels]
    universal_cache: dict[tuple[int, str], torch.Tensor] = {}

    for defense, target in chains.items():
        chain = as_chain(target)
        chain.check_mode(chain.mode)
        for config in (None, *attacks):
            attack_id = CLEAN if config is None else config.id
            reused = (reuse or {}).get(defense, {}).get(attack_id)
            if reused is not None and reused.shape[0] != len(samples):
                raise ConfigError(f"reused attack {attack_id!r} for {defense!r} holds {reused.shape[0]} utterances, expected {len(samples)}")

            delta = None
            if config is not None and config.algorithm is Algorithm.UNIVERSAL and reused is None:
                delta = universal_delta(surrogate or chain.classifier, config, surrogate_data or data, seed, universal_cache)

            tasks = [
                (chain, config, samples[i], labels[i], seed, defense, data.utt_ids[i], delta, None if reused is None else reused[i])
                for i in range(len(samples))
            ]
            outcomes = pool.map(_utterance_task, tasks)
            failures = 0
            for utt_id, (_, error) in zip(data.utt_ids, outcomes):
                if error is not None:
                    failures += 1
                    log.warning(f"{defense} / {attack_id}: attack on {utt_id} failed, scored unperturbed ({error})")

            value = sum(correct for correct, _ in outcomes) / len(outcomes)
            report.add(_row(defense, chain, config, value, len(outcomes), failures, seed))
            log.info(f"{defense} / {attack_id}: accuracy {value:.4f} over {len(outcomes)} utterances")

    report.metadata["wall_time"] = round(time.perf_counter() - started, 3)
    return report


def universal_delta(
    surrogate: nn.Module,
    config: AttackConfig,
    data: LabeledAudio,
    seed: int,
    cache: dict[tuple[int, str], torch.Tensor] | None = None,
) -> torch.Tensor:
    """
    Universal perturbation of one attack setting, searched on `surrogate` over `data`.

    Utterances are put in utterance-id order before the search, so the perturbation does not
    depend on how `data` is ordered. Results are memoized in `cache` per surrogate and
    attack id.
    """
    cache = {} if cache is None else cache
    key = (id(surrogate), config.id)
    if key not in cache:
        data = data.sorted_by_id()
        result = universal_perturbation(
            surrogate,
            data.batch(),
            p=config.p,
            eps=config.epsilon,
            config=config.universal,
            labels=data.labels,
            generator=seeded_rng(derive_seed(seed, "universal", config.id)),
        )
        log.info(
            f"universal {config.id}: fooled {result.fooled_fraction:.3f} of the surrogate set"
            + ("" if result.converged else f" (target {config.universal.fool_rate} not reached)")
        )
        cache[key] = result.perturbation.delta
    return cache[key]
