"""`xvguard` command line: generate, train, attack, evaluate and report."""

from __future__ import annotations

import argparse
import json
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import torch

from . import __version__
from .config import RunConfig, load_config
from .core import derive_seed
from .data import LabeledAudio, generate_toy_dataset
from .defenses import extract_patches, train_vae, train_vocoder, train_wgan
from .errors import ConfigError, XvguardError
from .eval import (
    CLEAN,
    EvalReport,
    ReportRow,
    accuracy_grid,
    craft_attacks,
    load_report,
    make_trials,
    render_report,
    render_table,
    universal_delta,
    verification_eval,
)
from .logger import get_logger
from .model import adversarial_train, build_classifier, fine_tune_gaussian, train_classifier
from .types import Algorithm, norm_name
from .workspace import Workspace

__all__ = "cmd_attack", "cmd_evaluate", "cmd_generate", "cmd_report", "cmd_train", "main"

log = get_logger("cli")


def cmd_generate(config: RunConfig) -> Path:
    """Synthesize the toy corpus under the output directory."""
    workspace = Workspace(config)
    if config.data.manifest is not None:
        raise ConfigError("data.manifest points at an existing corpus, nothing to generate")

    generate_toy_dataset(
        workspace.manifest_path.parent,
        n_speakers=config.data.n_speakers,
        utts_per_speaker=config.data.utts_per_speaker,
        duration_s=config.data.duration_s,
        seed=config.seed,
        jobs=config.grid.jobs,
    )
    return workspace.manifest_path


def _needs_surrogate(config: RunConfig) -> bool:
    return config.grid.surrogate == "independent" and any(
        entry.algorithm is Algorithm.UNIVERSAL for entry in config.attacks
    )


def cmd_train(config: RunConfig) -> list[Path]:
    """
    Train the classifiers and defense models the config asks for.

    The base classifier is always trained. Fine-tuned and adversarially trained copies,
    the surrogate for universal attacks and the defense models follow their sections.
    Loss traces land in `checkpoints/training.json`.
    """
    workspace = Workspace(config)
    training = config.training
    train = workspace.split("train")
    x, y = train.batch(), train.labels
    traces: dict[str, list[float]] = {}
    written: list[Path] = []

    base = build_classifier(config.model, derive_seed(config.seed, "classifier"))
    train_classifier(
        base, x, y, training.classifier, seed=derive_seed(config.seed, "classifier"), trace=traces.setdefault("classifier", [])
    )
    written.append(workspace.save_classifier("base", base))

    if _needs_surrogate(config):
        surrogate = build_classifier(config.model, derive_seed(config.seed, "surrogate"))
        train_classifier(
            surrogate, x, y, training.classifier,
            seed=derive_seed(config.seed, "surrogate"), trace=traces.setdefault("surrogate", []),
        )
        written.append(workspace.save_classifier("surrogate", surrogate))

    if training.finetune is not None:
        tuned = fine_tune_gaussian(
            base,
            x,
            y,
            training.finetune.train,
            sigma_range=training.finetune.sigma_range,
            scope=training.finetune.scope,
            seed=derive_seed(config.seed, "finetune"),
            trace=traces.setdefault("finetune", []),
        )
        written.append(workspace.save_classifier("gaussian", tuned))

    if training.adversarial is not None:
        hardened = adversarial_train(
            base,
            x,
            y,
            training.adversarial.attack,
            training.adversarial.train,
            seed=derive_seed(config.seed, "adversarial"),
            trace=traces.setdefault("adversarial", []),
        )
        written.append(workspace.save_classifier("adversarial", hardened))

    if training.gan is not None:
        with torch.no_grad():
            patches = extract_patches(base.features(x))
        generator, _ = train_wgan(
            patches, training.gan, seed=derive_seed(config.seed, "gan"), trace=traces.setdefault("gan", [])
        )
        written.append(workspace.save_defense("gan", generator))

    if training.vae is not None:
        vae = train_vae(
            x, training.vae, extractor=base.extractor, seed=derive_seed(config.seed, "vae"), trace=traces.setdefault("vae", [])
        )
        written.append(workspace.save_defense("vae", vae))

    if training.vocoder is not None:
        vocoder = train_vocoder(
            x, training.vocoder, seed=derive_seed(config.seed, "vocoder"), trace=traces.setdefault("vocoder", [])
        )
        written.append(workspace.save_defense("vocoder", vocoder))

    summary = workspace.checkpoints / "training.json"
    summary.parent.mkdir(parents=True, exist_ok=True)
    summary.write_text(json.dumps({"traces": traces, **workspace.provenance()}, indent=2, sort_keys=True) + "\n")
    written.append(summary)
    for path in written:
        log.info(f"Wrote {path}")
    return written


def _surrogate_data(workspace: Workspace) -> LabeledAudio | None:
    """Enrollment audio universal perturbations are searched on, None without universal attacks."""
    if not any(entry.algorithm is Algorithm.UNIVERSAL for entry in workspace.config.attacks):
        return None
    return workspace.split("enroll")


def cmd_attack(config: RunConfig) -> int:
    """
    Craft and persist adversarial test audio against every defense that attacks itself.

    Defenses with an `attack_source` reuse what is written here instead.

    Returns:
        Number of WAVs written
    """
    workspace = Workspace(config)
    data = workspace.split("test")
    surrogate_data = _surrogate_data(workspace)
    cache: dict[tuple[int, str], torch.Tensor] = {}
    written = 0
    for entry in config.defenses:
        if entry.attack_source is not None:
            continue
        chain = workspace.chain(entry)
        for attack in config.attack_configs():
            delta = None
            if attack.algorithm is Algorithm.UNIVERSAL:
                delta = universal_delta(
                    workspace.surrogate() or chain.classifier, attack, surrogate_data or data, config.seed, cache
                )
            crafted = craft_attacks(
                chain, attack, data, seed=config.seed, defense=entry.name, jobs=config.grid.jobs, universal_delta=delta
            )
            for utt_id, (adversarial, info) in zip(data.utt_ids, crafted):
                workspace.save_attack(entry.name, chain, attack.id, utt_id, adversarial, info)
            written += len(crafted)
            log.info(f"{entry.name} / {attack.id}: wrote {len(crafted)} utterances to {workspace.attack_dir(entry.name, attack.id)}")
    return written


def _verification_rows(workspace: Workspace, chains: dict[str, Any]) -> list[ReportRow]:
    config = workspace.config
    section = config.grid.verification
    if section is None:
        return []

    manifest = workspace.manifest()
    trials = make_trials(manifest, nontargets_per_test=section.nontargets_per_test, seed=config.seed)
    audio = workspace.audio(list(dict.fromkeys(u for t in trials.trials for u in (t.enroll, t.test))))
    attacks = [
        a
        for a in config.attack_configs()
        if a.algorithm is not Algorithm.UNIVERSAL and not (section.objective == "cosine" and a.algorithm is Algorithm.CW_L2)
    ]

    rows = []
    for name in section.defenses or tuple(chains):
        chain = chains[name]
        clean = verification_eval(chain, trials, manifest, audio, seed=config.seed, max_test_seconds=section.max_test_seconds)
        results = [(None, clean)]
        for attack in attacks:
            result = verification_eval(
                chain,
                trials,
                manifest,
                audio,
                attack=attack,
                objective=section.objective,
                calibration=clean.calibration,
                seed=config.seed,
                max_test_seconds=section.max_test_seconds,
            )
            results.append((attack, result))

        for attack, result in results:
            rows.append(
                ReportRow(
                    defense=name,
                    attack=CLEAN if attack is None else attack.id,
                    algorithm="none" if attack is None else attack.algorithm.value,
                    norm="none" if attack is None else norm_name(attack.p),
                    epsilon=0.0 if attack is None else attack.epsilon,
                    mode=chain.mode.value,
                    metric="eer",
                    value=result.eer,
                    n_utterances=len(trials),
                    failures=result.failures,
                    seed=config.seed,
                )
            )
    return rows


def cmd_evaluate(config: RunConfig) -> EvalReport:
    """
    Accuracy grid over every defense and attack, plus verification EERs when configured.

    Defenses with an `attack_source` are scored on the audio persisted by `xvguard attack`
    for their source. Writes `reports/report.csv` and `reports/report.json`.
    """
    workspace = Workspace(config)
    data = workspace.split("test")
    chains = {entry.name: workspace.chain(entry) for entry in config.defenses}

    reuse: dict[str, dict[str, torch.Tensor]] = {}
    for entry in config.defenses:
        if entry.attack_source is None:
            continue
        source = chains[entry.attack_source]
        reuse[entry.name] = {
            attack.id: workspace.load_attacks(entry.attack_source, source.id, attack.id, data.utt_ids)
            for attack in config.attack_configs()
        }

    surrogate_data = _surrogate_data(workspace)
    report = accuracy_grid(
        chains,
        config.attack_configs(),
        data,
        seed=config.seed,
        jobs=config.grid.jobs,
        surrogate=workspace.surrogate() if surrogate_data is not None else None,
        surrogate_data=surrogate_data,
        reuse=reuse,
        metadata=workspace.provenance(),
    )
    for row in _verification_rows(workspace, chains):
        report.add(row)

    for path in (report.to_csv(workspace.reports / "report.csv"), report.to_json(workspace.reports / "report.json")):
        log.info(f"Wrote {path}")
    return report


def cmd_report(path: str | Path, out_dir: str | Path | None = None) -> str:
    """
    Render tables and figures of a report and return the accuracy table.

    Args:
        path: `report.json` or `report.csv`
        out_dir: Destination, `rendered/` next to the report by default
    """
    report = load_report(path)
    out_dir = Path(out_dir) if out_dir is not None else Path(path).parent / "rendered"
    for artifact in render_report(report, out_dir).values():
        log.info(f"Wrote {artifact}")
    return render_table(report)


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xvguard", description="Adversarial attacks and defenses for x-vector speaker models")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbs = parser.add_subparsers(dest="verb", required=True)
    for verb, help_text in (
        ("generate", "synthesize the toy corpus"),
        ("train", "train classifiers and defense models"),
        ("attack", "craft and persist adversarial test audio"),
        ("evaluate", "run the accuracy grid and verification"),
    ):
        sub = verbs.add_parser(verb, help=help_text)
        sub.add_argument("--config", required=True, type=Path, help="TOML run configuration")
        sub.add_argument("--seed", type=int, help="override the config seed")
        sub.add_argument("--out", type=Path, help="override output.dir")
        sub.add_argument("--jobs", type=int, help="override grid.jobs")

    report = verbs.add_parser("report", help="render tables and figures of a report")
    report.add_argument("--report", required=True, type=Path, help="report.json or report.csv")
    report.add_argument("--out", type=Path, help="destination directory")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """
    Entry point of the `xvguard` console script.

    Errors of the toolkit print a one-line JSON object on stderr. The exit code is 2 for
    configuration errors and 1 for everything else.
    """
    args = _parser().parse_args(argv)
    try:
        if args.verb == "report":
            print(cmd_report(args.report, args.out))
            return 0

        config = load_config(args.config).with_overrides(seed=args.seed, out=args.out, jobs=args.jobs)
        match args.verb:
            case "generate":
                cmd_generate(config)
            case "train":
                cmd_train(config)
            case "attack":
                cmd_attack(config)
            case "evaluate":
                print(render_table(cmd_evaluate(config)))
    except XvguardError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1
    return 0
