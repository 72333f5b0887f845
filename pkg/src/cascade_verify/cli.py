"""Command-line entry point: synth, train, evaluate, verify, report and run."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

from .cascade import MODES, THREE_STAGE, parse_mode, verify
from .config import PROFILES, load_config
from .errors import CascadeError, ConfigInvalid
from .evaluation import (apply_thresholds, format_report, ordering_check, read_trials, run_experiment_suite,
                         summarize, write_reports)
from .frontend import FrontendConfig, features_from_wav
from .manifest import read_manifest
from .synth import describe_corpus, generate_corpus
from .training import FeatureStore, build_registry, load_registry, registry_counts

log = logging.getLogger("cascade_verify")

EXIT_OK, EXIT_REJECT, EXIT_ERROR = 0, 1, 2
CACHE_ENV = "CASCADE_VERIFY_CACHE"


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--profile", default="defaults", choices=PROFILES)
    p.add_argument("--config", help="INI file layered over the profile")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")
    p.add_argument("--seed", type=int, help="top-level seed for every random choice")
    p.add_argument("--jobs", type=int, help="worker processes (0 = all cores, 1 = sequential and bit-reproducible)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="cascade-verify",
                                     description="Emotion-robust speaker verification with a three-stage HMM cascade.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic emotional-speech corpus")
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("train", parents=[common], help="train gender, emotion and claimant models")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--models", required=True, type=Path)

    p = sub.add_parser("evaluate", parents=[common], help="score all trials and write reports and figures")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--models", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--modes", help=f"comma-separated subset of {','.join(MODES)}")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("verify", parents=[common], help="accept or reject one identity claim")
    p.add_argument("--models", required=True, type=Path)
    p.add_argument("--wav", required=True, type=Path)
    p.add_argument("--claimed", required=True)
    p.add_argument("--threshold", required=True, type=float,
                   help="decision threshold (write negative values as --threshold=-1.5)")
    p.add_argument("--mode", default=THREE_STAGE)

    p = sub.add_parser("report", parents=[common], help="rebuild tables and figures from a trials.csv")
    p.add_argument("--trials", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("run", parents=[common], help="synth, train and evaluate into one directory")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--modes", help=f"comma-separated subset of {','.join(MODES)}")
    p.add_argument("--no-figures", action="store_true")
    return parser


def _modes(text):
    if not text:
        return None
    modes = tuple(m.strip() for m in text.split(",") if m.strip())
    for m in modes:
        if m not in MODES:
            raise ConfigInvalid(f"unknown mode {m!r}; choose from {', '.join(MODES)}")
    return modes


def _load(args):
    cfg = load_config(args.profile, args.config, args.overrides, seed=args.seed, jobs=args.jobs)
    modes = _modes(getattr(args, "modes", None))
    if modes:
        cfg.evaluation = dataclasses.replace(cfg.evaluation, modes=modes)
    return cfg


def cmd_synth(args, cfg):
    manifest = generate_corpus(cfg.synth, args.out, jobs=cfg.jobs)
    cfg.echo(args.out)
    print(describe_corpus(manifest).format())
    print(f"manifest: {args.out / 'manifest.csv'}")
    return EXIT_OK


def cmd_train(args, cfg, manifest=None):
    manifest = manifest or read_manifest(args.manifest)
    features = FeatureStore(manifest, cfg.frontend, os.environ.get(CACHE_ENV))
    reg = build_registry(manifest, cfg.training, features, model_dir=args.models, jobs=cfg.jobs)
    cfg.echo(args.models)
    for kind, n in registry_counts(reg).items():
        print(f"{kind}\t{n}")
    print(f"models: {args.models}")
    return EXIT_OK


def _frontend_for(reg, cfg) -> FrontendConfig:
    if reg.frontend is None:
        return cfg.frontend
    trained = FrontendConfig(**reg.frontend)
    if trained != cfg.frontend:
        log.warning("frontend settings differ from those the models were trained with; using the trained ones")
    return trained


def cmd_evaluate(args, cfg, manifest=None):
    manifest = manifest or read_manifest(args.manifest)
    reg = load_registry(args.models)
    features = FeatureStore(manifest, _frontend_for(reg, cfg), os.environ.get(CACHE_ENV))
    report = run_experiment_suite(reg, manifest, features, cfg.evaluation)
    apply_thresholds(report)
    written = write_reports(report, args.out, figures=not args.no_figures)
    cfg.echo(args.out)
    print(format_report(report), end="")
    for path in written:
        log.info("wrote %s", path)
    problems = ordering_check(report, cfg.evaluation.ordering_slack_pp, cfg.evaluation.worst_case_tolerance_pp)
    for p in problems:
        print(f"ordering violated: {p}", file=sys.stderr)
    if problems and cfg.evaluation.enforce_ordering:
        return EXIT_REJECT
    return EXIT_OK


def cmd_verify(args, cfg):
    parse_mode(args.mode)
    reg = load_registry(args.models)
    seq = features_from_wav(args.wav, _frontend_for(reg, cfg), os.environ.get(CACHE_ENV))
    verdict = verify(reg, seq, args.claimed, args.threshold, args.mode, cfg.cascade)
    vs = verdict.components
    print(f"{'accept' if verdict.accept else 'reject'}\tscore={verdict.score!r}\tthreshold={args.threshold!r}"
          f"\tmode={verdict.mode}")
    tr = vs.trace
    if tr.gender_decision:
        print(f"gender\t{tr.gender_decision.chosen}")
    if tr.emotion_decision:
        print(f"emotion\t{tr.emotion_decision.chosen}")
    print(f"terms\ttarget={vs.target_term!r}\twrong_emotion={vs.wrong_emotion_term!r}"
          f"\twrong_gender={vs.wrong_gender_term!r}\tB={vs.B_used}")
    return EXIT_OK if verdict.accept else EXIT_REJECT


def cmd_report(args, cfg):
    trials = read_trials(args.trials)
    emotions = list(dict.fromkeys(t.emotion_true for t in trials))
    report = summarize(trials, emotions, cfg.evaluation.corpus_name)
    apply_thresholds(report)
    write_reports(report, args.out, figures=not args.no_figures)
    cfg.echo(args.out)
    print(format_report(report), end="")
    return EXIT_OK


def cmd_run(args, cfg):
    corpus, models, report = args.out / "corpus", args.out / "models", args.out / "report"
    manifest = generate_corpus(cfg.synth, corpus, jobs=cfg.jobs)
    cfg.echo(corpus)
    log.info("corpus: %d utterances", len(manifest.entries))
    ns = argparse.Namespace(models=models, out=report, no_figures=args.no_figures)
    cmd_train(ns, cfg, manifest)
    return cmd_evaluate(ns, cfg, manifest)


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "verify": cmd_verify,
    "report": cmd_report,
    "run": cmd_run,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args)
        log.info("resolved configuration:\n%s", cfg.dump())
        return COMMANDS[args.command](args, cfg)
    except CascadeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
