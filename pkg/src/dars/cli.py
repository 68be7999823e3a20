"""Command-line entry point: ``dars <command> ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .alignment import AlignmentFormatError, AlignmentInfeasibleError
from .checkpoint import CheckpointError
from .config import ConfigError, corpus_config_from_dict, load_toml, load_train_config
from .corpus import ManifestError, MelSpectrogram, load_manifest, load_mel, save_mel
from .flow import NonFiniteFieldError
from .metrics import build_report, mcd, normalize_text, wer
from .model import MissingStyleError
from .rhythm import DurationDomainError, VocabularyError
from .trainer import TrainingDivergedError

# Error classes that map to a diagnostic and a nonzero exit code.
KNOWN_ERRORS = (
    AlignmentFormatError,
    AlignmentInfeasibleError,
    CheckpointError,
    ConfigError,
    DurationDomainError,
    ManifestError,
    MissingStyleError,
    NonFiniteFieldError,
    TrainingDivergedError,
    VocabularyError,
    KeyError,
    OSError,
    ValueError,
)


def _parse_ids(text: str) -> list[int]:
    path = Path(text)
    if path.is_file():
        text = path.read_text(encoding="utf-8")
    try:
        ids = [int(tok) for tok in text.replace(",", " ").split()]
    except ValueError:
        raise ValueError(f"--text-ids must be integers, got {text!r}") from None
    if not ids:
        raise ValueError("--text-ids is empty")
    return ids


def cmd_gen_corpus(args) -> int:
    from .corpus import generate_toy_corpus

    cfg = corpus_config_from_dict(load_toml(args.config)) if args.config else None
    corpus = generate_toy_corpus(args.seed, args.n_utts, cfg, args.out)
    print(f"wrote {len(corpus.records)} utterances to {corpus.manifest_path}")
    return 0


def cmd_train(args) -> int:
    from .trainer import train

    cfg = load_train_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.epochs is not None:
        cfg = cfg.replace(epochs=args.epochs)
    results = train(cfg, args.manifest, args.strategy or cfg.strategy, args.out)
    for key, res in results.items():
        last = res.log[-1]["total"] if res.log else float("nan")
        print(f"{key}: {len(res.log)} steps, final loss {last:.4f} -> {res.checkpoint_dir}")
    return 0


def cmd_synthesize(args) -> int:
    from .model import DarsModel

    model = DarsModel.load(args.ckpt)
    ids = _parse_ids(args.text_ids)
    ref = load_mel(args.ref_mel).frames if args.ref_mel else None
    speaker = args.speaker if args.speaker is not None else model.speakers[0]
    out = model.synthesize(ids, speaker, ref_mel=ref, seed=args.seed, n_steps=args.steps)
    save_mel(args.out, MelSpectrogram(out.mel, model.cfg.frame_shift_s))
    print(f"wrote {out.mel.shape[0]} frames to {args.out}")
    return 0


def cmd_eval(args) -> int:
    records = load_manifest(args.manifest)
    syn_dir = Path(args.syn_dir)
    if args.split:
        records = [r for r in records if r.split == args.split]
    scores: dict[str, float] = {}
    if args.metric == "mcd":
        for rec in records:
            path = syn_dir / f"{rec.utt_id}.mel"
            if path.exists():
                scores[rec.utt_id] = mcd(load_mel(rec.mel_path), load_mel(path))
    else:
        if not args.refs:
            raise ValueError("--refs is required for --metric wer")
        refs = _read_texts(Path(args.refs))
        for rec in records:
            path = syn_dir / f"{rec.utt_id}.txt"
            if rec.utt_id in refs and path.exists():
                scores[rec.utt_id] = wer(refs[rec.utt_id], normalize_text(path.read_text(encoding="utf-8")))
    if not scores:
        raise ValueError(f"no synthesized outputs in {syn_dir} match the manifest")
    report = build_report(scores, records, args.metric.upper())
    report.write(args.report)
    print(report.render(), end="")
    return 0


def _read_texts(path: Path) -> dict[str, str]:
    out = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            utt, _, text = line.partition("\t")
            out[utt.strip()] = text
    return out


def cmd_experiment(args) -> int:
    from .experiment import experiment_config_from_dict, run_experiment

    data = load_toml(args.config) if args.config else {}
    cfg = experiment_config_from_dict(data)
    if args.work_dir:
        cfg.work_dir = args.work_dir
    result = run_experiment(cfg)
    result.write(args.report)
    print(result.table(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dars", description="Dysarthric speech synthesis toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate the toy corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-utts", type=int, default=300)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="TOML file with a [corpus] table")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", help="train one model per training group")
    p.add_argument("--config")
    p.add_argument("--manifest", required=True)
    p.add_argument("--strategy", type=str.lower, choices=["asp", "ssp", "dspg"])
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synthesize", help="synthesize a mel from phoneme ids")
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--text-ids", required=True, help="comma/space separated ids, or a file holding them")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--ref-mel")
    src.add_argument("--speaker")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("eval", help="score synthesized outputs")
    p.add_argument("--metric", type=str.lower, choices=["mcd", "wer"], required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--syn-dir", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--refs", help="utt_id<TAB>text reference transcripts (wer)")
    p.add_argument("--split", choices=["train", "valid", "eval"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run the ablation/strategy comparison")
    p.add_argument("--config")
    p.add_argument("--report", required=True)
    p.add_argument("--work-dir")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except KNOWN_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"dars: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
