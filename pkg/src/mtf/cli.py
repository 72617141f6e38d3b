"""Command-line front-end: ``mtf <subcommand> ...``.

Exit codes: 0 success, 1 total failure, 2 bad arguments.
"""

from __future__ import annotations

import argparse
import logging
import os
import platform
import random
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Sequence

from . import __version__
from ._io import atomic_write, read_json, sha256_file, write_json
from .analysis import emit, note_histograms, succession_matrix, tse_table_csv
from .bpe import BpeModel, TargetTooSmall, bpe_decode, bpe_encode, bpe_train
from .embed import EmbeddingError, contrastive_loss, cosine_pair_density, estimate_all, load_embeddings
from .score import DEFAULT_PITCH_OFFSETS, DEFAULT_VEL_OFFSETS, iter_variants, quantize, to_raw
from .smf import MidiError, read_smf, write_smf
from .tok import detokenize, tokenize
from .tse import CATEGORIES, ErrorPolicy, TokenGrammarError, TseReport, validate
from .vocab import Scheme, TokenSequence, VocabMismatch, build_vocab

logger = logging.getLogger("mtf")

SCHEME_CHOICES = [s.slug for s in Scheme] + ["all"]
BPE_DEFAULTS = {"generation": 2000, "other": 5000}
TOKEN_SUFFIX = ".tok.json"
MIDI_SUFFIXES = (".mid", ".midi")


class UsageError(Exception):
    """Bad arguments detected after parsing; exit code 2."""


class RunFailure(Exception):
    """Nothing could be produced; exit code 1."""


# ---- helpers ---------------------------------------------------------------

def _csv_ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _schemes(values: Sequence[str] | None) -> list[Scheme]:
    if not values or "all" in values:
        return list(Scheme)
    return list(dict.fromkeys(Scheme.from_slug(v) for v in values))


def _bpe_size(args) -> int:
    if args.bpe_size is not None:
        return args.bpe_size
    return BPE_DEFAULTS[args.profile]


def _midi_files(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    if not path.is_dir():
        raise UsageError(f"{path} does not exist")
    return sorted(p for p in path.iterdir() if p.suffix.lower() in MIDI_SUFFIXES)


def _token_files(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    if not path.is_dir():
        raise UsageError(f"{path} does not exist")
    return sorted(path.rglob(f"*{TOKEN_SUFFIX}"))


def _prepare_out(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".mtf-write-probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise RunFailure(f"output directory {path} is not writable: {exc}") from None
    return path


def _pmap(fn: Callable, items: Iterable, jobs: int) -> list:
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _load_tokens(path: Path) -> tuple[Scheme, TokenSequence, dict]:
    doc = read_json(path)
    scheme, seq = TokenSequence.from_json(doc)
    if seq.vocab_ref != build_vocab(scheme).hash:
        raise VocabMismatch(f"{path}: vocab_hash {seq.vocab_ref} does not match scheme {scheme}")
    return scheme, seq, doc


def _base_ids(path: Path, seq: TokenSequence, model: BpeModel | None) -> TokenSequence:
    if not seq.is_bpe:
        return seq
    if model is None:
        raise UsageError(f"{path} is BPE-encoded; pass --bpe-model")
    if model.vocab_ref and model.vocab_ref != seq.vocab_ref:
        raise VocabMismatch(f"{path}: BPE model was trained for vocabulary {model.vocab_ref}")
    return bpe_decode(seq, model)


def _stem(path: Path) -> str:
    name = path.name
    return name[: -len(TOKEN_SUFFIX)] if name.endswith(TOKEN_SUFFIX) else path.stem


# ---- per-file work (top level so worker processes can pickle it) ----------

def _ingest(job: tuple) -> dict:
    path, schemes, augment_cfg, out_of_range = job
    try:
        song = read_smf(path)
        score = quantize(song, out_of_range=out_of_range)
    except (MidiError, OSError) as exc:
        return {"name": path.name, "error": f"{type(exc).__name__}: {exc}"}
    variants = [("", score)]
    if augment_cfg is not None:
        pitch_offsets, vel_offsets, any_pitch = augment_cfg
        for kind, off, v in iter_variants(score, pitch_offsets, vel_offsets, any_pitch=any_pitch):
            variants.append((f".{kind[0]}{off:+d}", v))
    tokens = {
        scheme.slug: [(tag, tokenize(v, scheme)) for tag, v in variants] for scheme in schemes
    }
    return {
        "name": path.name,
        "stem": path.stem,
        "raw_notes": len(song.notes),
        "parse_warnings": dict(sorted(song.warnings.items())),
        "stats": dict(sorted(score.stats.items())),
        "scores": variants,
        "tokens": tokens,
    }


def _write_tokens(out: Path, stem: str, scheme: Scheme, seq: TokenSequence, **extra) -> Path:
    path = out / f"{stem}.{scheme.slug}{TOKEN_SUFFIX}"
    write_json(path, seq.to_json(scheme, **extra))
    return path


def _ingest_all(files: list[Path], schemes: list[Scheme], augment_cfg, out_of_range: str, jobs: int):
    results = _pmap(_ingest, [(p, schemes, augment_cfg, out_of_range) for p in files], jobs)
    ok = [r for r in results if "error" not in r]
    failed = {r["name"]: r["error"] for r in results if "error" in r}
    for name, err in failed.items():
        logger.error("skipping %s: %s", name, err)
    return ok, failed


def _summary_entry(r: dict) -> dict:
    return {
        "raw_notes": r["raw_notes"],
        "parse_warnings": r["parse_warnings"],
        "preprocessing": r["stats"],
        "variants": len(r["scores"]) - 1,
        "sequence_lengths": {s: [len(seq) for _, seq in seqs] for s, seqs in r["tokens"].items()},
    }


# ---- subcommands -----------------------------------------------------------

def cmd_tokenize(args) -> int:
    files = _midi_files(Path(args.input))
    if not files:
        raise RunFailure(f"no MIDI files in {args.input}")
    out = _prepare_out(Path(args.output))
    schemes = _schemes(args.scheme)
    augment_cfg = (args.pitch_offsets, args.vel_offsets, args.any_pitch) if args.augment else None
    ok, failed = _ingest_all(files, schemes, augment_cfg, args.out_of_range, args.jobs)
    for scheme in schemes:
        write_json(out / f"vocab.{scheme.slug}.json", build_vocab(scheme).to_json())
    for r in ok:
        for slug, seqs in r["tokens"].items():
            for tag, seq in seqs:
                _write_tokens(out, r["stem"] + tag, Scheme.from_slug(slug), seq)
    summary = {
        "schemes": [s.slug for s in schemes],
        "files": {r["name"]: _summary_entry(r) for r in ok},
        "failed": failed,
    }
    write_json(out / "summary.json", summary)
    if not ok:
        raise RunFailure("every input file failed")
    return 0


def cmd_detokenize(args) -> int:
    out = _prepare_out(Path(args.output))
    model = BpeModel.load(args.bpe_model) if args.bpe_model else None
    reports = {}
    for path in _token_files(Path(args.input)):
        scheme, seq, _ = _load_tokens(path)
        base = _base_ids(path, seq, model)
        try:
            score, report = detokenize(base, scheme, args.policy)
        except TokenGrammarError as exc:
            raise RunFailure(f"{path}: {exc}") from None
        atomic_write(out / f"{_stem(path)}.mid", write_smf(to_raw(score, args.tpq)))
        reports[path.name] = report.to_json()
    if not reports:
        raise RunFailure(f"no token files in {args.input}")
    write_json(out / "tse.json", reports)
    return 0


def cmd_bpe_train(args) -> int:
    corpus = []
    refs = set()
    for path in _token_files(Path(args.input)):
        scheme, seq, _ = _load_tokens(path)
        if seq.is_bpe:
            raise UsageError(f"{path} is already BPE-encoded")
        corpus.append(seq)
        refs.add((scheme, seq.vocab_ref))
    if not corpus:
        raise RunFailure(f"no token files in {args.input}")
    if len(refs) > 1:
        raise VocabMismatch(f"token files mix schemes: {sorted(s.slug for s, _ in refs)}")
    (scheme, _), = refs
    if args.bpe_sample and args.bpe_sample < len(corpus):
        corpus = random.Random(args.seed).sample(corpus, args.bpe_sample)
    model = bpe_train(corpus, _bpe_size(args), base_vocab_size=len(build_vocab(scheme)))
    write_json(Path(args.output), model.to_json())
    return 0


def cmd_bpe_apply(args) -> int:
    out = _prepare_out(Path(args.output))
    model = BpeModel.load(args.bpe_model)
    n = 0
    for path in _token_files(Path(args.input)):
        scheme, seq, _ = _load_tokens(path)
        if args.decode:
            result = _base_ids(path, seq, model)
        else:
            if model.vocab_ref and model.vocab_ref != seq.vocab_ref:
                raise VocabMismatch(f"{path}: BPE model was trained for vocabulary {model.vocab_ref}")
            result = bpe_encode(seq, model)
        write_json(out / path.name, result.to_json(scheme))
        n += 1
    if not n:
        raise RunFailure(f"no token files in {args.input}")
    return 0


def _validate_files(files: list[Path], model: BpeModel | None, only: Scheme | None):
    per_file: dict[str, TseReport] = {}
    per_scheme: dict[str, TseReport] = {}
    for path in files:
        scheme, seq, _ = _load_tokens(path)
        if only is not None and scheme is not only:
            raise VocabMismatch(f"{path} uses scheme {scheme}, expected {only}")
        report = validate(_base_ids(path, seq, model), scheme)
        per_file[str(path)] = report
        per_scheme[scheme.slug] = per_scheme.get(scheme.slug, TseReport()) + report
    return per_file, per_scheme


def cmd_validate(args) -> int:
    files = _token_files(Path(args.input))
    if not files:
        raise RunFailure(f"no token files in {args.input}")
    model = BpeModel.load(args.bpe_model) if args.bpe_model else None
    only = Scheme.from_slug(args.scheme) if args.scheme and args.scheme != "all" else None
    per_file, per_scheme = _validate_files(files, model, only)
    if args.format == "csv":
        text = tse_table_csv(per_scheme)
    else:
        import json

        doc = {"schemes": {k: v.to_json() for k, v in per_scheme.items()}}
        if args.per_file:
            doc["files"] = {k: v.to_json() for k, v in per_file.items()}
        text = json.dumps(doc, indent=1, sort_keys=True) + "\n"
    if args.output:
        atomic_write(Path(args.output), text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_analyze(args) -> int:
    files = _token_files(Path(args.input))
    if not files:
        raise RunFailure(f"no token files in {args.input}")
    out = _prepare_out(Path(args.output))
    model = BpeModel.load(args.bpe_model) if args.bpe_model else None
    by_scheme: dict[Scheme, list[TokenSequence]] = {}
    for path in files:
        scheme, seq, _ = _load_tokens(path)
        by_scheme.setdefault(scheme, []).append(_base_ids(path, seq, model))
    formats = args.format or ["csv", "json", "svg"]
    for scheme, seqs in sorted(by_scheme.items(), key=lambda kv: kv[0].slug):
        scores = [detokenize(s, scheme)[0] for s in seqs]
        matrix = succession_matrix(seqs, scheme)
        for fmt in formats:
            emit(matrix, fmt, out / f"succession.{scheme.slug}.{fmt}", scheme.slug)
            for hist in note_histograms(scores):
                emit(hist, fmt, out / f"{hist.kind}.{scheme.slug}.{fmt}", scheme.slug)
    return 0


def cmd_augment(args) -> int:
    files = _midi_files(Path(args.input))
    out = _prepare_out(Path(args.output))
    written = 0
    for path in files:
        try:
            song = read_smf(path)
        except MidiError as exc:
            logger.error("skipping %s: %s", path.name, exc)
            continue
        score = quantize(song, out_of_range=args.out_of_range)
        tpq = song.ticks_per_quarter if song.ticks_per_quarter % 8 == 0 else 480
        for kind, off, variant in iter_variants(score, args.pitch_offsets, args.vel_offsets, any_pitch=args.any_pitch):
            atomic_write(out / f"{path.stem}.{kind[0]}{off:+d}.mid", write_smf(to_raw(variant, tpq)))
            written += 1
    if files and not written:
        raise RunFailure("no variant could be produced")
    return 0


def cmd_embed_metrics(args) -> int:
    z = load_embeddings(args.z)
    doc: dict = {"n": z.n, "d": z.d}
    if args.zbar:
        zbar = load_embeddings(args.zbar)
        density = cosine_pair_density(z, zbar, args.bins)
        doc["cosine_density"] = density.to_json()
        if args.tau is not None:
            report = contrastive_loss(z, zbar, args.tau)
            doc["contrastive"] = {"tau": report.tau, "mean_loss": report.mean_loss}
    elif args.tau is not None:
        raise UsageError("--tau needs --zbar")
    if not args.skip_id:
        doc["intrinsic_dimension"] = estimate_all(
            z, alpha=args.lpca_alpha, k=args.k, discard_fraction=args.discard
        ).to_json()
    import json

    text = json.dumps(doc, indent=1, sort_keys=True) + "\n"
    if args.output:
        atomic_write(Path(args.output), text)
    else:
        sys.stdout.write(text)
    return 0


def _versions() -> dict:
    import numpy
    import scipy

    return {
        "mtf": __version__,
        "python": platform.python_version(),
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
    }


def cmd_pipeline(args) -> int:
    files = _midi_files(Path(args.input))
    if not files:
        raise RunFailure(f"no MIDI files in {args.input}")
    schemes = _schemes(args.scheme)
    bpe_size = _bpe_size(args)
    for scheme in schemes:
        if bpe_size <= len(build_vocab(scheme)):
            raise TargetTooSmall(
                f"--bpe-size {bpe_size} must exceed the {scheme} base vocabulary size {len(build_vocab(scheme))}"
            )
    run = _prepare_out(Path(args.output))
    formats = args.format or ["csv", "json", "svg"]
    augment_cfg = None if args.no_augment else (args.pitch_offsets, args.vel_offsets, args.any_pitch)
    ok, failed = _ingest_all(files, schemes, augment_cfg, args.out_of_range, args.jobs)
    if not ok:
        raise RunFailure("every input file failed")

    hist_dir = run / "histograms"
    hist_dir.mkdir(exist_ok=True)
    originals = [r["scores"][0][1] for r in ok]
    for hist in note_histograms(originals):
        for fmt in formats:
            emit(hist, fmt, hist_dir / f"{hist.kind}.{fmt}")

    reports = {}
    for scheme in schemes:
        sdir = run / scheme.slug
        (sdir / "tokens").mkdir(parents=True, exist_ok=True)
        (sdir / "tokens_bpe").mkdir(exist_ok=True)
        write_json(sdir / "vocab.json", build_vocab(scheme).to_json())
        named = [(r["stem"] + tag, seq) for r in ok for tag, seq in r["tokens"][scheme.slug]]
        for name, seq in named:
            _write_tokens(sdir / "tokens", name, scheme, seq)

        corpus = [seq for _, seq in named]
        if args.bpe_sample and args.bpe_sample < len(corpus):
            corpus = random.Random(args.seed).sample(corpus, args.bpe_sample)
        model = bpe_train(corpus, bpe_size, base_vocab_size=len(build_vocab(scheme)))
        write_json(sdir / "bpe.json", model.to_json())
        report = TseReport()
        for name, seq in named:
            encoded = bpe_encode(seq, model)
            _write_tokens(sdir / "tokens_bpe", name, scheme, encoded)
            report = report + validate(bpe_decode(encoded, model), scheme)
        reports[scheme.slug] = report
        for fmt in formats:
            emit(report, fmt, sdir / f"tse.{fmt}", scheme.slug)
            emit(succession_matrix([seq for _, seq in named], scheme), fmt, sdir / f"succession.{fmt}", scheme.slug)

    atomic_write(run / "tse_table.csv", tse_table_csv(reports))
    write_json(run / "summary.json", {"files": {r["name"]: _summary_entry(r) for r in ok}, "failed": failed})

    config = {
        "schemes": [s.slug for s in schemes],
        "bpe_size": bpe_size,
        "bpe_sample": args.bpe_sample,
        "pitch_offsets": None if augment_cfg is None else list(args.pitch_offsets),
        "vel_offsets": None if augment_cfg is None else list(args.vel_offsets),
        "out_of_range": args.out_of_range,
        "seed": args.seed,
        "inputs": {p.name: sha256_file(p) for p in files},
        "formats": formats,
    }
    artifacts = {
        str(p.relative_to(run)): sha256_file(p)
        for p in sorted(run.rglob("*"))
        if p.is_file() and p.name != "manifest.json"
    }
    write_json(run / "manifest.json", {"config": config, "versions": _versions(), "artifacts": artifacts})
    print(sha256_file(run / "manifest.json"))
    return 0


# ---- argument parsing ------------------------------------------------------

def _add_augment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--pitch-offsets", type=_csv_ints, default=list(DEFAULT_PITCH_OFFSETS),
                   help="semitone shifts, comma separated (default: -24,-12,12,24)")
    p.add_argument("--vel-offsets", type=_csv_ints, default=list(DEFAULT_VEL_OFFSETS),
                   help="velocity-bin shifts, comma separated (default: -1,1)")
    p.add_argument("--any-pitch", action="store_true", help="allow pitch offsets that are not whole octaves")
    p.add_argument("--out-of-range", choices=["drop", "clip"], default="drop")


def _add_bpe_size(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bpe-size", type=int, default=None, help="target vocabulary size")
    p.add_argument("--profile", choices=sorted(BPE_DEFAULTS), default="other",
                   help="default size: 2000 for generation, 5000 otherwise")
    p.add_argument("--bpe-sample", type=int, default=None, help="train on a seeded random subset of N sequences")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mtf {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=1, help="worker processes for per-file work")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tokenize", parents=[common], help="MIDI files -> token JSON files")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--scheme", action="append", choices=SCHEME_CHOICES)
    p.add_argument("--augment", action="store_true", help="also tokenize pitch/velocity variants")
    _add_augment_flags(p)
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("detokenize", parents=[common], help="token JSON files -> MIDI files")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--bpe-model")
    p.add_argument("--policy", choices=[e.value for e in ErrorPolicy], default="lenient")
    p.add_argument("--tpq", type=int, default=480)
    p.set_defaults(func=cmd_detokenize)

    p = sub.add_parser("bpe-train", parents=[common], help="learn BPE merges from token files")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    _add_bpe_size(p)
    p.set_defaults(func=cmd_bpe_train)

    p = sub.add_parser("bpe-apply", parents=[common], help="BPE-encode (or --decode) token files")
    p.add_argument("input")
    p.add_argument("--bpe-model", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--decode", action="store_true")
    p.set_defaults(func=cmd_bpe_apply)

    p = sub.add_parser("validate", parents=[common], help="TSE report over token files")
    p.add_argument("input")
    p.add_argument("--bpe-model")
    p.add_argument("--scheme", choices=SCHEME_CHOICES)
    p.add_argument("--per-file", action="store_true")
    p.add_argument("--format", choices=["csv", "json"], default="json")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("analyze", parents=[common], help="histograms and succession matrices")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--bpe-model")
    p.add_argument("--format", action="append", choices=["csv", "json", "svg"])
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("augment", parents=[common], help="write pitch/velocity-shifted MIDI variants")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    _add_augment_flags(p)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("embed-metrics", parents=[common], help="cosine densities, contrastive loss, intrinsic dimension")
    p.add_argument("--z", required=True, help="EMB1 or CSV embeddings")
    p.add_argument("--zbar", help="paired embeddings (same shape as --z)")
    p.add_argument("--tau", type=float, help="temperature for the contrastive loss")
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--k", type=int, default=20, help="neighbours for MOM")
    p.add_argument("--lpca-alpha", type=float, default=0.05)
    p.add_argument("--discard", type=float, default=0.1, help="TwoNN discard fraction")
    p.add_argument("--skip-id", action="store_true", help="skip intrinsic-dimension estimates")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_embed_metrics)

    p = sub.add_parser("pipeline", parents=[common], help="quantize, augment, tokenize, BPE and analyze a corpus")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--scheme", action="append", choices=SCHEME_CHOICES)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--format", action="append", choices=["csv", "json", "svg"])
    _add_augment_flags(p)
    _add_bpe_size(p)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("MTF_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, TargetTooSmall, argparse.ArgumentTypeError) as exc:
        print(f"mtf {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        if isinstance(exc, (VocabMismatch, MidiError, EmbeddingError)) or type(exc) is ValueError:
            print(f"mtf {args.command}: error: {exc}", file=sys.stderr)
            return 1
        raise
    except (RunFailure, OSError) as exc:
        print(f"mtf {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
