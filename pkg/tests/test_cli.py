from __future__ import annotations

import csv
import io
import json
import os
import random
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from conftest import pop_score, write_corpus
from mtf._io import read_json, write_json
from mtf.cli import main
from mtf.embed import write_emb1
from mtf.faults import inject
from mtf.score import quantize
from mtf.smf import read_smf
from mtf.vocab import Scheme


def run(*argv) -> int:
    return main([str(a) for a in argv])


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_tokenize_one_file(tmp_path, corpus):
    single = tmp_path / "one"
    single.mkdir()
    (single / "a.mid").write_bytes((corpus / "song00.mid").read_bytes())
    assert run("tokenize", single, "-o", tmp_path / "tok", "--scheme", "ts-dur") == 0
    files = sorted(p.name for p in (tmp_path / "tok").iterdir())
    assert files == ["a.ts-dur.tok.json", "summary.json", "vocab.ts-dur.json"]
    doc = read_json(tmp_path / "tok" / "a.ts-dur.tok.json")
    assert set(doc) == {"scheme", "vocab_hash", "is_bpe", "ids"}
    summary = read_json(tmp_path / "tok" / "summary.json")
    entry = summary["files"]["a.mid"]
    assert entry["preprocessing"]["kept"] > 0
    assert entry["sequence_lengths"]["ts-dur"] == [len(doc["ids"])]


def test_corrupt_file_is_skipped(tmp_path, corpus, caplog):
    (corpus / "broken.mid").write_bytes(b"MThd\x00\x00")
    assert run("tokenize", corpus, "-o", tmp_path / "tok", "--scheme", "pos-dur") == 0
    summary = read_json(tmp_path / "tok" / "summary.json")
    assert "broken.mid" in summary["failed"]
    assert len(summary["files"]) == 3
    assert "broken.mid" in caplog.text


def test_all_files_corrupt_exit_1(tmp_path):
    d = tmp_path / "bad"
    d.mkdir()
    (d / "x.mid").write_bytes(b"nope")
    assert run("tokenize", d, "-o", tmp_path / "tok") == 1


def test_tokenize_deterministic_and_parallel(tmp_path, corpus):
    assert run("tokenize", corpus, "-o", tmp_path / "a", "--augment") == 0
    assert run("tokenize", corpus, "-o", tmp_path / "b", "--augment", "--jobs", "2") == 0
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_validate_clean_and_faulty(tmp_path, corpus, capsys):
    tok = tmp_path / "tok"
    assert run("tokenize", corpus, "-o", tok, "--scheme", "pos-noff") == 0
    capsys.readouterr()
    assert run("validate", tok, "--format", "csv") == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert rows[0]["tokenization"] == "pos-noff"
    assert all(float(rows[0][c]) == 0 for c in ("type", "time", "dupn", "nnon", "nnof"))

    score = quantize(read_smf(corpus / "song02.mid"))
    faulty = inject(score, Scheme.POS_NOFF, "nnon", 3, seed=1)
    write_json(tok / "faulty.pos-noff.tok.json", faulty.to_json(Scheme.POS_NOFF))
    assert run("validate", tok, "--per-file") == 0
    doc = json.loads(capsys.readouterr().out)
    counts = doc["schemes"]["pos-noff"]["counts"]
    assert counts == {"type": 0, "time": 0, "dupn": 0, "nnon": 3, "nnof": 0}
    per_file = {Path(k).name: v["counts"]["nnon"] for k, v in doc["files"].items()}
    assert per_file["faulty.pos-noff.tok.json"] == 3
    assert sum(per_file.values()) == 3


def test_validate_bpe_matches_base(tmp_path, corpus, capsys):
    tok, enc = tmp_path / "tok", tmp_path / "enc"
    assert run("tokenize", corpus, "-o", tok, "--scheme", "ts-noff", "--augment") == 0
    assert run("bpe-train", tok, "-o", tmp_path / "bpe.json", "--bpe-size", 400) == 0
    assert run("bpe-apply", tok, "--bpe-model", tmp_path / "bpe.json", "-o", enc) == 0
    capsys.readouterr()
    assert run("validate", tok) == 0
    base = json.loads(capsys.readouterr().out)
    assert run("validate", enc, "--bpe-model", tmp_path / "bpe.json") == 0
    assert json.loads(capsys.readouterr().out) == base
    # encoded files without the model are refused
    assert run("validate", enc) == 2


def test_validate_vocab_mismatch_aborts(tmp_path, corpus):
    tok = tmp_path / "tok"
    assert run("tokenize", corpus, "-o", tok, "--scheme", "ts-dur") == 0
    path = tok / "song00.ts-dur.tok.json"
    doc = read_json(path)
    doc["vocab_hash"] = "0" * 16
    write_json(path, doc)
    assert run("validate", tok) == 1
    write_json(path, read_json(tok / "song01.ts-dur.tok.json"))
    assert run("validate", tok) == 0
    assert run("validate", tok, "--scheme", "pos-dur") == 1


def test_bpe_apply_decode_roundtrip(tmp_path, corpus):
    tok = tmp_path / "tok"
    assert run("tokenize", corpus, "-o", tok, "--scheme", "pos-dur") == 0
    assert run("bpe-train", tok, "-o", tmp_path / "bpe.json", "--profile", "generation") == 0
    model = read_json(tmp_path / "bpe.json")
    assert model["target_size"] == 2000
    assert run("bpe-apply", tok, "--bpe-model", tmp_path / "bpe.json", "-o", tmp_path / "enc") == 0
    assert run("bpe-apply", tmp_path / "enc", "--bpe-model", tmp_path / "bpe.json", "-o", tmp_path / "dec", "--decode") == 0
    for p in (tmp_path / "dec").iterdir():
        assert read_json(p) == read_json(tok / p.name)


def test_detokenize_writes_equivalent_midi(tmp_path, corpus):
    tok = tmp_path / "tok"
    assert run("tokenize", corpus, "-o", tok, "--scheme", "ts-noff") == 0
    assert run("detokenize", tok, "-o", tmp_path / "mid") == 0
    for name in ("song00", "song01"):
        original = quantize(read_smf(corpus / f"{name}.mid"))
        again = quantize(read_smf(tmp_path / "mid" / f"{name}.ts-noff.mid"))
        assert again == original


def test_detokenize_strict_fails_on_fault(tmp_path, corpus):
    tok = tmp_path / "tok"
    tok.mkdir()
    score = pop_score(random.Random(0))
    write_json(tok / "f.ts-dur.tok.json", inject(score, Scheme.TS_DUR, "type", 1).to_json(Scheme.TS_DUR))
    assert run("detokenize", tok, "-o", tmp_path / "mid", "--policy", "strict") == 1
    assert run("detokenize", tok, "-o", tmp_path / "mid2") == 0
    assert read_json(tmp_path / "mid2" / "tse.json")["f.ts-dur.tok.json"]["counts"]["type"] == 1


def test_analyze_outputs(tmp_path, corpus):
    tok = tmp_path / "tok"
    assert run("tokenize", corpus, "-o", tok, "--scheme", "ts-dur", "--scheme", "pos-noff") == 0
    assert run("analyze", tok, "-o", tmp_path / "an") == 0
    names = {p.name for p in (tmp_path / "an").iterdir()}
    for scheme in ("ts-dur", "pos-noff"):
        for fmt in ("csv", "json", "svg"):
            assert f"succession.{scheme}.{fmt}" in names
            assert f"onset_position.{scheme}.{fmt}" in names


def test_augment_writes_variants(tmp_path, corpus):
    assert run("augment", corpus, "-o", tmp_path / "aug", "--pitch-offsets=-12,12", "--vel-offsets", "1") == 0
    names = sorted(p.name for p in (tmp_path / "aug").iterdir())
    assert "song00.p-12.mid" in names and "song00.v+1.mid" in names
    assert len(names) <= 9


def test_bad_offsets_exit_2(tmp_path, corpus):
    with pytest.raises(SystemExit) as info:
        run("augment", corpus, "-o", tmp_path / "aug", "--pitch-offsets", "a,b")
    assert info.value.code == 2


def test_embed_metrics(tmp_path, capsys):
    rng = np.random.default_rng(0)
    z = rng.normal(size=(120, 6))
    write_emb1(tmp_path / "z.emb", z)
    write_emb1(tmp_path / "zb.emb", z + 0.05 * rng.normal(size=z.shape))
    out = tmp_path / "m.json"
    assert run("embed-metrics", "--z", tmp_path / "z.emb", "--zbar", tmp_path / "zb.emb", "--tau", 0.1, "-o", out) == 0
    doc = read_json(out)
    assert doc["n"] == 120 and doc["d"] == 6
    assert sum(doc["cosine_density"]["counts"]) == 120
    assert doc["contrastive"]["mean_loss"] >= 0
    assert set(doc["intrinsic_dimension"]) == {"lpca", "mom", "twonn", "fishers", "params"}
    assert run("embed-metrics", "--z", tmp_path / "z.emb", "--tau", 0.1) == 2
    write_emb1(tmp_path / "bad.emb", z[:10])
    assert run("embed-metrics", "--z", tmp_path / "z.emb", "--zbar", tmp_path / "bad.emb", "--skip-id") == 1


def test_pipeline_four_artifact_sets(tmp_path, corpus, capsys):
    runs = tmp_path / "run"
    assert run("pipeline", corpus, "-o", runs, "--bpe-size", 400) == 0
    digest = capsys.readouterr().out.strip()
    for scheme in Scheme:
        d = runs / scheme.slug
        for name in ("vocab.json", "bpe.json", "tse.csv", "tse.json", "succession.svg"):
            assert (d / name).is_file(), (scheme, name)
        assert len(list((d / "tokens").iterdir())) == len(list((d / "tokens_bpe").iterdir())) > 3
    manifest = read_json(runs / "manifest.json")
    assert manifest["config"]["seed"] == 0
    assert manifest["config"]["bpe_size"] == 400
    assert set(manifest["versions"]) >= {"mtf", "python", "numpy", "scipy"}
    assert "pos-dur/bpe.json" in manifest["artifacts"]
    assert len(digest) == 64
    table = list(csv.DictReader(open(runs / "tse_table.csv")))
    assert [r["tokenization"] for r in table] == [s.slug for s in Scheme]
    assert all(float(r["type"]) == 0 for r in table)


def test_pipeline_target_too_small(tmp_path, corpus, capsys):
    assert run("pipeline", corpus, "-o", tmp_path / "run", "--bpe-size", 150) == 2
    err = capsys.readouterr().err
    assert "must exceed" in err and "Traceback" not in err


def test_pipeline_unwritable_output(tmp_path, corpus):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run("pipeline", corpus, "-o", blocker / "run") == 1


def test_missing_input_exit_2(tmp_path):
    assert run("tokenize", tmp_path / "nowhere", "-o", tmp_path / "o") == 2


def test_module_entry_point_and_log_env(tmp_path):
    write_corpus(tmp_path / "midi", 1)
    mtf = [sys.executable, "-m", "mtf"]
    proc = subprocess.run(mtf + ["tokenize", str(tmp_path / "midi"), "-o", str(tmp_path / "tok"), "--scheme", "ts-dur"])
    assert proc.returncode == 0
    train = mtf + ["bpe-train", str(tmp_path / "tok"), "-o", str(tmp_path / "bpe.json"), "--bpe-size", "300"]
    quiet = subprocess.run(train, capture_output=True, text=True)
    loud = subprocess.run(train, capture_output=True, text=True, env={**os.environ, "MTF_LOG": "info"})
    assert quiet.returncode == loud.returncode == 0
    assert "learned" not in quiet.stderr
    assert "learned" in loud.stderr
    proc = subprocess.run([sys.executable, "-m", "mtf", "--version"], capture_output=True, text=True)
    assert proc.stdout.startswith("mtf ")
