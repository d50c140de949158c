import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from varisep.audio import read_wav, write_wav
from varisep.cli import main

from conftest import FS, make_clip


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def ws(tmp_path_factory, corpus_dir):
    """One CLI workspace shared by the happy-path tests, built in order."""
    root = tmp_path_factory.mktemp("cli-ws")
    code = main(["index", str(corpus_dir), "--out", str(root / "manifest.csv")])
    assert code == 0
    code = main([
        "split", "--manifest", str(root / "manifest.csv"),
        "--out", str(root / "splits.json"), "--targets", "18", "9", "9", "--seed", "7",
    ])
    assert code == 0
    config = {
        "master_seed": 5,
        "examples_per_split": {"train": 3, "validation": 1, "eval": 1},
        "scene": {"sim": {"rir_length_s": 0.05}},
    }
    (root / "config.json").write_text(json.dumps(config))
    code = main([str(a) for a in _mix(root, "dry")])
    assert code == 0
    return root


def _mix(ws, out_name, *extra):
    return [
        "mix", "--split", "train",
        "--manifest", str(ws / "manifest.csv"), "--splits", str(ws / "splits.json"),
        "--config", str(ws / "config.json"), "--out", str(ws / out_name), *extra,
    ]


class TestIndexCommand:
    def test_reports_counts(self, capsys, corpus_dir, tmp_path):
        code, out, _ = run(capsys, "index", corpus_dir, "--out", tmp_path / "m.csv")
        assert code == 0
        assert out.strip() == "36 clips, ~0.1 h"
        assert (tmp_path / "m.csv").exists()

    def test_missing_root(self, capsys, tmp_path):
        code, _, err = run(capsys, "index", tmp_path / "nope", "--out", tmp_path / "m.csv")
        assert code == 2
        assert "error:" in err

    def test_empty_root_is_empty_corpus(self, capsys, tmp_path):
        (tmp_path / "empty").mkdir()
        code, out, _ = run(capsys, "index", tmp_path / "empty", "--out", tmp_path / "m.csv")
        assert code == 0
        assert out.startswith("0 clips")

    def test_wavs_without_manifest(self, capsys, tmp_path):
        write_wav(make_clip(1, 0.5, continuous=True), tmp_path / "loose.wav")
        code, _, err = run(capsys, "index", tmp_path, "--out", tmp_path / "m.csv")
        assert code == 2
        assert "manifest" in err


class TestSplitCommand:
    def test_writes_disjoint_assignment(self, capsys, ws):
        data = json.loads((ws / "splits.json").read_text())
        assert data["schema_version"] == 1
        assert data["seed"] == 7
        assert sorted(data["clip_counts"]) == ["eval", "train", "validation"]
        assert set(data["by_uploader"].values()) <= {"train", "validation", "eval"}
        assert len(data["by_uploader"]) == 12
        code, out, _ = run(
            capsys, "split", "--manifest", ws / "manifest.csv",
            "--out", ws / "splits2.json", "--targets", "18", "9", "9", "--seed", "7",
        )
        assert code == 0
        assert out.startswith("train=") and "validation=" in out and "eval=" in out

    def test_missing_manifest(self, capsys, tmp_path):
        code, _, err = run(capsys, "split", "--manifest", tmp_path / "nope.csv",
                           "--out", tmp_path / "s.json")
        assert code == 2
        assert "not found" in err


class TestMixCommand:
    def test_dry_tree_layout_and_resume(self, capsys, ws):
        # the tree already exists from the fixture; a second run must skip
        # the finished examples and still report success
        code, out, _ = run(capsys, *_mix(ws, "dry"))
        assert code == 0
        assert out.strip().startswith("3 examples in")
        split_dir = ws / "dry" / "train"
        for i in range(3):
            example = split_dir / f"example{i}"
            assert (example / "mixture.wav").exists()
            assert (example / "spec.json").exists()
            spec = json.loads((example / "spec.json").read_text())
            assert spec["mode"] == "dry"
            assert spec["sample_rate"] == FS
            assert len(list(example.glob("*.wav"))) == 1 + len(spec["events"])
        manifest = (ws / "dry" / "train_manifest.jsonl").read_text().splitlines()
        assert len(manifest) == 3
        listing = (ws / "dry" / "train_example_list.txt").read_text().splitlines()
        for line in listing:
            for rel in line.split("\t"):
                assert (ws / "dry" / rel).exists()

    def test_dry_mixture_is_source_sum(self, ws):
        example = ws / "dry" / "train" / "example0"
        mixture = read_wav(example / "mixture.wav")
        parts = [read_wav(p) for p in example.glob("*.wav") if p.name != "mixture.wav"]
        total = np.sum([p.samples for p in parts], axis=0)
        # wavs hold float32; summing after the rounding costs a few ulps
        np.testing.assert_allclose(mixture.samples, total, atol=1e-6)

    def test_worker_count_does_not_change_bytes(self, capsys, ws):
        code, _, _ = run(capsys, *_mix(ws, "dry-w2"), "--workers", "2")
        assert code == 0
        a = sorted((ws / "dry" / "train").rglob("*.wav"))
        b = sorted((ws / "dry-w2" / "train").rglob("*.wav"))
        assert [p.name for p in a] == [p.name for p in b]
        assert all(x.read_bytes() == y.read_bytes() for x, y in zip(a, b))

    def test_flag_overrides_config_seed(self, capsys, ws):
        code, _, _ = run(capsys, *_mix(ws, "dry-seed9"), "--seed", "9", "--count", "1")
        assert code == 0
        flagged = (ws / "dry-seed9" / "train" / "example0" / "mixture.wav").read_bytes()
        base = (ws / "dry" / "train" / "example0" / "mixture.wav").read_bytes()
        assert flagged != base

    def test_reverberant_with_and_without_store(self, capsys, ws):
        code, out, _ = run(
            capsys, "rir", "--split", "train", "--count", "2",
            "--config", ws / "config.json", "--out", ws / "rirs",
        )
        assert code == 0
        assert out.startswith("2 rooms, 8 impulse responses")
        sidecars = list((ws / "rirs" / "train").glob("rir_*.json"))
        assert len(sidecars) == 2
        meta = json.loads(sidecars[0].read_text())
        assert len(meta["rir_files"]) == 4

        code, _, _ = run(capsys, *_mix(ws, "rev-store"), "--mode", "reverberant",
                         "--rir-dir", ws / "rirs", "--count", "2")
        assert code == 0
        code, _, _ = run(capsys, *_mix(ws, "rev-fresh"), "--mode", "reverberant",
                         "--count", "2")
        assert code == 0
        for i in range(2):
            a = (ws / "rev-store" / "train" / f"example{i}" / "mixture.wav").read_bytes()
            b = (ws / "rev-fresh" / "train" / f"example{i}" / "mixture.wav").read_bytes()
            assert a == b

    def test_bad_config_json(self, capsys, ws, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{oops")
        code, _, err = run(capsys, *_mix(ws, "unused"), "--config", bad)
        assert code == 2
        assert "not valid JSON" in err

    def test_unknown_config_field(self, capsys, ws, tmp_path):
        bad = tmp_path / "unknown.json"
        bad.write_text(json.dumps({"master_sede": 1}))
        code, _, err = run(capsys, *_mix(ws, "unused"), "--config", bad)
        assert code == 2
        assert "unknown config fields" in err

    def test_unknown_split_value(self, ws):
        with pytest.raises(SystemExit):
            main(["mix", "--split", "test", "--manifest", str(ws / "manifest.csv")])


@pytest.fixture(scope="module")
def est_root(ws):
    """Estimates equal to the references: ideal separation."""
    est_root = ws / "ests"
    for example in sorted((ws / "dry" / "train").glob("example*")):
        dst = est_root / "train" / example.name
        dst.mkdir(parents=True, exist_ok=True)
        k = 0
        for wav in sorted(example.glob("*.wav")):
            if wav.name == "mixture.wav":
                continue
            shutil.copy(wav, dst / f"estimate{k}.wav")
            k += 1
    return est_root


class TestEvalCommand:
    def test_perfect_estimates(self, capsys, ws, est_root):
        code, out, _ = run(capsys, "eval", ws / "dry", est_root,
                           "--out", ws / "eval-out")
        assert code == 0
        assert "3 examples scored, 0 failed" in out
        report = json.loads((ws / "eval-out" / "report.json").read_text())
        assert report["n_examples"] == 3
        assert report["counting_rates"]["equal"] == pytest.approx(1.0)
        assert report["formulation"] == "stabilized"
        assert (ws / "eval-out" / "per_example.jsonl").exists()
        assert (ws / "eval-out" / "confusion_matrix.csv").exists()
        assert (ws / "eval-out" / "input_si_snr.csv").exists()

    def test_formulation_flag(self, capsys, ws, est_root):
        code, _, _ = run(capsys, "eval", ws / "dry", est_root,
                         "--out", ws / "eval-scaled", "--formulation", "scaled")
        assert code == 0
        report = json.loads((ws / "eval-scaled" / "report.json").read_text())
        assert report["formulation"] == "scaled"

    def test_missing_estimates_fail_examples(self, capsys, ws, tmp_path):
        empty = tmp_path / "no-ests"
        empty.mkdir()
        code, _, err = run(capsys, "eval", ws / "dry", empty)
        assert code == 1
        assert "error:" in err

    def test_missing_ref_root(self, capsys, tmp_path):
        code, _, err = run(capsys, "eval", tmp_path / "nope", tmp_path)
        assert code == 2
        assert "not found" in err


class TestLossCheckCommand:
    def test_scores_tree(self, capsys, tmp_path):
        rng = np.random.default_rng(0)
        example = tmp_path / "ex0"
        example.mkdir()
        refs = [make_clip(100 + i, 1.0, continuous=True) for i in range(2)]
        mixture = np.sum([r.samples for r in refs], axis=0)
        write_wav(type(refs[0])(mixture, FS), example / "mixture.wav")
        write_wav(refs[0], example / "source0.wav")
        write_wav(refs[1], example / "source1.wav")
        # estimates are the references swapped: the pairing must recover it
        write_wav(refs[1], example / "estimate0.wav")
        write_wav(refs[0], example / "estimate1.wav")
        out_path = tmp_path / "losses.jsonl"
        code, out, _ = run(capsys, "loss-check", tmp_path, "--out", out_path)
        assert code == 0
        assert "1 examples scored, 0 failed" in out
        record = json.loads(out_path.read_text().splitlines()[0])
        assert record["best_permutation"] == [1, 0]
        assert record["per_pair_losses"][0][0] == "active"

    def test_no_estimates(self, capsys, tmp_path):
        example = tmp_path / "ex0"
        example.mkdir()
        write_wav(make_clip(1, 0.5, continuous=True), example / "mixture.wav")
        write_wav(make_clip(2, 0.5, continuous=True), example / "source0.wav")
        code, _, _ = run(capsys, "loss-check", tmp_path)
        assert code == 1


def test_unknown_subcommand_exits_via_argparse():
    with pytest.raises(SystemExit):
        main(["frobnicate"])


def test_no_subcommand_exits_via_argparse():
    with pytest.raises(SystemExit):
        main([])
