from __future__ import annotations

import json

import pandas as pd
from click.testing import CliRunner

from src.main import cli


def _run(*args):
    result = CliRunner().invoke(cli, ["--threads", "2", *map(str, args)])
    return result


def _files(path):
    return sorted(p.name for p in path.iterdir() if p.is_file())


def test_gen_writes_images_noise_and_manifest(write_config, tmp_path):
    config = write_config()
    out = tmp_path / "gen"
    result = _run("gen", "--config", config, "--out", out)
    assert result.exit_code == 0, result.output
    assert _files(out) == [
        "image_0000.metr", "image_0001.metr", "image_0002.metr", "manifest.json",
        "noise_0000.metr", "noise_0001.metr", "noise_0002.metr",
    ]
    manifest = json.loads((out / "manifest.json").read_text())
    assert [item["index"] for item in manifest["items"]] == [0, 1, 2]
    assert all(len(item["message"]) == 6 for item in manifest["items"])
    assert manifest["key"]["r"] == 6


def test_gen_is_deterministic_across_thread_counts(write_config, tmp_path):
    config = write_config()
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run("gen", "--config", config, "--out", a).exit_code == 0
    result = CliRunner().invoke(cli, ["--threads", "1", "gen", "--config", str(config), "--out", str(b)])
    assert result.exit_code == 0, result.output
    for name in _files(a):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_attack_none_is_bit_identical(write_config, tmp_path):
    config = write_config()
    clean, attacked = tmp_path / "clean", tmp_path / "attacked"
    assert _run("gen", "--config", config, "--out", clean).exit_code == 0
    result = _run("attack", "--config", config, "--in", clean, "--kind", "none", "--out", attacked)
    assert result.exit_code == 0, result.output
    for i in range(3):
        name = f"image_{i:04d}.metr"
        assert (clean / name).read_bytes() == (attacked / name).read_bytes()
    assert json.loads((attacked / "manifest.json").read_text())["attack"] == {"kind": "none", "params": {}}


def test_attack_all_uses_one_directory_per_attack(write_config, tmp_path):
    config = write_config()
    clean, attacked = tmp_path / "clean", tmp_path / "attacked"
    assert _run("gen", "--config", config, "--out", clean).exit_code == 0
    result = _run("attack", "--config", config, "--in", clean, "--out", attacked)
    assert result.exit_code == 0, result.output
    assert sorted(p.name for p in attacked.iterdir()) == ["blur-1", "none"]
    assert _run("attack", "--config", config, "--in", clean, "--param", "radius=2").exit_code == 2


def test_detect_decodes_clean_images(write_config, tmp_path):
    config = write_config()
    clean, report = tmp_path / "clean", tmp_path / "report"
    assert _run("gen", "--config", config, "--out", clean).exit_code == 0
    result = _run("detect", "--config", config, "--in", clean, "--out", report)
    assert result.exit_code == 0, result.output
    summary = pd.read_csv(report / "detect.csv")
    assert summary.loc[0, "word_acc"] == 1.0
    assert summary.loc[0, "presence_rate"] == 1.0
    assert len(list((report / "detections").glob("detect_*.json"))) == 3


def test_plain_images_have_a_low_false_positive_rate(write_config, tmp_path):
    config = write_config({"shape": {"channels": 1, "height": 32, "width": 32}, "trials": 200})
    plain, report = tmp_path / "plain", tmp_path / "report"
    assert _run("gen", "--config", config, "--out", plain, "--plain").exit_code == 0
    result = _run("detect", "--config", config, "--in", plain, "--out", report)
    assert result.exit_code == 0, result.output
    assert pd.read_csv(report / "detect.csv").loc[0, "presence_rate"] <= 0.04


def test_detect_without_manifest_exits_3(write_config, tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    result = _run("detect", "--config", write_config(), "--in", empty)
    assert result.exit_code == 3
    assert "manifest" in result.output


def test_detect_with_another_key_exits_3(write_config, tmp_path):
    clean = tmp_path / "clean"
    assert _run("gen", "--config", write_config(), "--out", clean).exit_code == 0
    other = write_config({"key": {"r": 5, "S": 50}}, name="other.json")
    assert _run("detect", "--config", other, "--in", clean).exit_code == 3


def test_bad_config_exits_2_with_a_line(write_config):
    result = _run("gen", "--config", write_config({"key": {"r": 16, "S": 50}}))
    assert result.exit_code == 2
    assert "line" in result.output


def test_eval_is_reproducible(write_config, tmp_path):
    config = write_config()
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run("eval", "--config", config, "--out", a).exit_code == 0
    result = _run("eval", "--config", config, "--out", b)
    assert result.exit_code == 0, result.output
    assert (a / "eval.csv").read_bytes() == (b / "eval.csv").read_bytes()
    table = pd.read_csv(a / "eval.csv")
    assert list(table.columns) == ["attack", "auc", "tpr@1%fpr", "bit_acc", "word_acc", "mean_R_det", "distortion"]
    assert list(table["attack"]) == ["none", "blur(radius=1)"]
    assert table.loc[0, "bit_acc"] == 1.0
    sidecar = json.loads((a / "eval.json").read_text())
    assert len(sidecar["attacks"][0]["trials"]) == 3


def test_seed_override_changes_the_output(write_config, tmp_path):
    config = write_config()
    assert _run("gen", "--config", config, "--out", tmp_path / "a").exit_code == 0
    assert _run("gen", "--config", config, "--out", tmp_path / "b", "--seed", 8).exit_code == 0
    assert (tmp_path / "a" / "image_0000.metr").read_bytes() != (tmp_path / "b" / "image_0000.metr").read_bytes()


def test_tune_writes_one_row_per_candidate(write_config, tmp_path):
    result = _run("tune", "--config", write_config(), "--out", tmp_path / "tune")
    assert result.exit_code == 0, result.output
    trace = pd.read_csv(tmp_path / "tune" / "tune.csv")
    assert list(trace["scaler"]) == [20.0, 40.0, 60.0]
    assert json.loads((tmp_path / "tune" / "tune.json").read_text())["found"] is True


def test_metrpp_table(write_config, tmp_path):
    result = _run("metrpp", "--config", write_config(), "--out", tmp_path / "pp")
    assert result.exit_code == 0, result.output
    table = pd.read_csv(tmp_path / "pp" / "metrpp.csv")
    assert list(table.columns) == ["attack", "metr_bit_acc", "metr_word_acc", "sig_bit_acc", "sig_word_acc",
                                   "metrpp_word_acc"]
    assert table.loc[0, "metrpp_word_acc"] == 1.0


def test_info(write_config):
    result = _run("info", "--config", write_config())
    assert result.exit_code == 0, result.output
    assert "METR CLI Information" in result.output
