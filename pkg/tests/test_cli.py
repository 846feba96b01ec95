from __future__ import annotations

import hashlib
import json
import socket
from pathlib import Path

import numpy as np
import pytest

from alcor import tensor_io
from alcor.cli import main


def tree_hash(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture
def synth_dir(tmp_path):
    data = tmp_path / "data"
    assert main(["synth", "--out", str(data), "--images", "3", "--height", "16",
                 "--width", "16", "--classes", "3", "--noise", "0.5",
                 "--grid", "4", "--seed", "9"]) == 0
    return data


def test_validate_clean_exit_zero(synth_dir, capsys):
    assert main(["validate", str(synth_dir / "manifest.json")]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["clean"] is True


def test_validate_violations_exit_one(synth_dir, capsys):
    bad = np.full((16, 16), 77, dtype=np.uint16)
    tensor_io.write_tensor(synth_dir / "labels_pseudo" / "img_000.alct", bad)
    assert main(["validate", str(synth_dir / "manifest.json")]) == 1
    doc = json.loads(capsys.readouterr().out)
    assert any(v["kind"] == "label_out_of_range" for v in doc["violations"])


def test_validate_missing_manifest_exit_two(tmp_path):
    assert main(["validate", str(tmp_path / "nope.json")]) == 2


def test_validate_unparseable_manifest_exit_two(tmp_path):
    bad = tmp_path / "manifest.json"
    bad.write_text("{not json")
    assert main(["validate", str(bad)]) == 2


def test_run_simulate_and_metrics_and_export(synth_dir, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--manifest", str(synth_dir / "manifest.json"),
                 "--out", str(out), "-B", "8", "-T", "2", "--seed", "9"]) == 0
    assert (out / "queries.jsonl").exists()
    assert (out / "final" / "manifest.json").exists()
    assert (out / "metrics.csv").exists()
    capsys.readouterr()

    assert main(["metrics", "--run-dir", str(out)]) == 0
    rounds = json.loads(capsys.readouterr().out)
    assert [r["round"] for r in rounds] == [1, 2]

    target = tmp_path / "exported"
    assert main(["export", "--run-dir", str(out), "--out", str(target)]) == 0
    assert (target / "manifest.json").exists()
    assert sorted(p.name for p in (target / "labels").glob("*.alct")) == \
        ["img_000.alct", "img_001.alct", "img_002.alct"]


def test_run_is_deterministic_via_cli(synth_dir, tmp_path):
    args = ["run", "--manifest", str(synth_dir / "manifest.json"),
            "-B", "8", "-T", "2", "--seed", "7"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert tree_hash(tmp_path / "a") == tree_hash(tmp_path / "b")


def test_run_resume_flag(synth_dir, tmp_path):
    args = ["run", "--manifest", str(synth_dir / "manifest.json"),
            "-B", "4", "--seed", "3", "--out", str(tmp_path / "r")]
    assert main(args + ["-T", "2"]) == 0
    # continue two more rounds from the checkpoint
    assert main(args + ["-T", "4", "--resume"]) == 0
    rounds = sorted(p.name for p in (tmp_path / "r" / "rounds").iterdir())
    assert rounds == ["round_001", "round_002", "round_003", "round_004"]


def test_metrics_missing_outputs(tmp_path):
    assert main(["metrics", "--run-dir", str(tmp_path)]) == 1


def test_export_requires_finished_run(tmp_path):
    assert main(["export", "--run-dir", str(tmp_path), "--out",
                 str(tmp_path / "out")]) == 1


def test_cost_table_csv(capsys):
    assert main(["cost", "--l-values", "2,20", "--p-values", "0,0.5"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "L,p,classification_bits,correction_bits,ratio,saving_rate"
    row_20_half = next(l for l in lines if l.startswith("20,0.5"))
    assert "0.615689" in row_20_half


def test_config_file_merging(synth_dir, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({
        "manifest": str(synth_dir / "manifest.json"),
        "batch_size": 4,
        "rounds": 1,
        "seed": 11,
    }))
    out = tmp_path / "from_config"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    state = json.loads((out / "rounds" / "round_001" / "state.json").read_text())
    assert len(state["batch"]) == 4

    # explicit flag beats the file
    out2 = tmp_path / "flag_wins"
    assert main(["run", "--config", str(cfg), "--out", str(out2), "-B", "2"]) == 0
    state2 = json.loads((out2 / "rounds" / "round_001" / "state.json").read_text())
    assert len(state2["batch"]) == 2


def test_config_file_toml(synth_dir, tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text(
        f'manifest = "{synth_dir / "manifest.json"}"\n'
        "batch_size = 4\nrounds = 1\nseed = 11\n")
    out = tmp_path / "from_toml"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "final").is_dir()


def test_unknown_config_key_exit_two(synth_dir, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"manifest": str(synth_dir / "manifest.json"),
                               "bogus_knob": 1}))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 2


def test_run_without_manifest_exit_two(tmp_path):
    assert main(["run", "--out", str(tmp_path / "x")]) == 2


def test_serve_port_in_use_exit_one(synth_dir, tmp_path):
    blocker = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    blocker.bind(("127.0.0.1", 0))
    blocker.listen(1)
    port = blocker.getsockname()[1]
    try:
        code = main(["run", "--manifest", str(synth_dir / "manifest.json"),
                     "--out", str(tmp_path / "srv"), "--mode", "serve",
                     "--listen", f"127.0.0.1:{port}"])
    finally:
        blocker.close()
    assert code == 1


def test_help_lists_all_subcommands(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for name in ("validate", "synth", "run", "metrics", "cost", "export"):
        assert name in out


def test_run_help_documents_defaults(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for flag in ("--kind", "--epsilon", "--batch-size", "--rounds", "--predictor",
                 "--expand-confirmed", "--residual", "--listen", "--resume"):
        assert flag in out
    assert "default" in out


def test_usage_error_exit_two():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
