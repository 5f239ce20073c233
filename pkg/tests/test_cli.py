import json
import time

import numpy as np
import pytest

from diffir import cli
from diffir.checkpoint import from_module, load_checkpoint, save_checkpoint
from diffir.config import load_config
from diffir.training import build_s1

SMALL = {
    "task": "inpainting",
    "seed": 3,
    "data": {"n_train": 8, "n_test": 4, "size": 16},
    "s1": {"steps": 3, "batch_size": 4},
    "s2": {"steps": 3, "batch_size": 4},
}


@pytest.fixture
def conf(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({**SMALL, "out": str(tmp_path / "run")}))
    return path


def _read_metrics(path):
    rows = {}
    for line in path.read_text().splitlines()[2:]:
        name, ps, ss, n = line.split("\t")
        rows[name] = (float(ps), float(ss), int(n))
    return rows


def test_count_prints_tsv(capsys):
    t0 = time.perf_counter()
    assert cli.run(["count", "--task", "inpainting", "--input", "256"]) == 0
    assert time.perf_counter() - t0 < 5
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "variant\tmodule\tparams\tmult_adds"
    for line in lines[1:]:
        tag, name, p, m = line.split("\t")
        assert tag in ("s1", "s2") and int(p) >= 0 and int(m) >= 0
    totals = {l.split("\t")[0]: l.split("\t") for l in lines if "\tTOTAL\t" in l}
    assert int(totals["s2"][3]) > int(totals["s1"][3])


@pytest.mark.parametrize(
    "argv, code",
    [
        (["bogus"], 2),
        ([], 2),
        (["train-s1"], 2),  # --config missing
        (["count", "--input", "60"], 2),
        (["count", "--frobnicate"], 2),
        (["train-s1", "--config", "/nonexistent/c.json"], 2),
    ],
)
def test_usage_errors(argv, code, capsys):
    assert cli.run(argv) == code
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith(f"error\tcode={code}\t")


def test_bad_config_values(tmp_path, capsys):
    p = tmp_path / "c.json"
    for body in ("{not json", json.dumps({"task": "denoise"}), json.dumps({"s1": {"lrr": 1}})):
        p.write_text(body)
        assert cli.run(["eval", "--config", str(p)]) == 2


def test_train_s2_without_stage1_is_io_error(conf, capsys):
    assert cli.run(["train-s2", "--config", str(conf), "--mode", "v3"]) == 4
    assert "train-s1" in capsys.readouterr().err


def test_nan_is_numeric_error(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({**SMALL, "out": str(tmp_path / "run"), "s1": {"steps": 2, "lr": float("inf")}}))
    assert cli.run(["train-s1", "--config", str(p)]) == 3


def test_pipeline_and_run_directory(conf, tmp_path):
    out = tmp_path / "run"
    assert cli.run(["gen-data", "--config", str(conf)]) == 0
    assert len(list((out / "data" / "train").glob("*.png"))) == 8
    assert cli.run(["train-s1", "--config", str(conf)]) == 0
    assert cli.run(["train-s2", "--config", str(conf), "--mode", "v2"]) == 0
    assert cli.run(["train-s2", "--config", str(conf), "--mode", "v3"]) == 0
    assert cli.run(["infer", "--config", str(conf), "--mode", "v3"]) == 0
    assert cli.run(["eval", "--config", str(conf)]) == 0
    for rel in ("config.json", "train_s1.log", "s1/manifest.json", "s1/weights.bin", "metrics_s1.tsv",
                "s2_v3_joint/train.log", "s2_v3_joint/checkpoint/manifest.json", "s2_v3_joint/metrics.tsv",
                "metrics.tsv"):
        assert (out / rel).exists(), rel
    assert len(list((out / "infer" / "v3_joint").glob("*.png"))) == 4
    log = (out / "s2_v3_joint" / "train.log").read_text().splitlines()
    assert len(log) == 3 and len(log[0].split("\t")) == 5
    head = (out / "metrics.tsv").read_text().splitlines()
    assert head[0].startswith("# ssim window=11 sigma=1.5 K1=0.01 K2=0.03")
    assert set(_read_metrics(out / "metrics.tsv")) == {"copy_input", "s1", "s2_v2_traditional", "s2_v3_joint"}

    # v2 leaves DIRformer identical to the stage-1 input
    s1 = load_checkpoint(out / "s1").tensors
    s2 = load_checkpoint(out / "s2_v2_traditional" / "checkpoint").tensors
    for k, v in s1.items():
        if k.startswith("dirformer."):
            assert np.array_equal(v, s2[k])


def test_rerun_is_byte_identical(conf, tmp_path):
    out = tmp_path / "run"
    snaps = []
    for _ in range(2):
        assert cli.run(["train-s1", "--config", str(conf)]) == 0
        assert cli.run(["train-s2", "--config", str(conf), "--mode", "v4"]) == 0
        d = out / "s2_v4_joint_noise"
        snaps.append([p.read_bytes() for p in (out / "s1/weights.bin", out / "s1/manifest.json", out / "metrics_s1.tsv",
                                               d / "checkpoint/weights.bin", d / "checkpoint/manifest.json",
                                               d / "metrics.tsv")])
        (out / "train_s1.log").unlink()
        (d / "train.log").unlink()
    assert snaps[0] == snaps[1]


def test_eval_identity_restorer_equals_copy_baseline(conf, tmp_path):
    cfg = load_config(conf)
    model = build_s1(cfg.model, 0)
    model.dirformer.zero_output()
    out = tmp_path / "run"
    save_checkpoint(from_module(model, config={"model": cfg.model.to_dict()}, stage="s1"), out / "s1")
    assert cli.run(["eval", "--config", str(conf)]) == 0
    rows = _read_metrics(out / "metrics.tsv")
    assert rows["s1"] == rows["copy_input"]


def test_seed_and_out_overrides(conf, tmp_path):
    other = tmp_path / "elsewhere"
    assert cli.run(["eval", "--config", str(conf), "--seed", "11", "--out", str(other)]) == 0
    resolved = json.loads((other / "config.json").read_text())
    assert resolved["seed"] == 11 and resolved["out"] == str(other)


def test_sweep_t(conf, tmp_path):
    assert cli.run(["sweep-t", "--config", str(conf), "--t", "1,2"]) == 0
    lines = (tmp_path / "run" / "sweep_t.tsv").read_text().splitlines()
    assert lines[0].split("\t")[0] == "T" and len(lines) == 3
    assert [l.split("\t")[2] for l in lines[1:]] == ["pass", "pass"]
    assert cli.run(["sweep-t", "--config", str(conf), "--t", "1,x"]) == 2


def test_shipped_config_loads():
    from pathlib import Path

    cfg = load_config(Path(__file__).parent.parent / "configs" / "desk_inpainting.json")
    assert cfg.task == "inpainting" and cfg.s1.steps == 2000 and cfg.s2.mode == "v3_joint"
