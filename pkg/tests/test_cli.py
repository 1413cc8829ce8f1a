import json

import pytest

from attacksearch.cli import main
from attacksearch.model_io import load_dataset, read_header
from attacksearch.search import fast_nondominated_sort
from attacksearch.sequence import sequence_from_json


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", "--out", str(d / "data"), "--n-train", "600", "--n-test", "120"]) == 0
    args = ["--train", str(d / "data/train.bin"), "--test", str(d / "data/test.bin"), "--epochs", "8"]
    assert main(["train-victim", *args, "--out", str(d / "std.bin")]) == 0
    assert main(["train-victim", *args, "--out", str(d / "at.bin"), "--defense", "pgd-at"]) == 0
    return d


def _common(work, model="at.bin"):
    return ["--model", str(work / model), "--data", str(work / "data/test.bin")]


def test_gen_data_contract(work, tmp_path):
    data = load_dataset(work / "data/train.bin")
    assert data.images.min() >= 0 and data.images.max() <= 1 and data.dim == 64 and data.n_classes == 10
    counts = [int((data.labels == k).sum()) for k in range(10)]
    assert max(counts) <= 1.1 * 60 and min(counts) >= 0.9 * 60
    assert main(["gen-data", "--out", str(tmp_path / "again"), "--n-train", "600", "--n-test", "120"]) == 0
    for name in ("train.bin", "test.bin", "metadata.json"):
        assert (tmp_path / "again" / name).read_bytes() == (work / "data" / name).read_bytes()
    meta = json.loads((work / "data/metadata.json").read_text())["meta"]
    assert {"seed", "config_hash", "version"} <= set(meta)


def test_train_reports(work):
    std = json.loads((work / "std.report.json").read_text())
    at = json.loads((work / "at.report.json").read_text())
    assert "clean_accuracy" in std and std["meta"]["seed"] == 0
    assert at["defense"] == "pgd-at" and read_header(work / "at.bin")["defense"] == "pgd-at"


def test_search_outputs(work):
    out = work / "run"
    assert main(["search", *_common(work), "--out", str(out), "--population", "6", "--generations", "2"]) == 0
    pareto = json.loads((out / "pareto.json").read_text())
    for phase in ("rough", "accurate"):
        pts = [(p["robust_accuracy"], p["cost_units"]) for p in pareto["archive"]
               if p["evaluator"] == phase and p["front"] == 1]
        assert pts and fast_nondominated_sort(pts) == [list(range(len(pts)))]
    final = (out / "final_attack.json").read_text()
    seq = sequence_from_json(final)
    assert json.loads(seq.to_json())["cells"] == json.loads(final)["cells"]
    log = json.loads((out / "run_log.json").read_text())["log"]
    assert {e["phase"] for e in log} == {"rough", "accurate"}


def test_full_scale_defaults_echoed(work, capsys):
    assert main(["search", *_common(work), "--out", str(work / "p"), "--preset", "full", "--generations", "0",
                 "--population", "4", "--show-config"]) == 0
    cfg = json.loads(capsys.readouterr().out.split("\n'A'")[0])["search"]
    assert cfg["crossover_rate"] == 0.8 and cfg["mutation_rate"] == 0.6


def test_identity_attack_gives_clean_accuracy(work):
    attack = work / "identity.json"
    attack.write_text(json.dumps({"norm": "linf", "eps_max": 0.0, "cells": [
        {"A": "PGD-LinfAttack", "L": "CE", "M": 0.0, "I": 50, "R": 0}]}))
    for name in ("std", "at"):
        assert main(["eval-attack", *_common(work, f"{name}.bin"), "--attack", str(attack),
                     "--out", str(work / f"id_{name}")]) == 0
        rep = json.loads((work / f"id_{name}.json").read_text())
        clean = json.loads((work / f"{name}.report.json").read_text())["clean_accuracy"]
        assert rep["robust_accuracy"] == clean


def test_transfer_and_norm_mismatch(work):
    listing = work / "pgd.txt"
    listing.write_text("{'A': 'PGD-LinfAttack', 'L': 'CE', 'M': 0.031, 'I': 25, 'R': 0}")
    for name in ("std", "at"):
        assert main(["eval-attack", *_common(work, f"{name}.bin"), "--attack", str(listing), "--norm", "linf",
                     "--out", str(work / f"tr_{name}")]) == 0
    assert main(["eval-attack", *_common(work), "--attack", str(listing), "--norm", "l2",
                 "--out", str(work / "bad")]) == 1


@pytest.mark.parametrize("cells,rows", [(3, 6), (4, 24)])
def test_restart_ablation_rows(work, cells, rows):
    attack = work / f"base{cells}.txt"
    cell = "{'A': 'MT-LinfAttack', 'L': 'CE', 'M': 0.031, 'I': 25, 'R': 0}"
    attack.write_text(", ".join([cell] * cells))
    out = work / f"abl{cells}.csv"
    assert main(["restart-ablation", *_common(work), "--attack", str(attack), "--norm", "linf",
                 "--out", str(out)]) == 0
    lines = out.read_text().strip().split("\n")
    assert lines[0].startswith("# seed=0") and len(lines) == 2 + rows


def test_rank_check_report(work):
    out = work / "rank.json"
    assert main(["rank-check", *_common(work), "--out", str(out), "--n-attacks", "6", "--n-seeds", "2",
                 "--rough-size", "20"]) == 0
    rep = json.loads(out.read_text())
    assert len(rep["per_seed"]) == 2 and -1 <= rep["mean"]["tau_cost_loss_sorted"] <= 1


def test_config_file_and_exit_codes(work, tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[common]\nseed = 3\n[gen-data]\nn_train = 40\nn_test = 20\n")
    assert main(["gen-data", "--config", str(ini), "--out", str(tmp_path / "d")]) == 0
    meta = json.loads((tmp_path / "d/metadata.json").read_text())
    assert meta["n_train"] == 40 and meta["meta"]["seed"] == 3
    assert main(["gen-data", "--config", str(ini), "--out", str(tmp_path / "d2"), "--n-train", "30"]) == 0
    assert json.loads((tmp_path / "d2/metadata.json").read_text())["n_train"] == 30
    ini.write_text("[gen-data]\nbogus = 1\n")
    assert main(["gen-data", "--config", str(ini), "--out", str(tmp_path / "d3")]) == 1
    assert main(["search", "--model", "missing.bin", "--data", "x", "--out", str(tmp_path)]) == 1
    assert main(["nonsense"]) == 1
    assert main(["search", *_common(work), "--out", str(tmp_path / "s"), "--max-cells", "0"]) == 1
    assert main(["search", *_common(work), "--out", str(tmp_path / "s"), "--crossover-rate", "2"]) == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_runtime_failure_exits_2(work, tmp_path):
    args = ["--train", str(work / "data/train.bin"), "--test", str(work / "data/test.bin"), "--epochs", "2"]
    assert main(["train-victim", *args, "--lr", "1e300", "--activation", "relu", "--out", str(tmp_path / "m.bin")]) == 2


def test_help_lists_subcommands(capsys):
    assert main(["--help"]) == 0
    out = capsys.readouterr().out
    for cmd in ("gen-data", "train-victim", "search", "eval-attack", "restart-ablation", "rank-check"):
        assert cmd in out
