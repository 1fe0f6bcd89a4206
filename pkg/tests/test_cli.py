import csv
import io
import json

import numpy as np
import pytest

from graphsteal import cli
from graphsteal.gnn import load_checkpoint, save_checkpoint
from graphsteal.stats import STAT_COLUMNS

SMALL = ("dataset: {num_graphs: 50, classes: 2, nodes: [8, 11], seed: 2}\n"
         "model: {hidden_width: 8, num_layers: 2}\n"
         "target: {epochs: 10}\n"
         "loop: {rounds: 1, pretrain_epochs: 3, epochs_per_round: 2}\n"
         "seeds: [0]\n")


@pytest.fixture
def exp(tmp_path):
    cfg = tmp_path / "exp.yaml"
    cfg.write_text(SMALL)
    out = tmp_path / "out"
    assert cli.main(["train-target", "--config", str(cfg), "--out", str(out)]) == 0
    return cfg, out


def rows(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


def test_precedence_defaults_yaml_flags(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("attack: {alpha: 0.2}\nloop: {rounds: 4}\n")
    args = cli.build_parser().parse_args(["attack", "--config", str(cfg), "--rounds", "7", "--out", "x"])
    spec = cli.load_spec(args)
    assert spec["attack"]["alpha"] == 0.2
    assert spec["loop"]["rounds"] == 7
    assert spec["attack"]["gamma"] == cli.DEFAULTS["attack"]["gamma"]


@pytest.mark.parametrize("text", ["bogus: 1\n", "attack: {alpha: 3.0}\n", "seeds: []\n",
                                  "attack: {strategies: [nope]}\n", "- a list\n", "a: [unclosed\n"])
def test_bad_config_exits_2(tmp_path, capsys, text):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(text)
    assert cli.main(["attack", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "error:" in capsys.readouterr().err


def test_missing_paths_are_named(tmp_path, capsys):
    missing = tmp_path / "nowhere"
    cfg = tmp_path / "c.yaml"
    cfg.write_text(f"dataset: {{source: tu, path: {missing}}}\n")
    assert cli.main(["gen-dataset", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert str(missing) in capsys.readouterr().err
    assert cli.main(["attack", "--config", str(tmp_path / "absent.yaml")]) == 2
    assert cli.main(["attack", "--out", str(tmp_path / "empty")]) == 2
    assert "target.npz" in capsys.readouterr().err


def test_runtime_failure_exits_3(tmp_path, capsys):
    (tmp_path / "corpus").mkdir()
    assert cli.main(["stats", str(tmp_path / "corpus"), "--out", str(tmp_path)]) == 3
    assert "RuntimeError" in capsys.readouterr().err


def test_gen_dataset_round_trips(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(SMALL)
    assert cli.main(["gen-dataset", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    reload = tmp_path / "r.yaml"
    reload.write_text(f"dataset: {{source: tu, path: {tmp_path / 'dataset'}, name: DS, split_seed: 1}}\n")
    args = cli.build_parser().parse_args(["gen-dataset", "--config", str(reload)])
    ds = cli.build_dataset(cli.load_spec(args))
    assert len(ds) == 50 and ds.num_classes == 2
    assert len(json.loads((tmp_path / "dataset" / "splits.json").read_text())) == 50


def test_checkpoint_is_bit_exact(exp, tmp_path):
    _, out = exp
    model = load_checkpoint(out / "target.npz")
    save_checkpoint(model, tmp_path / "again.npz")
    again = load_checkpoint(tmp_path / "again.npz")
    assert model.config == again.config
    for k, v in model.params.items():
        assert np.array_equal(v, again.params[k]) and v.dtype == again.params[k].dtype
    metrics = json.loads((out / "target_metrics.json").read_text())
    assert 0.0 <= metrics["eval_accuracy"] <= 1.0


def test_attack_outputs(exp):
    cfg, out = exp
    assert cli.main(["attack", "--config", str(cfg), "--out", str(out), "--seed-list", "0,1"]) == 0
    summary = rows(out / "attack" / "summary.csv")
    assert [r["strategy"] for r in summary] == ["msa-real", "msa-au", "msa-ad", "msa-aud"]
    assert all(r["runs"] == "2" for r in summary)
    per_round = rows(out / "attack" / "rounds.csv")
    assert list(per_round[0]) == list(cli.CSV_COLUMNS)
    assert len(per_round) == 2 * (1 + 2 + 2 + 2)
    assert (out / "attack" / "msa-au" / "seed1.json").is_file()
    first = (out / "attack" / "rounds.csv").read_bytes()
    assert cli.main(["attack", "--config", str(cfg), "--out", str(out), "--seed-list", "0,1", "--jobs", "2"]) == 0
    assert (out / "attack" / "rounds.csv").read_bytes() == first


def test_stats_zero_row_for_real_copies(exp):
    cfg, out = exp
    assert cli.main(["attack", "--config", str(cfg), "--out", str(out), "--strategy", "msa-ad,random"]) == 0
    assert cli.main(["stats", "--out", str(out)]) == 0
    table = rows(out / "stats.csv")
    assert list(table[0]) == ["strategy", "pairs", *STAT_COLUMNS]
    corpus = out / "attack" / "corpus"
    lines = (corpus / "msa-ad.jsonl").read_text().splitlines()
    copies = [json.dumps({**json.loads(l), "strategy": "copy", "generated": json.loads(l)["original"]})
              for l in lines]
    (corpus / "copy.jsonl").write_text("\n".join(copies) + "\n")
    table = {r["strategy"]: r for r in cli.stats_table(corpus)}
    assert all(table["copy"][c] == 0.0 for c in STAT_COLUMNS)
    assert table["copy"]["pairs"] == len(lines)


def test_sweep_groups_values(exp):
    cfg, out = exp
    assert cli.main(["sweep", "gamma", "0.1,0.3", "--config", str(cfg), "--out", str(out),
                     "--strategy", "msa-ad"]) == 0
    table = rows(out / "sweep" / "gamma" / "sweep.csv")
    assert [r["value"] for r in table] == ["0.1", "0.3"]
    assert list(table[0]) == list(cli.SWEEP_COLUMNS)
    assert cli.main(["sweep", "pooling", "sum", "--config", str(cfg), "--out", str(out),
                     "--strategy", "msa-real"]) == 0
    assert (out / "sweep" / "pooling" / "target-sum.npz").is_file()
    assert cli.main(["sweep", "gamma", "", "--config", str(cfg), "--out", str(out)]) == 2
