import csv

import numpy as np
import pytest

from pefad import cli, data

TINY = """
seed = 1
bench.n_clients = 2
bench.train_steps = 320
bench.test_steps = 160
bench.anomaly_rate = 0.05
backbone.d_model = 8
backbone.n_layers = 2
backbone.n_heads = 2
backbone.d_ff = 16
backbone.l_p = 4
backbone.window = 16
backbone.tune_last_k = 1
vae.epochs = 2
train.learning_rate = 0.05
train.global_rounds = 2
train.local_epochs = 1
train.lambda = 1.0
detection.r = 5
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(TINY)
    return p


def run(cfg_path, out, *args):
    return cli.main([args[0], "--config", str(cfg_path), "--out", str(out), *args[1:]])


def test_run_is_reproducible(cfg_path, tmp_path, capsys):
    for name in ("a", "b"):
        assert run(cfg_path, tmp_path / name, "run") == 0
    for f in ("metrics.csv", "ledger.csv", "losses.csv", "shared.csv", "checkpoint.bin"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    rows = list(csv.DictReader((tmp_path / "a" / "metrics.csv").open()))
    assert [r["client"] for r in rows] == ["0", "1", "weighted"]
    assert "weighted" in capsys.readouterr().out


def test_seed_override_changes_outputs(cfg_path, tmp_path):
    assert run(cfg_path, tmp_path / "a", "gen-data") == 0
    assert run(cfg_path, tmp_path / "b", "gen-data", "--seed", "2") == 0
    f = "data/client_0_train.csv"
    assert (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()


def test_missing_key_exits_nonzero(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text(TINY.replace("train.learning_rate = 0.05\n", ""))
    assert run(p, tmp_path / "o", "run") != 0
    assert "learning_rate" in capsys.readouterr().err


def test_train_without_shared_dataset(cfg_path, tmp_path, capsys):
    out = tmp_path / "o"
    assert run(cfg_path, out, "gen-data") == 0
    assert run(cfg_path, out, "train") != 0
    assert "shared.csv" in capsys.readouterr().err
    assert run(cfg_path, out, "train", "--variant", "w/o_ppds") == 0


def test_stage_errors_name_missing_files(cfg_path, tmp_path, capsys):
    out = tmp_path / "o"
    assert run(cfg_path, out, "synth-shared") != 0
    err = capsys.readouterr().err
    assert "synth-shared" in err and "client_0_train.csv" in err
    assert run(cfg_path, out, "report") != 0
    assert "metrics.csv" in capsys.readouterr().err


def test_staged_pipeline_and_untrained_evaluation(cfg_path, tmp_path, capsys):
    out = tmp_path / "o"
    for stage in ("gen-data", "synth-shared", "train"):
        assert run(cfg_path, out, stage) == 0
    assert run(cfg_path, out, "evaluate", "--checkpoint", str(out / "checkpoint_init.bin")) == 0
    rows = list(csv.DictReader((out / "metrics.csv").open()))
    assert all(0 <= float(r["f1"]) <= 1 and 0 <= float(r["auc"]) <= 1 for r in rows)
    assert run(cfg_path, out, "report") == 0
    assert (out / "report.txt").read_text() == capsys.readouterr().out


def test_variant_tags_rows(cfg_path, tmp_path):
    out = tmp_path / "o"
    assert run(cfg_path, out, "run", "--variant", "w/o_adms") == 0
    rows = list(csv.DictReader((out / "metrics.csv").open()))
    assert {r["variant"] for r in rows} == {"w/o_adms"}


def test_report_percentages(tmp_path):
    (tmp_path / "metrics.csv").write_text(
        ",".join(cli.METRIC_COLUMNS) + "\npefad,0,100,0.9134,0.5,0.6,0.99995,1.0,1,2,3,4\n")
    text = cli.report(tmp_path)
    assert "91.34" in text and "50.00" in text and "60.00" in text and "100.00" in text
    assert cli.pct(0.9134) == "91.34"


def test_csv_directory_ingestion(cfg_path, tmp_path):
    src = tmp_path / "csv"
    src.mkdir()
    rng = np.random.default_rng(0)
    for i in range(2):
        labels = np.zeros(160, int)
        labels[50:53] = 1
        ds = data.RawDataset(rng.normal(size=(320, 1)), rng.normal(size=(160, 1)), labels)
        data.save_csv(ds, src / f"client_{i}_train.csv", src / f"client_{i}_test.csv",
                      src / f"client_{i}_labels.csv")
    cfg_path.write_text(TINY + f"csv_dir = {src}\n")
    out = tmp_path / "o"
    assert run(cfg_path, out, "gen-data") == 0
    assert (out / "data" / "client_1_labels.csv").read_bytes() == (src / "client_1_labels.csv").read_bytes()
