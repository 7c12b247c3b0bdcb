import json

import pytest

from multiband_loc import cli
from multiband_loc.experiment import read_table

SMALL = ["--set", "bands.n_subcarriers=16"]


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A built, split database shared by the subcommand tests."""
    d = tmp_path_factory.mktemp("cli")
    assert cli.main(["db", "build", "--out", str(d / "all.db"), "--samples", "6", "--tp-samples", "3", *SMALL]) == 0
    assert cli.main(["db", "split", str(d / "all.db"), "--train-out", str(d / "train.db"),
                     "--test-out", str(d / "test.db")]) == 0
    return d


def test_metrics_crlb_prints_single_value(capsys):
    code, out, _ = run(capsys, "metrics", "crlb", "--beta-hz", "2e7", "--snr-db", "30")
    assert code == 0
    assert float(out.strip()) == pytest.approx(2.84571682857172523511e-3, rel=1e-12)
    assert len(out.strip().split()) == 1


def test_metrics_crlb_spliced(capsys):
    _, out, _ = run(capsys, "metrics", "crlb", "--beta-hz", "2e7", "--snr-db", "30", "--weight", "1")
    assert float(out) == pytest.approx(2.84571682857172523511e-3 / 4, rel=1e-12)


def test_db_info_counts(capsys, workspace):
    code, out, _ = run(capsys, "db", "info", str(workspace / "all.db"))
    info = json.loads(out)
    assert code == 0
    assert info["records"] == 16 * 6 + 11 * 3
    assert info["bands"] == [153, 157, 161]
    assert info["n_subcarriers"] == 16
    assert info["roles"] == {"rp": 96, "tp": 33}


def test_ingest(capsys, tmp_path):
    src = tmp_path / "p.csv"
    rows = ["sample_id,x,y,band_index,antenna,subcarrier,re,im"]
    for band in (153, 157, 161):
        rows += [f"7,1.0,2.0,{band},0,{k},{1 + k * 0.1},{0.5}" for k in range(16)]
    src.write_text("\n".join(rows) + "\n")
    code, out, _ = run(capsys, "db", "ingest", str(src), "--out", str(tmp_path / "p.db"), *SMALL)
    assert code == 0 and json.loads(out) == {"records": 1, "rejected": 0}


def test_predictor_commands(capsys, workspace, tmp_path):
    d = workspace
    code, _, _ = run(capsys, "vae", "train", "--db", str(d / "train.db"), "--target", "2",
                     "--out", str(tmp_path / "v.ckpt"), "--epochs", "2", "--lr", "1e-3", *SMALL)
    assert code == 0
    code, out, _ = run(capsys, "vae", "eval", "--model", str(tmp_path / "v.ckpt"), "--db", str(d / "test.db"))
    assert code == 0 and json.loads(out)["n"] == 33
    code, _, _ = run(capsys, "vae", "predict", "--model", str(tmp_path / "v.ckpt"), "--db", str(d / "test.db"),
                     "--out", str(tmp_path / "pred.csv"))
    prov, rows = read_table(tmp_path / "pred.csv")
    assert code == 0 and prov["format_version"] == "1" and len(rows) == 33 * 16

    code, _, _ = run(capsys, "baseline", "mlp-train", "--db", str(d / "train.db"), "--target", "3",
                     "--out", str(tmp_path / "m.ckpt"), "--epochs", "1", *SMALL)
    assert code == 0
    code, out, _ = run(capsys, "baseline", "eval", "--model", str(tmp_path / "m.ckpt"), "--db", str(d / "test.db"))
    assert code == 0 and json.loads(out)["target_band"] == 3
    code, out, _ = run(capsys, "baseline", "ar-predict", "--db", str(d / "test.db"), "--target", "2", *SMALL)
    assert code == 0 and json.loads(out)["n"] == 33

    code, _, _ = run(capsys, "loc", "train", "--db", str(d / "train.db"), "--out", str(tmp_path / "l.ckpt"),
                     "--epochs", "1", *SMALL)
    assert code == 0
    code, out, _ = run(capsys, "loc", "eval", "--model", str(tmp_path / "l.ckpt"), "--db", str(d / "test.db"),
                       "--predictor", f"2={tmp_path / 'v.ckpt'}", "--predictor", f"3={tmp_path / 'm.ckpt'}",
                       "--json", str(tmp_path / "r.json"), "--csv", str(tmp_path / "r.csv"))
    assert code == 0 and json.loads(out)["n_samples"] == 33
    assert json.loads((tmp_path / "r.json").read_text())["n_samples"] == 33
    code, _, _ = run(capsys, "loc", "predict", "--model", str(tmp_path / "l.ckpt"), "--db", str(d / "test.db"),
                     "--out", str(tmp_path / "xy.csv"))
    assert code == 0 and len(read_table(tmp_path / "xy.csv")[1]) == 33


def test_experiment_dry_run(capsys, tmp_path):
    code, out, _ = run(capsys, "experiment", "run", "--dry-run", "--out", str(tmp_path / "r"))
    assert code == 0 and json.loads(out)["valid"] is True
    assert not (tmp_path / "r").exists()


def test_experiment_run_flags(capsys, tmp_path):
    code, _, _ = run(capsys, "experiment", "run", "--out", str(tmp_path / "r"), "--snr-db", "30",
                     "--schemes", "ar_ekf,passthrough", "--no-figures", "--seed", "5", *SMALL,
                     "--set", "data.rp_samples=4", "--set", "data.tp_samples=2", "--set", "localizer.epochs=1")
    assert code == 0
    prov, _ = read_table(tmp_path / "r" / "tables" / "ccne.csv")
    assert prov["seed"] == "5"
    assert not (tmp_path / "r" / "figures").exists()


def test_exit_codes(capsys, tmp_path, workspace):
    assert run(capsys, "db", "info", str(tmp_path / "nope.db"))[0] == cli.EXIT_MISSING_FILE
    assert run(capsys, "experiment", "run", "--dry-run", "--set", "vae.bogus=1")[0] == cli.EXIT_CONFIG
    bad = tmp_path / "bad.db"
    bad.write_bytes(b"garbage" * 10)
    assert run(capsys, "db", "info", str(bad))[0] == cli.EXIT_FORMAT
    csv_bad = tmp_path / "bad.csv"
    csv_bad.write_text("a,b\n")
    assert run(capsys, "db", "ingest", str(csv_bad), "--out", str(tmp_path / "x.db"))[0] == cli.EXIT_DATA
    code, _, err = run(capsys, "experiment", "run", "--out", str(tmp_path / "f"),
                       "--set", f"experiment.csv={tmp_path / 'missing.csv'}")
    assert code == cli.EXIT_STAGE and "database" in err
    assert (tmp_path / "f" / "FAILED").exists()
    with pytest.raises(SystemExit) as info:
        cli.main(["metrics", "crlb", "--bogus"])
    assert info.value.code == cli.EXIT_USAGE
    codes = {cli.EXIT_ERROR, cli.EXIT_USAGE, cli.EXIT_CONFIG, cli.EXIT_MISSING_FILE, cli.EXIT_FORMAT,
             cli.EXIT_DATA, cli.EXIT_DIVERGED, cli.EXIT_STAGE}
    assert len(codes) == 8
