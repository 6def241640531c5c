import csv
import json
import subprocess
import sys

import pytest

from hcvae.cli import main
from hcvae.experiments import benchmark_spec
from hcvae.training import load_checkpoint

FAST = ["--epochs", "2", "--batch", "64", "--hidden-dim", "16", "--n-hidden", "1", "--latent-dim", "2"]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = benchmark_spec(1).to_dict()
    spec["clip_seconds"] = 0.5
    (root / "spec.json").write_text(json.dumps(spec))
    assert main(["synth", str(root / "spec.json"), str(root / "data"), "--train", "3",
                 "--test", "2", "--anomalies", "2"]) == 0
    return root


@pytest.fixture(scope="module")
def model(corpus):
    out = corpus / "none.ckpt"
    assert main(["train", str(corpus / "data/train"), str(out), "--mode", "none", *FAST]) == 0
    return out


def error_line(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    return err[0]


def test_pipeline_smoke(corpus, model, capsys):
    loss = list(csv.reader(open(corpus / "none.loss.csv")))
    assert loss[0] == ["epoch", "loss", "recon", "kl"] and len(loss) == 4
    report = corpus / "report.csv"
    assert main(["eval", str(model), str(corpus / "data/test"), str(report),
                 "--scores", str(corpus / "scores.csv")]) == 0
    rows = list(csv.DictReader(open(report)))
    assert len(rows) == 5
    for row in rows:
        assert 0.0 <= float(row["auc_paper"]) <= 1.0 and 0.0 <= float(row["auc_rank"]) <= 1.0
    assert capsys.readouterr().out == report.read_text()
    assert len(list(csv.reader(open(corpus / "scores.csv")))) == 1 + 16


def test_score_prints_one_line(corpus, model, capsys):
    wav = corpus / "data/test/fan/id_00/normal/normal_000003.wav"
    assert main(["score", str(model), str(wav), "--type", "fan", "--id", "id_00"]) == 0
    path, t, i, score = capsys.readouterr().out.strip().split(",")
    assert (path, t, i) == (str(wav), "fan", "id_00") and float(score) > 0


def test_export_latent(corpus, model):
    out = corpus / "latent.csv"
    assert main(["export-latent", str(model), str(corpus / "data/test"), str(out)]) == 0
    assert next(csv.reader(open(out))) == ["clip_id", "frame_index", "mu_1", "mu_2"]


def test_finetune_and_init_keep_mode(corpus, model):
    out = corpus / "ft.ckpt"
    assert main(["finetune", str(model), str(corpus / "data/train"), str(out), "--epochs", "1"]) == 0
    assert load_checkpoint(out).metadata["warm_start"] is True
    out2 = corpus / "init.ckpt"
    assert main(["train", str(corpus / "data/train"), str(out2), "--init", str(model), "--epochs", "1"]) == 0
    assert load_checkpoint(out2).mode.value == "none"


def test_same_inputs_same_outputs(corpus):
    outs = []
    for name in ("r1.ckpt", "r2.ckpt"):
        assert main(["train", str(corpus / "data/train"), str(corpus / name), "--mode", "both", *FAST]) == 0
        outs.append((corpus / name).read_bytes())
    assert outs[0] == outs[1]


def test_config_file_and_flag_precedence(corpus, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"mode": "ci", "epochs": 1, "seed": 3, "hidden_dim": 16, "n_hidden": 1}))
    out = tmp_path / "m.ckpt"
    assert main(["train", str(corpus / "data/train"), str(out), "--config", str(cfg), "--seed", "5"]) == 0
    ckpt = load_checkpoint(out)
    assert ckpt.mode.value == "ci" and ckpt.metadata["seed"] == 5 and ckpt.metadata["epochs_run"] == 1
    assert ckpt.config.hidden_dim == 16


def test_unknown_config_key(corpus, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epochz": 1}))
    assert main(["train", str(corpus / "data/train"), str(tmp_path / "m.ckpt"), "--config", str(cfg)]) == 2
    assert error_line(capsys).startswith("error: ConfigurationError:")


def test_missing_id_labels_rejected(tmp_path, corpus, capsys):
    flat = tmp_path / "flat" / "fan" / "normal"
    flat.mkdir(parents=True)
    src = next((corpus / "data/train/fan/id_00/normal").glob("*.wav"))
    (flat / "a.wav").write_bytes(src.read_bytes())
    code = main(["train", str(tmp_path / "flat"), str(tmp_path / "m.ckpt"), "--mode", "both", *FAST])
    assert code == 2
    assert error_line(capsys).startswith("error: ConfigurationError:")
    assert not (tmp_path / "m.ckpt").exists()


def test_mode_guard_exit_code(corpus, model, capsys):
    wav = corpus / "data/test/fan/id_00/normal/normal_000003.wav"
    assert main(["score", str(model), str(wav), "--type", "fan", "--id", "id_00", "--mode", "both"]) == 4
    assert error_line(capsys).startswith("error: ModeMismatchError:")


def test_bad_checkpoint_and_missing_wav(corpus, model, tmp_path, capsys):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint")
    assert main(["eval", str(bad), str(corpus / "data/test"), str(tmp_path / "r.csv")]) == 4
    assert error_line(capsys).startswith("error: BadMagicError:")
    assert main(["score", str(model), str(tmp_path / "none.wav"), "--type", "fan", "--id", "id_00"]) == 3
    assert error_line(capsys).startswith("error: WavNotFoundError:")


def test_gradcheck_subprocess():
    proc = subprocess.run([sys.executable, "-m", "hcvae", "gradcheck", "--seed", "1"],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0, proc.stderr
    fields = dict(kv.split("=") for kv in proc.stdout.split() if "=" in kv)
    assert float(fields["err64"]) < 1e-5 and float(fields["err32"]) < 1e-3
    assert proc.stdout.strip().endswith("ok")


def test_gradcheck_reports_failure(capsys):
    assert main(["gradcheck", "--tol32", "1e-12"]) == 5
    assert "FAIL" in capsys.readouterr().out
