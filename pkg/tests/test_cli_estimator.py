import json

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from hifiseg.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_IO, EXIT_OK, main
from hifiseg.data import SynthConfig, save_dataset, stack_batch, synth_generate
from hifiseg.estimator import HiFiSegSegmenter, check_images, check_masks
from hifiseg.metrics import MetricsReport


def test_train_then_eval(tmp_path):
    run = tmp_path / "run"
    assert main(["train", "--synth", "6", "--steps", "4", "--ckpt-every", "2", "--out", str(run)]) == EXIT_OK
    assert (run / "ckpt_000002.hifi").exists() and (run / "final.hifi").exists()
    lines = (run / "loss.csv").read_text().splitlines()
    assert lines[0] == "step,loss,bce1,iou1,bce2,iou2" and len(lines) == 5
    rc = json.loads((run / "run_config.json").read_text())
    assert rc["train"]["batch_size"] == 4 and rc["train"]["lr"] == 3e-3 and "git" in rc

    ev = tmp_path / "ev"
    assert main(["eval", "--ckpt", str(run / "final.hifi"), "--synth", "3", "--out", str(ev),
                 "--dump-masks", "--score-head", "mean"]) == EXIT_OK
    rep = MetricsReport.from_csv(ev / "metrics.csv")
    summary = json.loads((ev / "metrics.json").read_text())
    assert summary["mdice"] == pytest.approx(np.mean(rep.dice))
    assert len(list((ev / "masks").glob("*.png"))) == 3


def test_base_preset_defaults(tmp_path, monkeypatch):
    from hifiseg import cli

    class Stop(Exception):
        pass

    seen = {}

    def fake_train(cfg, samples, settings, out_dir):
        seen["settings"], seen["cfg"] = settings, cfg
        raise Stop

    monkeypatch.setattr(cli, "train", fake_train)
    with pytest.raises(Stop):
        main(["train", "--preset", "base", "--synth", "1", "--out", str(tmp_path)])
    s = seen["settings"]
    assert s.lr == 1e-4 and s.weight_decay == 1e-4 and s.batch_size == 16
    assert seen["cfg"].input_hw == 352 and seen["cfg"].encoder.channels == (64, 128, 320, 512)


def test_same_seed_same_loss_log(tmp_path):
    for name in ("a", "b"):
        main(["train", "--synth", "4", "--steps", "3", "--seed", "9", "--out", str(tmp_path / name)])
    assert (tmp_path / "a" / "loss.csv").read_bytes() == (tmp_path / "b" / "loss.csv").read_bytes()


def test_env_seed_override(tmp_path, monkeypatch):
    monkeypatch.setenv("HIFI_SEED", "11")
    main(["train", "--synth", "2", "--steps", "1", "--out", str(tmp_path)])
    assert json.loads((tmp_path / "run_config.json").read_text())["seed"] == 11
    monkeypatch.setenv("HIFI_SEED", "x")
    assert main(["train", "--synth", "2", "--steps", "1", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_data_directory(tmp_path):
    save_dataset(synth_generate(SynthConfig(), 3), tmp_path / "d")
    assert main(["train", "--data", str(tmp_path / "d"), "--steps", "1", "--out", str(tmp_path / "r")]) == EXIT_OK


def test_error_exit_codes(tmp_path):
    (tmp_path / "empty" / "images").mkdir(parents=True)
    (tmp_path / "empty" / "masks").mkdir()
    assert main(["train", "--data", str(tmp_path / "empty"), "--out", str(tmp_path / "r")]) == EXIT_CONFIG
    assert main(["eval", "--ckpt", str(tmp_path / "missing.hifi"), "--synth", "1",
                 "--out", str(tmp_path / "e")]) == EXIT_IO
    (tmp_path / "bad.hifi").write_bytes(b"junk")
    assert main(["eval", "--ckpt", str(tmp_path / "bad.hifi"), "--synth", "1",
                 "--out", str(tmp_path / "e")]) == EXIT_CONFIG
    with pytest.raises(SystemExit):
        main(["train", "--out", str(tmp_path)])


def test_gradcheck_and_negative_control(capsys):
    assert main(["gradcheck", "--samples", "5"]) == EXIT_OK
    assert "FAIL" not in capsys.readouterr().out
    assert main(["gradcheck", "--samples", "5", "--corrupt", "gelu"]) == EXIT_FAIL
    out = capsys.readouterr().out
    assert "gelu" in out and "FAIL" in out


def test_ablate_table(tmp_path):
    variants = ["full", "w/o GLIM", "w/o SAM", "w/o Conv", "w/o GAP"]
    assert main(["ablate", "--synth", "2", "--steps", "1", "--out", str(tmp_path), "--variants", *variants]) == EXIT_OK
    table = (tmp_path / "ablation.md").read_text().strip().splitlines()
    assert len(table) == 2 + len(variants)
    rows = (tmp_path / "ablation.csv").read_text().splitlines()[1:]
    params = {r.split(",")[0]: int(r.split(",")[2]) for r in rows}
    assert params["full"] > params["w/o GLIM"]


class TestEstimator:
    def _data(self, n=4):
        images, masks = stack_batch(synth_generate(SynthConfig(canvas=32), n))
        return images, masks

    def test_fit_predict_score(self):
        X, y = self._data()
        est = HiFiSegSegmenter(steps=3)
        assert est.fit(X, y[:, 0]) is est
        assert len(est.loss_curve_) == 3
        pred = est.predict(X)
        assert pred.shape == (4, 1, 32, 32) and set(np.unique(pred)) <= {0, 1}
        proba = est.predict_proba(X)
        assert ((proba >= 0) & (proba <= 1)).all()
        assert 0 <= est.score(X, y) <= 1

    def test_params_and_clone(self):
        est = HiFiSegSegmenter(steps=7, variant="w/o SAM")
        params = est.get_params()
        assert params["steps"] == 7 and params["variant"] == "w/o SAM"
        twin = clone(est)
        assert twin.get_params() == params and twin is not est
        assert est.set_params(lr=1e-3).lr == 1e-3

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            HiFiSegSegmenter().predict(np.zeros((1, 3, 32, 32)))

    def test_bad_settings(self):
        X, y = self._data(1)
        with pytest.raises(ValueError):
            HiFiSegSegmenter(variant="nope", steps=1).fit(X, y)
        with pytest.raises(ValueError):
            HiFiSegSegmenter(preset="huge", steps=1).fit(X, y)

    def test_validation_helpers(self):
        with pytest.raises(ValueError, match="shape"):
            check_images(np.zeros((2, 1, 32, 32)))
        with pytest.raises(ValueError, match="multiple of 32"):
            check_images(np.zeros((1, 3, 30, 32)))
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            check_images(np.full((1, 3, 32, 32), 2.0))
        with pytest.raises(ValueError, match="NaN"):
            check_images(np.full((1, 3, 32, 32), np.nan))
        with pytest.raises(TypeError):
            check_images(np.array([["a"]]))
        X = np.zeros((2, 3, 32, 32))
        assert check_masks(np.zeros((2, 32, 32)), X).shape == (2, 1, 32, 32)
        with pytest.raises(ValueError, match="binary"):
            check_masks(np.full((2, 32, 32), 0.5))
        with pytest.raises(ValueError, match="match"):
            check_masks(np.zeros((3, 32, 32)), X)
