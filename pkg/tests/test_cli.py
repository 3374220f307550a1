import json
import os

import numpy as np
import pytest

from mrekit import io as kio
from mrekit.cli import main
from mrekit.grid import ComplexGrid
from mrekit.unwrap import gauge_aligned


@pytest.fixture()
def cfg_path(tmp_path):
    cfg = {
        "seed": 3,
        "geometry": {"dims": [16, 16], "spacing_mm": [1.5, 1.5]},
        "training": {"steps": 30, "batch_size": 16, "widths": [5, 3, 1]},
    }
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg), encoding="utf-8")
    return str(p)


def test_no_command_is_usage_error(capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().err


def test_missing_config_is_usage_error(tmp_path, capsys):
    out = str(tmp_path / "w.cgrid")
    assert main(["synth-wave", "--out", out]) == 1
    assert "--config is required" in capsys.readouterr().err
    assert not os.path.exists(out)


def test_unknown_flag_is_usage_error(cfg_path, capsys):
    rc = main(["synth-wave", "--config", cfg_path, "--bogus", "x"])
    assert rc == 1
    assert "usage" in capsys.readouterr().err


def test_invalid_config_value_is_usage_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"seed": -1}), encoding="utf-8")
    rc = main(["synth-wave", "--config", str(bad),
               "--out", str(tmp_path / "w.cgrid")])
    assert rc == 1
    assert "seed" in capsys.readouterr().err


def test_runtime_failure_exits_2(tmp_path, capsys):
    assert main(["info", str(tmp_path / "missing.cgrid")]) == 2
    junk = tmp_path / "junk.cgrid"
    junk.write_bytes(b"not a header\n1234")
    assert main(["info", str(junk)]) == 2
    err = capsys.readouterr().err
    assert "mrekit:" in err


def test_synth_info_round_trip(cfg_path, tmp_path, capsys):
    wave = str(tmp_path / "wave.cgrid")
    assert main(["synth-wave", "--config", cfg_path, "--out", wave,
                 "--k-re", "0.8", "--direction", "0.6,0.8"]) == 0
    assert main(["info", wave]) == 0
    header = json.loads(capsys.readouterr().out)
    assert header["dims"] == [16, 16]
    assert header["kind"] == "displacement"
    assert header["frequency_hz"] == 60.0


def test_wrap_unwrap_round_trip(cfg_path, tmp_path):
    wave = str(tmp_path / "wave.cgrid")
    prefix = str(tmp_path / "series")
    est = str(tmp_path / "est.cgrid")
    hist = str(tmp_path / "hist.csv")
    assert main(["synth-wave", "--config", cfg_path, "--out", wave]) == 0
    assert main(["wrap", "--config", cfg_path, "--in", wave,
                 "--out-prefix", prefix, "--phase-scale", "2.5"]) == 0
    names = sorted(os.listdir(tmp_path))
    assert sum(name.startswith("series_offset") for name in names) == 4
    assert main(["unwrap", "--config", cfg_path, "--in-prefix", prefix,
                 "--out", est, "--history", hist,
                 "--set", "unwrap.gradient_weight=0.0",
                 "--set", "unwrap.init=integral",
                 "--set", "unwrap.learning_rate=0.001",
                 "--set", "unwrap.max_iterations=300"]) == 0

    got, _ = kio.read_cgrid_complex(est)
    truth, _ = kio.read_cgrid_complex(wave)
    _, h0 = kio.read_cgrid_complex(prefix + "_offset0.cgrid")
    target = ComplexGrid(truth.values * h0["scale_factor"], truth.geom)
    aligned = gauge_aligned(got, target)
    assert np.abs(aligned.values - target.values).max() < 1e-3
    assert len(open(hist).read().splitlines()) == 1 + 301


def test_invert_bundles_and_eval(cfg_path, tmp_path, capsys):
    wave = str(tmp_path / "wave.cgrid")
    model = str(tmp_path / "model.cnet")
    assert main(["synth-wave", "--config", cfg_path, "--out", wave]) == 0
    assert main(["train", "--config", cfg_path, "--out", model]) == 0

    net = str(tmp_path / "net")
    assert main(["invert", "--config", cfg_path, "--model", model,
                 "--in", wave, "--out-prefix", net]) == 0
    di = str(tmp_path / "di")
    assert main(["invert-di", "--config", cfg_path, "--in", wave,
                 "--out-prefix", di]) == 0
    for prefix, estimator in ((net, "network"), (di, "direct")):
        for suffix in ("_g_re.cgrid", "_g_im.cgrid", "_mask.cgrid",
                       "_g_re.pgm", "_g_im.pgm", "_provenance.json"):
            assert os.path.exists(prefix + suffix), suffix
        with open(prefix + "_provenance.json", encoding="utf-8") as fh:
            prov = json.load(fh)
        assert prov["estimator"] == estimator
        assert prov["n_valid_pixels"] > 0
        (src,) = prov["sources"]
        assert src["direction"] == "z"
        assert src["frequency_hz"] == pytest.approx(60.0)

    report = str(tmp_path / "eval.json")
    assert main(["eval", "--config", cfg_path, "--est", net + "_g_re.cgrid",
                 "--gt", net + "_g_re.cgrid", "--out", report]) == 0
    with open(report, encoding="utf-8") as fh:
        assert json.load(fh)["rmse"] == 0.0
    rc = main(["eval", "--config", cfg_path, "--est", net + "_g_re.cgrid",
               "--gt", net + "_g_re.cgrid", "--out", report,
               "--tumor-mask", net + "_mask.cgrid"])
    assert rc == 1
    assert "together" in capsys.readouterr().err


def test_unknown_experiment_exits_1(cfg_path, tmp_path, capsys):
    rc = main(["experiment", "--config", cfg_path,
               "--set", "experiment.name=bogus",
               "--out-dir", str(tmp_path / "exp")])
    assert rc == 1
    assert "plane-wave-smoke" in capsys.readouterr().err


def test_rerun_outputs_are_byte_identical(cfg_path, tmp_path):
    waves = [str(tmp_path / f"w{i}.cgrid") for i in (0, 1)]
    models = [str(tmp_path / f"m{i}.cnet") for i in (0, 1)]
    for wave, model in zip(waves, models):
        assert main(["synth-wave", "--config", cfg_path, "--out", wave]) == 0
        assert main(["train", "--config", cfg_path, "--out", model]) == 0
    assert open(waves[0], "rb").read() == open(waves[1], "rb").read()
    assert open(models[0], "rb").read() == open(models[1], "rb").read()
