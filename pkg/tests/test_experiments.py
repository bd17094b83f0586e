import json

import numpy as np
import pytest

from gibbs_tv import cli
from gibbs_tv import experiments as ex
from gibbs_tv.bounds import log_truncated_mass_lower_bound
from gibbs_tv.imageio import PgmImage, read_observation, read_pgm, write_pgm
from gibbs_tv.oracle import truncated_mean


def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        ex.ExperimentConfig(replicas=0)
    with pytest.raises(ValueError):
        ex.ExperimentConfig(epsilon=1.5)
    with pytest.raises(ValueError, match="unknown"):
        ex.ExperimentConfig.from_dict({"bogus": 1})
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"gamma": 0.5, "replicas": 77, "seed": 3}))
    cfg = ex.ExperimentConfig.load(path, replicas=5, seed=None)
    assert (cfg.gamma, cfg.replicas, cfg.seed) == (0.5, 5, 3)


def test_seed_environment(monkeypatch):
    monkeypatch.setenv(ex.SEED_ENV, "99")
    assert ex.ExperimentConfig().seed == 99
    monkeypatch.delenv(ex.SEED_ENV)
    assert ex.ExperimentConfig().seed == ex.DEFAULT_SEED


def test_model_and_graph_files(tmp_path):
    (tmp_path / "g.json").write_text(json.dumps({"num_sites": 3, "edges": [[0, 1], [1, 2]]}))
    (tmp_path / "m.json").write_text(json.dumps({"gamma": 0.7, "sigma": 0.4, "y": [0.1, 0.2, 0.3]}))
    cfg = ex.ExperimentConfig(model=str(tmp_path / "m.json"), graph=str(tmp_path / "g.json"))
    params, graph = cfg.build()
    assert graph.degrees.tolist() == [1, 2, 1] and params.gamma == 0.7


def test_contraction_decoupled_rate(tmp_path):
    cfg = ex.ExperimentConfig(gamma=0.0, replicas=4000, steps=40, out=str(tmp_path))
    rep = ex.run_contraction_experiment(cfg)
    fit = rep["fit"]
    assert rep["theoretical_rate"] == pytest.approx(0.75)
    assert abs(fit["rate"] - 0.75) <= 2 * fit["rate_se"] + 1e-3
    assert (tmp_path / "contraction.csv").read_text().startswith("t,mean_d,se_d")


def test_contraction_equal_inits_degenerate(tmp_path):
    rep = ex.run_contraction_experiment(ex.ExperimentConfig(init="equal", replicas=50, steps=10, out=str(tmp_path)))
    assert rep["verdict"] == "degenerate" and rep["fit"] is None


def test_certificate_single_replica(tmp_path):
    rep = ex.run_certificate_experiment(ex.ExperimentConfig(replicas=1, out=str(tmp_path)))
    assert rep["verdict"] == "inconclusive"
    assert not rep["one_shot"]["ci_usable"]
    assert "unusable" in (tmp_path / "certificate.txt").read_text()


def test_certificate_epsilon_monotone(tmp_path):
    a = ex.run_certificate_experiment(ex.ExperimentConfig(replicas=20, epsilon=0.1), write=False)
    b = ex.run_certificate_experiment(ex.ExperimentConfig(replicas=20, epsilon=0.5), write=False)
    assert b["bound"]["total_time"] < a["bound"]["total_time"]
    assert a["bound"]["M"] == 18


def test_restore_sharp_decoupled_recovers_input():
    img = PgmImage.from_bytes(4, 3, np.arange(12) * 20)
    cfg = ex.ExperimentConfig(gamma=0.0, sigma=1e-4, max_steps=2000)
    _, restored, diag = ex.degrade_and_restore(cfg, img, write=False)
    np.testing.assert_array_equal(restored.to_bytes(), img.to_bytes())
    assert diag["steps_run"] <= 2000


def test_restore_decoupled_posterior_mean():
    gen = np.random.default_rng(4)
    y = 0.5 + 0.4 * gen.standard_normal(6)
    cfg = ex.ExperimentConfig(gamma=0.0, sigma=0.4, sweeps=100_000, max_steps=300_000)
    restored, diag = ex.restore_observation(cfg, y, 3, 2)
    assert diag["capped"] and diag["steps_run"] == 300_000
    expected = truncated_mean(y, 0.16)
    # each site is resampled ~every 6 steps; allow 5 SE of the i.i.d. estimate
    assert np.all(np.abs(restored.pixels - expected) < 5 * 0.4 * np.sqrt(6 / 300_000 * 3))


def test_verify_skipped_and_mutation(tmp_path):
    assert ex.verify_suite(ex.ExperimentConfig(iterations=0))["status"] == "skipped"

    def negated(zeta, v):
        # exponent sign flipped: the bound becomes enormous and must fail
        return -0.5 * np.log(2 * np.pi * v) + (abs(zeta) + 1) ** 2 / (2 * v)

    cfg = ex.ExperimentConfig(iterations=200)
    good = ex.mass_bound_suite(cfg, 200)
    bad = ex.mass_bound_suite(cfg, 200, negated)
    assert good["status"] == "pass" and bad["status"] == "fail"
    assert log_truncated_mass_lower_bound(0.5, 0.1) < 0


def test_verify_full_suite(tmp_path, capsys):
    code = cli.main(["verify", "--iterations", "200", "--coupling-trials", "20000", "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == 0, out
    rep = json.loads((tmp_path / "verify.json").read_text())
    assert rep["status"] == "pass"
    assert {s["name"] for s in rep["suites"]} >= {"mass_lower_bound", "maximal_coupling", "oracle_crosscheck"}
    assert (tmp_path / "oracle_tv.csv").read_text().startswith("t,tv\n0,1.0")


def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main(["bound"]) == 0
    assert "integer schedule" in capsys.readouterr().out
    # an impossible tolerance turns the verdict into a failure
    assert cli.main(["contraction", "--replicas", "200", "--steps", "30", "--rate-tolerance", "-1",
                     "--out", str(tmp_path)]) == 1
    assert cli.main(["verify", "--iterations", "0", "--out", str(tmp_path)]) == 0
    assert cli.main(["bound", "--epsilon", "1.5"]) == 2
    (tmp_path / "bad.pgm").write_bytes(b"P5\n2 x\n255\n")
    assert cli.main(["restore", "--image", str(tmp_path / "bad.pgm"), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "byte offset 5" in err
    assert cli.main(["restore", "--out", str(tmp_path)]) == 2


def test_cli_degrade_then_restore(tmp_path, capsys):
    img = PgmImage(5, 4, np.linspace(0, 1, 20))
    write_pgm(img, tmp_path / "in.pgm")
    assert cli.main(["degrade", "--image", str(tmp_path / "in.pgm"), "--sigma", "0.3", "--out", str(tmp_path)]) == 0
    header, y = read_observation(tmp_path / "observed.y")
    assert (header["width"], header["height"], y.size) == (5, 4, 20)
    assert cli.main(["restore", "--observed", str(tmp_path / "observed.y"), "--sigma", "0.3",
                     "--max-steps", "5000", "--out", str(tmp_path)]) == 0
    restored = read_pgm(tmp_path / "restored.pgm")
    assert (restored.width, restored.height) == (5, 4)
    diag = json.loads((tmp_path / "restore.json").read_text())
    assert diag["steps_run"] == min(5000, diag["steps_recommended"])
    capsys.readouterr()


def test_cli_config_file_with_override(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"epsilon": 0.2, "width": 3, "height": 3}))
    assert cli.main(["bound", "--json", "--config", str(path), "--epsilon", "0.3"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["epsilon"] == 0.3 and rep["N"] == 9
