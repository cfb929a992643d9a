import hashlib

import pytest

from invlab.cli import EXIT_CHECK, EXIT_OK, EXIT_USAGE, main
from invlab.config import ConfigError, config_from_dict, load_config
from invlab.io import read_csv

SMALL = """
[grid]
n = 16
L = 0.5

[potential]
seed = 3

[noise]
epsilons = [1e-1, 1e-2]

[output]
dir = "{out}"
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(SMALL.format(out=tmp_path / "out"))
    return path


def test_defaults_and_hash(small_config):
    cfg = load_config(small_config)
    assert cfg.hash == hashlib.sha256(small_config.read_bytes()).hexdigest()
    assert cfg.grid_object().n == 16
    assert cfg.noise.epsilons == (0.1, 0.01)
    assert cfg.scenario().params.rho == pytest.approx(5.0)
    assert cfg.provenance()["seed"] == 3


@pytest.mark.parametrize("doc,key", [
    ({"grid": {"m": 3}}, "grid.m"),
    ({"gird": {}}, "gird"),
    ({"grid": {"n": 15}}, "grid"),
    ({"grid": {"n": "16"}}, "grid.n"),
    ({"noise": {"epsilons": [0.5, 2.0]}}, "noise.epsilons"),
    ({"reconstruction": {"mode": "exact"}}, "reconstruction.mode"),
    ({"reconstruction": {"rho": "big"}}, "reconstruction.rho"),
    ({"reconstruction": {"rho": 1.0}}, "potential/reconstruction"),
    ({"potential": {"s": 1}}, "potential/reconstruction"),
    ({"source": {"position": [0.1, 0.2]}}, "source.position"),
])
def test_invalid_configs_name_the_key(doc, key):
    with pytest.raises(ConfigError, match=key.replace("/", "/")):
        config_from_dict(doc)


def test_bad_toml(tmp_path):
    p = tmp_path / "x.toml"
    p.write_text("[grid\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_cli_usage_errors(tmp_path, small_config, capsys):
    assert main([]) == EXIT_USAGE
    assert main(["forward", str(tmp_path / "missing.toml")]) == EXIT_USAGE
    bad = tmp_path / "bad.toml"
    bad.write_text("[grid]\nn = 7\n")
    assert main(["forward", str(bad)]) == EXIT_USAGE
    assert "grid" in capsys.readouterr().err
    assert main(["reconstruct", str(small_config)]) == EXIT_USAGE  # missing --dtn1


def test_cli_pipeline(small_config, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["forward", str(small_config)]) == EXIT_OK
    assert "trivial kernel" in capsys.readouterr().out
    args = ["reconstruct", str(small_config), "--dtn1", str(out / "dtn_ref.dtnm"), "--dtn2", str(out / "dtn.dtnm"),
            "--ref-q", str(out / "q_ref.sfld"), "--true-q", str(out / "q_true.sfld")]
    assert main(args) == EXIT_OK
    prov, cols, rows = read_csv(out / "reconstruct.csv")
    assert cols == ["eta_x", "eta_y", "eta_z", "re_qhat", "im_qhat"]
    assert prov["config_hash"] == load_config(small_config).hash
    assert (out / "dq_est.sfld").exists()
    assert main(["localize", str(small_config), "--dtn", str(out / "dtn.dtnm"), "--q", str(out / "q_true.sfld")]) == 0
    _, cols, rows = read_csv(out / "localize.csv")
    assert len(rows) == 1
    # a DtN file for another grid is a format error
    (out / "junk.dtnm").write_bytes(b"NOPE" + bytes(20))
    assert main(["localize", str(small_config), "--dtn", str(out / "junk.dtnm"), "--q", str(out / "q_true.sfld")]) \
        == EXIT_USAGE


def test_cli_verify_radius(small_config, tmp_path):
    assert main(["verify", str(small_config), "--suite", "radius"]) == EXIT_OK
    _, cols, rows = read_csv(tmp_path / "out" / "verify_radius.csv")
    assert len(rows) == 54


def test_cli_threads_env(small_config, monkeypatch):
    import os

    monkeypatch.setenv("INVLAB_THREADS", "1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS"):
        monkeypatch.delenv(var, raising=False)
    assert main(["verify", str(small_config), "--suite", "radius"]) == EXIT_OK
    assert os.environ["OMP_NUM_THREADS"] == "1"


def test_exit_check_constant():
    assert EXIT_CHECK == 1
