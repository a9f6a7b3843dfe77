import os

from fedortho.cli import main

TINY = """
method = fot
seed = 1
tasks.count = 2
data.classes = 3
data.dim = 8
data.per_class = 30
clients.count = 3
rounds_per_task = 2
local.epochs = 1
local.batch_size = 8
model.hidden = 6
"""


def write_cfg(tmp_path, text=TINY, name="exp.cfg", out_dir=None):
    path = tmp_path / name
    od = out_dir or (tmp_path / "out")
    path.write_text(text + f"\nout_dir = {od}\n")
    return str(path), str(od)


class TestRun:
    def test_success(self, tmp_path, capsys):
        cfg, out = write_cfg(tmp_path)
        assert main(["run", "--config", cfg]) == 0
        captured = capsys.readouterr()
        assert "ACC=" in captured.out
        assert os.path.exists(os.path.join(out, "metrics.csv"))
        assert os.path.exists(os.path.join(out, "figures", "accuracy_matrix.png"))

    def test_set_override(self, tmp_path, capsys):
        cfg, out = write_cfg(tmp_path)
        assert main(["run", "--config", cfg, "--set", "method=fedavg"]) == 0
        text = open(os.path.join(out, "metrics.csv")).read()
        assert "fedavg" in text

    def test_missing_config_exit_2(self, tmp_path, capsys):
        assert main(["run", "--config", str(tmp_path / "nope.cfg")]) == 2
        assert "config error" in capsys.readouterr().err

    def test_bad_key_exit_2(self, tmp_path, capsys):
        cfg, _ = write_cfg(tmp_path, text=TINY + "\nwat = 1\n")
        assert main(["run", "--config", cfg]) == 2

    def test_bad_value_exit_2(self, tmp_path, capsys):
        cfg, _ = write_cfg(tmp_path)
        assert main(["run", "--config", cfg, "--set", "seed=xyz"]) == 2

    def test_env_seed(self, tmp_path, monkeypatch, capsys):
        cfg, _ = write_cfg(tmp_path)
        monkeypatch.setenv("FOT_SEED", "17")
        assert main(["run", "--config", cfg]) == 0
        assert "seed=17" in capsys.readouterr().out


class TestCompare:
    def test_two_configs(self, tmp_path, capsys):
        cfg1, _ = write_cfg(tmp_path, name="a.cfg", out_dir=tmp_path / "oa")
        cfg2, _ = write_cfg(
            tmp_path,
            text=TINY.replace("method = fot", "method = fedavg"),
            name="b.cfg",
            out_dir=tmp_path / "ob",
        )
        assert main(["compare", "--configs", f"{cfg1},{cfg2}"]) == 0
        out = capsys.readouterr().out
        assert "fot" in out and "fedavg" in out


class TestSweep:
    def test_threshold_sweep(self, tmp_path, capsys):
        cfg, out = write_cfg(tmp_path)
        rc = main(
            [
                "sweep",
                "--config",
                cfg,
                "--param",
                "gpse.threshold",
                "--values",
                "0.8,0.96",
            ]
        )
        assert rc == 0
        assert os.path.exists(os.path.join(out, "sweep.csv"))
        report = open(os.path.join(out, "sweep_monotonicity.txt")).read()
        assert "gpse.threshold" in report
        assert "layer 0" in report
