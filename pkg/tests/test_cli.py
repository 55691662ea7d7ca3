"""Command-line front end: artifacts, exit codes, determinism, table formats."""

import os
import subprocess
import sys

import numpy as np
import pytest
import yaml

from daccn import cli
from daccn import config as cfgmod
from daccn.fileio import read_pfm
from daccn.metrics import MetricsReport
from daccn.model import load_checkpoint
from daccn.synthdata import dataset, split
from daccn.train import predict_depth

ARTIFACTS = ["config.yaml", "loss_trace.tsv", "checkpoint.npz", "metrics.tsv", "metrics.txt"]


@pytest.fixture(scope="module")
def config_file(tmp_path_factory, tiny_run_dict):
    path = tmp_path_factory.mktemp("cfg") / "tiny.yaml"
    path.write_text(yaml.safe_dump(tiny_run_dict))
    return str(path)


@pytest.fixture(scope="module")
def trained(tmp_path_factory, config_file):
    out = str(tmp_path_factory.mktemp("run"))
    assert cli.main(["train", "--config", config_file, "--out", out]) == cli.EXIT_OK
    return out


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


class TestConfigCommand:
    def test_dump_parses_back(self, capsys, config_file):
        assert cli.main(["config", "--config", config_file]) == 0
        dumped = capsys.readouterr().out
        assert cfgmod.from_dict(cfgmod._parse(dumped)) == cfgmod.load(config_file)

    def test_defaults_without_file(self, capsys):
        assert cli.main(["config", "--set", "iterations=3"]) == 0
        assert "iterations: 3" in capsys.readouterr().out


class TestTrain:
    def test_artifacts(self, trained, tiny_run_dict):
        for name in ARTIFACTS:
            assert os.path.exists(os.path.join(trained, name))
        lines = read(os.path.join(trained, "loss_trace.tsv")).decode().splitlines()
        assert lines[0] == "iteration\tL\tL_p\tL_s"
        assert len(lines) == 1 + tiny_run_dict["iterations"]

    def test_rerun_byte_identical(self, trained, config_file):
        before = {name: read(os.path.join(trained, name)) for name in ARTIFACTS}
        assert cli.main(["train", "--config", config_file, "--out", trained]) == 0
        for name in ARTIFACTS:
            assert read(os.path.join(trained, name)) == before[name], name

    def test_zero_iterations_is_initialisation(self, tmp_path, config_file):
        from daccn.model import init_model
        out = str(tmp_path)
        assert cli.main(["train", "--config", config_file, "--set", "iterations=0",
                         "--out", out]) == 0
        model = load_checkpoint(os.path.join(out, "checkpoint.npz"))
        init = init_model(model.cfg).state_dict()
        assert all(np.array_equal(v, model.state_dict()[k]) for k, v in init.items())


class TestEval:
    def test_reproduces_train_metrics(self, tmp_path, trained):
        out = str(tmp_path)
        ckpt = os.path.join(trained, "checkpoint.npz")
        assert cli.main(["eval", "--checkpoint", ckpt, "--out", out]) == 0
        stored = MetricsReport.from_record(read(os.path.join(trained, "metrics.tsv")).decode()
                                           .splitlines()[1])
        again = MetricsReport.from_record(read(os.path.join(out, "eval_metrics.tsv")).decode()
                                          .splitlines()[1])
        for key in ("abs_rel", "sq_rel", "rmse", "rmse_log", "delta1", "delta2", "delta3"):
            assert abs(getattr(stored, key) - getattr(again, key)) <= 1e-12

    def test_oracle(self, tmp_path, config_file):
        out = str(tmp_path)
        assert cli.main(["eval", "--config", config_file, "--oracle", "--out", out]) == 0
        r = MetricsReport.from_record(read(os.path.join(out, "eval_metrics.tsv")).decode()
                                      .splitlines()[1])
        assert (r.abs_rel, r.sq_rel, r.rmse, r.rmse_log) == (0.0, 0.0, 0.0, 0.0)
        assert (r.delta1, r.delta2, r.delta3) == (1.0, 1.0, 1.0)

    def test_dump_reloads_bit_identical(self, tmp_path, trained):
        ckpt = os.path.join(trained, "checkpoint.npz")
        dump = str(tmp_path / "dump")
        assert cli.main(["eval", "--checkpoint", ckpt, "--dump", dump]) == 0
        run = cfgmod.load(os.path.join(trained, "config.yaml"))
        _, val = split(list(dataset(run.data.scene, run.data.count, run.data.seed)))
        model = load_checkpoint(ckpt)
        pred = predict_depth(model, val[0].target[None])[0, 0].astype(np.float32)
        assert read_pfm(os.path.join(dump, "pred_000.pfm")).tobytes() == pred.tobytes()
        assert os.path.exists(os.path.join(dump, "image_000.ppm"))

    def test_config_mismatch_exit(self, trained):
        ckpt = os.path.join(trained, "checkpoint.npz")
        code = cli.main(["eval", "--checkpoint", ckpt, "--set", "model.enable_cc=false"])
        assert code == cli.EXIT_CONFIG

    def test_missing_checkpoint(self, tmp_path, config_file):
        code = cli.main(["eval", "--config", config_file, "--checkpoint",
                         str(tmp_path / "none.npz")])
        assert code == cli.EXIT_CONFIG


class TestExitCodes:
    def test_distinct(self):
        codes = {cli.EXIT_OK, cli.EXIT_CONFIG, cli.EXIT_NUMERIC, cli.EXIT_GRADCHECK}
        assert len(codes) == 4 and cli.EXIT_OK == 0

    def test_config_error(self, capsys):
        assert cli.main(["config", "--set", "model.input_h=40"]) == cli.EXIT_CONFIG
        assert "error:" in capsys.readouterr().err

    def test_unreadable_config(self, tmp_path):
        assert cli.main(["config", "--config", str(tmp_path / "nope.yaml")]) == cli.EXIT_CONFIG

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_numeric_failure(self, tmp_path, config_file, capsys):
        code = cli.main(["train", "--config", config_file, "--set", "optimizer.lr=1e6",
                         "--set", "iterations=6", "--out", str(tmp_path)])
        assert code == cli.EXIT_NUMERIC
        assert "numeric failure" in capsys.readouterr().err

    def test_gradcheck_pass(self, capsys):
        assert cli.main(["gradcheck", "--only", "conv2d", "cumulative_convolution"]) == 0
        out = capsys.readouterr().out
        assert "2/2 passed" in out and "max rel err" in out and "tol" in out

    def test_gradcheck_negative_control(self, capsys):
        code = cli.main(["gradcheck", "--only", "conv2d", "--negative-control"])
        assert code == cli.EXIT_GRADCHECK
        assert "FAIL" in capsys.readouterr().out

    def test_gradcheck_unknown_op(self):
        assert cli.main(["gradcheck", "--only", "nonsense"]) == cli.EXIT_CONFIG

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "daccn", "gradcheck", "--only", "abs",
                               "--negative-control"], capture_output=True, text=True)
        assert proc.returncode == cli.EXIT_GRADCHECK


class TestTables:
    def test_stretch_rows(self, tiny_run_dict):
        run = cfgmod.from_dict(tiny_run_dict)
        variants = cli.stretch_variants(run)
        dims = [(v.model.input_h, v.model.input_w) for _, v in variants]
        assert dims == [(32, 48), (32, 96), (64, 48), (64, 96)]
        assert all((v.data.scene.image_h, v.data.scene.image_w) == d
                   for (_, v), d in zip(variants, dims))

    def test_stretch_format(self):
        rows = [("original", 32, 48, 0.1, 1.0, 100), ("horizontal stretch", 32, 96, 0.2, 2.0, 200),
                ("vertical stretch", 64, 48, 0.3, 3.0, 200), ("equal stretch", 64, 96, 0.4, 4.0, 400)]
        lines = cli.format_stretch(rows).splitlines()
        header = [c.strip() for c in lines[0].split("|")]
        assert header == ["setting", "input", "Abs Rel", "RMSE", "FLOPs-estimate (MACs)", "x orig"]
        assert len(lines) == 2 + 4
        assert [l.split("|")[-1].strip() for l in lines[2:]] == ["1.00", "2.00", "2.00", "4.00"]

    def test_ablation_rows(self, tiny_run_dict):
        run = cfgmod.from_dict(tiny_run_dict)
        flags = [(v.model.enable_dam, v.model.enable_cc) for _, v in cli.ablation_variants(run)]
        assert flags == [(False, False), (True, False), (False, True), (True, True)]

    def test_ablation_format(self):
        rows = [(l, d, c, 0.1, 1.0, 0.9) for l, d, c in cli.ABLATION_ROWS]
        lines = cli.format_ablation(rows).splitlines()
        header = [c.strip() for c in lines[0].split("|")]
        assert header == ["variant", "DaM", "CC", "Abs Rel", "RMSE", "d<1.25"]
        assert [l.split("|")[0].strip() for l in lines[2:]] == ["neither", "DaM", "CC", "DaM + CC"]
