import csv
import io
import json

import numpy as np
import pytest

from tcdesc.cli import main
from tcdesc.core import DescriptorBatch, save_descriptors
from tcdesc.trainer import load_model


@pytest.fixture
def desc_file(tmp_path):
    rng = np.random.default_rng(0)
    batch = DescriptorBatch.from_raw(rng.normal(size=(12, 8)),
                                     rng.normal(size=(12, 8)))
    path = tmp_path / "batch.tcd"
    save_descriptors(path, batch)
    return str(path)


@pytest.fixture
def tiny_train_config(tmp_path):
    cfg = {
        "seed": 0,
        "data": {"n_total": 32, "d_in": 8, "n_clusters": 4, "sigma": 0.1},
        "net": {"hidden": 10, "d_out": 6},
        "train": {"epochs": 2, "batch_size": 32, "lr_start": 0.05},
        "loss": {"k": 3},
    }
    path = tmp_path / "train.json"
    path.write_text(json.dumps(cfg))
    return path


def read_csv(text):
    return list(csv.reader(io.StringIO(text)))


class TestWeightsCommand:
    def test_csv_output(self, desc_file, capsys):
        assert main(["weights", "--desc", desc_file, "--k", "3"]) == 0
        rows = read_csv(capsys.readouterr().out)
        assert rows[0] == ["center_index", "neighbor_index", "weight"]
        assert len(rows) == 1 + 12 * 3
        for row in rows[1:]:
            assert np.isfinite(float(row[2]))

    def test_both_sets(self, desc_file, capsys):
        assert main(["weights", "--desc", desc_file, "--k", "2",
                     "--both-sets"]) == 0
        rows = read_csv(capsys.readouterr().out)
        assert len(rows) == 1 + 2 * 12 * 2

    def test_hard_kind(self, desc_file, capsys):
        assert main(["weights", "--desc", desc_file, "--k", "2",
                     "--kind", "hard"]) == 0
        rows = read_csv(capsys.readouterr().out)
        assert all(float(r[2]) == 1.0 for r in rows[1:])


class TestTopoDistCommand:
    def test_csv_output(self, desc_file, capsys):
        assert main(["topo-dist", "--desc", desc_file, "--k", "3"]) == 0
        rows = read_csv(capsys.readouterr().out)
        assert rows[0] == ["pair_index", "distance"]
        assert rows[-1][0] == "mean"
        per_pair = [float(r[1]) for r in rows[1:-1]]
        assert len(per_pair) == 12
        assert float(rows[-1][1]) == pytest.approx(np.mean(per_pair), rel=1e-9)

    def test_singular_gram_exit_3(self, tmp_path, capsys):
        # duplicated rows make the zero-ridge Gram matrix singular
        row = np.array([1.0, 0.0, 0.0, 0.0])
        a = np.stack([row, row, row, [0.0, 1.0, 0.0, 0.0]])
        batch = DescriptorBatch(a, a.copy())
        path = tmp_path / "dup.tcd"
        save_descriptors(path, batch)
        code = main(["topo-dist", "--desc", str(path), "--k", "2",
                     "--ridge", "0"])
        assert code == 3
        assert "numerical failure" in capsys.readouterr().err


class TestLossCommand:
    def test_json_lines(self, desc_file, capsys):
        assert main(["loss", "--desc", desc_file, "--k", "3"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        head = json.loads(lines[0])
        assert "loss" in head and np.isfinite(head["loss"])
        assert len(lines) == 1 + 12
        pair = json.loads(lines[1])
        assert {"i", "d_e", "d_t", "lam", "m", "neg_index",
                "neg_distance", "hinge_active"} <= set(pair)


class TestGradcheckCommand:
    def test_pass(self, capsys):
        assert main(["gradcheck", "--n", "10", "--d", "8", "--k", "3"]) == 0
        assert "PASS" in capsys.readouterr().out

    @pytest.mark.parametrize("kind", ["hard", "proxy", "heat", "lc"])
    def test_all_kinds(self, kind, capsys):
        assert main(["gradcheck", "--kind", kind, "--t", "0.5"]) == 0


class TestTrainCommand:
    def test_writes_model_and_log(self, tiny_train_config, tmp_path, capsys):
        model = tmp_path / "model.tcm"
        log = tmp_path / "log.csv"
        code = main(["train", "--config", str(tiny_train_config),
                     "--out", str(model), "--log", str(log)])
        assert code == 0
        net = load_model(model)
        assert net.output_dim == 6
        rows = read_csv(log.read_text())
        assert rows[0] == ["epoch", "loss", "mean_dE", "mean_dT",
                           "mean_m_over_k", "fpr95"]
        assert len(rows) == 3   # header + 2 epochs

    def test_toml_config(self, tmp_path):
        toml = tmp_path / "train.toml"
        toml.write_text(
            'seed = 1\n'
            '[data]\nn_total = 32\nd_in = 8\nn_clusters = 4\nsigma = 0.1\n'
            '[net]\nhidden = 10\nd_out = 6\n'
            '[train]\nepochs = 1\nbatch_size = 32\nlr_start = 0.05\n'
            '[loss]\nk = 3\n')
        log = tmp_path / "log.csv"
        assert main(["train", "--config", str(toml), "--log", str(log)]) == 0
        assert len(read_csv(log.read_text())) == 2

    def test_unknown_config_key_exit_2(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"seed": 0, "loss": {"k": 3},
                                    "data": {"n_totall": 32}}))
        assert main(["train", "--config", str(path)]) == 2
        assert "config error" in capsys.readouterr().err

    def test_missing_config_exit_2(self, tmp_path, capsys):
        assert main(["train", "--config", str(tmp_path / "nope.json")]) == 2


class TestEvalCommand:
    def test_json_report(self, desc_file, capsys):
        assert main(["eval", "--desc", desc_file, "--k", "3"]) == 0
        report = json.loads(capsys.readouterr().out)
        assert {"fpr95", "matching_score", "mean_m_over_k",
                "mean_topology_distance"} == set(report)


class TestAblateCommand:
    def test_tiny_grid(self, tmp_path, capsys):
        cfg = {
            "seed": 0,
            "data": {"n_total": 32, "d_in": 8, "n_clusters": 4, "sigma": 0.1},
            "net": {"hidden": 10, "d_out": 6},
            "train": {"epochs": 1, "batch_size": 32, "lr_start": 0.05},
            "loss": {"margin": 0.5},
            "grid": {"k": [3], "gamma": [1.0], "kinds": ["proxy", "heat"],
                     "heat_t": [0.5, 1.0], "lambda": ["adaptive", 0.2]},
        }
        path = tmp_path / "ablate.json"
        path.write_text(json.dumps(cfg))
        out = tmp_path / "grid.csv"
        assert main(["ablate", "--config", str(path), "--out", str(out)]) == 0
        rows = read_csv(out.read_text())
        assert rows[0][:5] == ["k", "gamma", "kind", "t", "lambda"]
        # proxy contributes 1 t-value, heat contributes 2; times 2 lambdas
        assert len(rows) == 1 + (1 + 2) * 2
        for row in rows[1:]:
            assert all(np.isfinite(float(v)) for v in row[5:])


class TestArgumentErrors:
    def test_unknown_flag(self):
        with pytest.raises(SystemExit) as info:
            main(["gradcheck", "--nope"])
        assert info.value.code == 2

    def test_missing_subcommand(self):
        with pytest.raises(SystemExit) as info:
            main([])
        assert info.value.code == 2
