import json
import subprocess
import sys

import numpy as np
import pytest

from doublebasis import cli
from doublebasis.basis import BasisConfig, DomainTransform, enumerate_index_set
from doublebasis.bench import default_config, train_bb, train_kk
from doublebasis.errors import NumericError
from doublebasis.io import load_model, read_dataset, save_model, write_dataset
from doublebasis.regress import DoubleBasisModel, KernelKernelModel
from doublebasis.rks import draw_feature_map
from doublebasis.synth import make_dataset


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def train_file(tmp_path, capsys):
    path = tmp_path / "train.jsonl"
    code, _, _ = run(["synth", "--N", 300, "--n", 40, "--seed", 1, "--out", path], capsys)
    assert code == 0
    return path


class TestSynth:
    def test_byte_identical(self, tmp_path, capsys):
        for name in ("a.jsonl", "b.jsonl"):
            assert run(["synth", "--kind", "dirichlet", "--N", 30, "--seed", 5,
                        "--out", tmp_path / name], capsys)[0] == 0
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_default_sample_count(self, tmp_path, capsys):
        path = tmp_path / "d.jsonl"
        run(["synth", "--N", 1000, "--out", path], capsys)
        ds = read_dataset(path)
        assert {len(s) for s in ds.sets} == {64}

    def test_manifest(self, tmp_path, capsys):
        path = tmp_path / "d.jsonl"
        run(["synth", "--kind", "gmm-modelsel", "--N", 100, "--seed", 2, "--out", path], capsys)
        manifest = json.loads((tmp_path / "d.jsonl.manifest.json").read_text())
        assert manifest["kind"] == "gmm-modelsel" and manifest["seed"] == 2
        assert len(manifest["config_digest"]) == 16
        ds = read_dataset(path)
        assert set(np.unique(ds.responses)) <= set(range(1, 11))

    def test_config_file(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"kind": "dirichlet", "n": 12}))
        path = tmp_path / "d.jsonl"
        assert run(["synth", "--config", cfg, "--N", 5, "--out", path], capsys)[0] == 0
        ds = read_dataset(path)
        assert ds.kind == "dirichlet" and len(ds.sets[0]) == 12

    @pytest.mark.parametrize("argv", [["--N", 0], ["--N", 10, "--n", 0]])
    def test_invalid_ranges(self, tmp_path, capsys, argv):
        code, _, err = run(["synth", *argv, "--out", tmp_path / "d.jsonl"], capsys)
        assert code == 2 and "error" in err

    def test_unwritable(self, tmp_path, capsys):
        code, _, err = run(["synth", "--N", 5, "--out", tmp_path / "missing" / "d.jsonl"], capsys)
        assert code == 2 and "does not exist" in err

    def test_bad_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["synth", "--bogus"])
        assert exc.value.code == 2

    def test_bad_config(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text('{"kind": "dirichlet", "unknown_key": 1}')
        code, _, err = run(["synth", "--config", cfg, "--N", 5, "--out", tmp_path / "d.jsonl"], capsys)
        assert code == 2 and "unknown_key" in err


class TestTrainPredict:
    def test_round_trip_bit_exact(self, tmp_path, train_file, capsys):
        ds = read_dataset(train_file)
        cfg = default_config("synthetic-map")
        cfg.D_grid = [64]
        model, _ = train_bb(ds, cfg, seed=0)
        save_model(model, tmp_path / "m.dbm")
        back = load_model(tmp_path / "m.dbm")
        queries = make_dataset("synthetic-map", 100, 40, seed=1, stream=1).sets
        assert [back.predict(q) for q in queries] == [model.predict(q) for q in queries]

    def test_grid_recorded(self, tmp_path, train_file, capsys):
        code, out, _ = run(["train", train_file, "--method", "bb", "--grid-sigma", "0.5,1",
                            "--grid-ridge", "0,1e-3", "--grid-D", "32,auto", "--out",
                            tmp_path / "m.dbm"], capsys)
        assert code == 0
        meta = load_model(tmp_path / "m.dbm").meta
        hp = meta["hyperparameters"]
        assert hp["sigma"] in (0.5, 1.0) and hp["ridge"] in (0.0, 1e-3)
        assert meta["grid"]["sigma_grid"] == [0.5, 1.0]
        assert meta["config_digest"] and meta["seed"] == 0

    def test_cli_matches_library(self, tmp_path, train_file, capsys):
        run(["train", train_file, "--method", "kk", "--out", tmp_path / "k.dbm"], capsys)
        test = tmp_path / "test.jsonl"
        write_dataset(make_dataset("synthetic-map", 20, 40, seed=1, stream=1), test)
        code, out, _ = run(["predict", tmp_path / "k.dbm", test], capsys)
        assert code == 0
        model = load_model(tmp_path / "k.dbm")
        expected = [f"{model.predict(s):.12f}" for s in read_dataset(test).sets]
        assert out.split() == expected

    def test_predict_twice_identical(self, tmp_path, train_file, capsys):
        run(["train", train_file, "--out", tmp_path / "m.dbm"], capsys)
        outs = [run(["predict", tmp_path / "m.dbm", train_file], capsys)[1] for _ in range(2)]
        assert outs[0] == outs[1] and len(outs[0].splitlines()) == 300

    def test_model_sizes(self, tmp_path):
        sizes = {}
        for N in (1000, 10000):
            ds = make_dataset("synthetic-map", N, 30, seed=0)
            cfg = default_config("synthetic-map")
            cfg.C_grid, cfg.sigma_grid, cfg.ridge_grid, cfg.D_grid = [1.0], [1.0], [1e-3], [128]
            cfg.kk_C_grid, cfg.kk_sigma_grid = [1.0], [0.1]
            for name, trainer in (("bb", train_bb), ("kk", train_kk)):
                model, _ = trainer(ds, cfg, 0)
                path = tmp_path / f"{name}{N}.dbm"
                save_model(model, path)
                sizes[name, N] = path.stat().st_size
        kk_ratio = sizes["kk", 10000] / sizes["kk", 1000]
        assert 8 < kk_ratio < 11
        assert abs(sizes["bb", 10000] - sizes["bb", 1000]) < 0.02 * sizes["bb", 1000]

    def test_zero_weight_model(self, tmp_path, capsys):
        idx = enumerate_index_set(BasisConfig.isotropic(1), 3)
        model = DoubleBasisModel(idx, draw_feature_map(4, 16, 1.0, 0), np.zeros(16), 0.0, 1.0,
                                 DomainTransform.unit(1))
        save_model(model, tmp_path / "z.dbm")
        (tmp_path / "q.txt").write_text("0.3\n0.7\n")
        code, out, _ = run(["predict", tmp_path / "z.dbm", tmp_path / "q.txt"], capsys)
        assert code == 0 and out == "0.000000000000\n"

    def test_zero_normaliser_kk(self, tmp_path, capsys):
        idx = enumerate_index_set(BasisConfig.isotropic(1), 1)
        model = KernelKernelModel(idx, np.array([[1.0, 1.4]]), np.array([3.0]), 0.01, "bounded",
                                  DomainTransform.unit(1))
        save_model(model, tmp_path / "k.dbm")
        (tmp_path / "q.txt").write_text("1.0\n")
        code, out, _ = run(["predict", tmp_path / "k.dbm", tmp_path / "q.txt"], capsys)
        assert code == 0 and float(out) == 0.0

    def test_no_truncate(self, tmp_path, capsys):
        idx = enumerate_index_set(BasisConfig.isotropic(1), 1)
        fmap = draw_feature_map(2, 1, 1.0, 0)
        model = DoubleBasisModel(idx, fmap, np.array([1.0]), 0.0, 1e-3, DomainTransform.unit(1))
        save_model(model, tmp_path / "m.dbm")
        (tmp_path / "q.txt").write_text("0.5\n")
        _, clipped, _ = run(["predict", tmp_path / "m.dbm", tmp_path / "q.txt"], capsys)
        _, raw, _ = run(["predict", tmp_path / "m.dbm", tmp_path / "q.txt", "--no-truncate"], capsys)
        assert abs(float(clipped)) <= 1e-3
        assert float(raw) == pytest.approx(model.raw_predict(np.array([[0.5]])), abs=1e-12)

    def test_dimension_mismatch(self, tmp_path, train_file, capsys):
        run(["train", train_file, "--out", tmp_path / "m.dbm"], capsys)
        (tmp_path / "q.txt").write_text("0.1 0.2\n")
        code, _, err = run(["predict", tmp_path / "m.dbm", tmp_path / "q.txt"], capsys)
        assert code == 3 and "l=1" in err

    def test_parse_error_names_record(self, tmp_path, capsys):
        path = tmp_path / "bad.jsonl"
        write_dataset(make_dataset("synthetic-map", 5, 4, seed=0), path)
        lines = path.read_text().splitlines()
        lines[3] = "{not json"
        path.write_text("\n".join(lines) + "\n")
        code, _, err = run(["train", path, "--out", tmp_path / "m.dbm"], capsys)
        assert code == 3 and "record 4" in err

    def test_missing_dataset(self, tmp_path, capsys):
        code, _, err = run(["train", tmp_path / "nope.jsonl", "--out", tmp_path / "m.dbm"], capsys)
        assert code == 2

    def test_numeric_error_exit(self, tmp_path, train_file, monkeypatch, capsys):
        def boom(*args, **kwargs):
            raise NumericError("quadrature diverged")
        monkeypatch.setattr(cli, "train_bb", boom)
        code, _, err = run(["train", train_file, "--out", tmp_path / "m.dbm"], capsys)
        assert code == 4 and "quadrature diverged" in err

    def test_module_entry_point(self):
        res = subprocess.run([sys.executable, "-m", "doublebasis", "defaults", "gmm-modelsel"],
                             capture_output=True, text=True, check=True)
        assert json.loads(res.stdout)["kind"] == "gmm-modelsel"
