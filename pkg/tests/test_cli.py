import json

import numpy as np
import pytest

from sal.cli import EXIT_INPUT, EXIT_NUMERIC, EXIT_OK, EXIT_VERIFY, main, parse_args
from sal.io import InputError, write_xyz

TINY_RECON = ["--epochs", "3", "--layers", "3", "--width", "16", "--resolution", "24", "--knn", "3", "--lr", "1e-3"]


@pytest.fixture
def cloud2d(tmp_path):
    t = np.linspace(0, 2 * np.pi, 9)[:-1]
    path = tmp_path / "blob.xyz"
    write_xyz(path, np.stack([np.cos(t), 0.8 * np.sin(t)], 1))
    return path


def circle_file(tmp_path, name, r):
    t = np.linspace(0, 2 * np.pi, 40, endpoint=False)
    path = tmp_path / name
    write_xyz(path, r * np.stack([np.cos(t), np.sin(t)], 1))
    return path


class TestParsing:
    def test_precedence(self, tmp_path, cloud2d):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"width": 32, "epochs": 7}))
        ns = parse_args(["recon", str(cloud2d), "--preset", "ci", "--config", str(cfg), "--width", "24"])
        assert ns.width == 24  # flag beats config
        assert ns.epochs == 7  # config beats preset
        assert ns.resolution == 64  # preset beats default
        assert ns.layers == 5
        assert parse_args(["recon", str(cloud2d)]).width == 512

    def test_unknown_config_key(self, tmp_path, cloud2d):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"depth": 3}))
        with pytest.raises(InputError):
            parse_args(["recon", str(cloud2d), "--config", str(cfg)])
        assert main(["recon", str(cloud2d), "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_INPUT

    def test_bad_flag_exits_2(self, cloud2d):
        with pytest.raises(SystemExit) as e:
            main(["recon", str(cloud2d), "--loss", "l7"])
        assert e.value.code == 2


class TestRecon:
    def test_2d_outputs(self, tmp_path, cloud2d):
        out = tmp_path / "o"
        assert main(["recon", str(cloud2d), *TINY_RECON, "--out", str(out)]) == EXIT_OK
        for name in ("model.ckpt", "loss.csv", "recon.svg", "recon_segments.json", "manifest.json"):
            assert (out / name).exists(), name
        man = json.loads((out / "manifest.json").read_text())
        assert man["config"]["width"] == 16 and man["seed"] == 0
        assert str(cloud2d) in man["inputs"]
        assert len((out / "loss.csv").read_text().splitlines()) == 4

    def test_3d_outputs(self, tmp_path, rng):
        X = rng.standard_normal((100, 3))
        X /= np.linalg.norm(X, axis=1, keepdims=True)
        write_xyz(tmp_path / "s.xyz", X)
        out = tmp_path / "o"
        assert main(["recon", str(tmp_path / "s.xyz"), *TINY_RECON, "--loss", "l2", "--out", str(out)]) == EXIT_OK
        assert (out / "recon.ply").exists()

    def test_missing_input(self, tmp_path):
        assert main(["recon", str(tmp_path / "nope.xyz"), "--out", str(tmp_path / "o")]) == EXIT_INPUT

    def test_malformed_input(self, tmp_path):
        (tmp_path / "bad.xyz").write_text("1 2 x\n")
        assert main(["recon", str(tmp_path / "bad.xyz"), "--out", str(tmp_path / "o")]) == EXIT_INPUT

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_numerical_abort(self, tmp_path, cloud2d):
        args = ["recon", str(cloud2d), *TINY_RECON, "--lr", "1e300", "--epochs", "50", "--out", str(tmp_path / "o")]
        assert main(args) == EXIT_NUMERIC


class TestVerify:
    def test_contour_passes(self, tmp_path, capsys):
        code = main(["verify", "contour", "--resolutions", "32,64,128", "--resolutions-3d", "16,32", "--out", str(tmp_path)])
        assert code == EXIT_OK
        assert "contour: PASS" in capsys.readouterr().out
        assert json.loads((tmp_path / "verify_contour.json").read_text())["passed"]

    def test_failure_exit_code(self, tmp_path):
        assert main(["verify", "gradcheck", "--trials", "1", "--tol", "1e-300", "--out", str(tmp_path)]) == EXIT_VERIFY


class TestChamfer:
    def test_files(self, tmp_path, capsys):
        a = tmp_path / "a.xyz"
        b = tmp_path / "b.xyz"
        write_xyz(a, np.array([[1.0, 0.0]]))
        write_xyz(b, np.array([[0.0, 0.0]]))
        assert main(["chamfer", str(a), str(b), "--scale", "1", "--out", str(tmp_path / "o")]) == EXIT_OK
        rows = (tmp_path / "o" / "chamfer.csv").read_text().splitlines()
        assert rows[1].split(",")[-2] == "1.0"

    def test_dimension_mismatch(self, tmp_path):
        write_xyz(tmp_path / "a.xyz", np.zeros((2, 2)))
        write_xyz(tmp_path / "b.xyz", np.zeros((2, 3)))
        assert main(["chamfer", str(tmp_path / "a.xyz"), str(tmp_path / "b.xyz"), "--out", str(tmp_path)]) == EXIT_INPUT


class TestShapeSpace:
    def test_train_fit_contour_interpolate(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SAL_CACHE_DIR", str(tmp_path / "cache"))
        circle_file(tmp_path, "a.xyz", 0.5)
        circle_file(tmp_path, "b.xyz", 0.8)
        (tmp_path / "ds.json").write_text(json.dumps({"shapes": [{"id": "a", "path": "a.xyz"}, {"id": "b", "path": "b.xyz"}]}))
        model = tmp_path / "model"
        small = ["--layers", "3", "--width", "16", "--latent", "2", "--epochs", "3", "--points-per-shape", "50"]
        assert main(["shapespace", "train", str(tmp_path / "ds.json"), *small, "--out", str(model)]) == EXIT_OK
        assert len(list((tmp_path / "cache").iterdir())) == 2
        for name in ("decoder.ckpt", "latents.ckpt", "loss.csv", "manifest.json"):
            assert (model / name).exists()

        fit = tmp_path / "fit"
        new = circle_file(tmp_path, "c.xyz", 0.65)
        assert main(["shapespace", "fit-latent", str(model), str(new), "--iters", "5", "--out", str(fit)]) == EXIT_OK
        doc = json.loads((fit / "latent.json").read_text())
        assert len(doc["mu"]) == 2

        cont = tmp_path / "cont"
        assert main(["shapespace", "contour", str(model), "a", "--resolution", "16", "--out", str(cont)]) == EXIT_OK
        assert (cont / "contour.ply").exists()
        assert main(["shapespace", "contour", str(model), str(fit / "latent.json"), "--resolution", "16",
                     "--out", str(cont)]) == EXIT_OK

        interp = tmp_path / "interp"
        assert main(["shapespace", "interpolate", str(model), "a", "b", "--steps", "3", "--resolution", "16",
                     "--out", str(interp)]) == EXIT_OK
        assert sorted(p.name for p in interp.glob("*.ply")) == ["interp_00.ply", "interp_01.ply", "interp_02.ply"]

        assert main(["shapespace", "contour", str(model), "zzz", "--out", str(cont)]) == EXIT_INPUT

    def test_missing_shape(self, tmp_path):
        (tmp_path / "ds.json").write_text(json.dumps({"shapes": [{"id": "ghost", "path": "ghost.xyz"}]}))
        assert main(["shapespace", "train", str(tmp_path / "ds.json"), "--out", str(tmp_path / "m")]) == EXIT_INPUT

    def test_missing_model(self, tmp_path):
        assert main(["shapespace", "contour", str(tmp_path), "a", "--out", str(tmp_path / "o")]) == EXIT_INPUT
