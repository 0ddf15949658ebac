import json
import os

import numpy as np
import pytest

from igrog import cli
from igrog.core import read_array

SIM = [
    "--grid.n", "32", "--coils.n", "4", "--traj.shots", "4", "--traj.accel", "1.0",
    "--traj.samples_per_shot", "200", "--cal.n", "24",
]  # fmt: skip
TRAIN = ["--train.epochs", "20", "--train.batch", "32", "--train.hidden", "[16, 16]", "--train.w_max", "1.0"]
COILSIM = ['--sim={"n": 32, "ncoil": 6, "shots": 4, "accel": 1.0, "samples_per_shot": 200, "n_cal": 24}']


def _run(args, out):
    return cli.main(list(args) + ["--out", str(out)])


def _files(d):
    return {f: open(os.path.join(d, f), "rb").read() for f in sorted(os.listdir(d)) if f not in cli._TIMED}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run every artifact-producing command twice into separate directories."""
    runs = []
    for rep in range(2):
        root = tmp_path_factory.mktemp(f"run{rep}")
        d = {k: root / k for k in ("sim", "dcf", "grog", "net", "grid_i", "grid_g", "recon_n", "recon_g", "fista")}
        rcs = {}
        rcs["sim"] = _run(["simulate", "--seed", "3"] + SIM, d["sim"])
        s = d["sim"]
        rcs["dcf"] = _run(["dcf", "--input.traj", str(s / "traj"), "--grid.n", "32"], d["dcf"])
        rcs["grog"] = _run(["calibrate-grog", "--input.cal", str(s / "cal")], d["grog"])
        rcs["net"] = _run(
            ["train-igrog", "--input.cal", str(s / "cal"), "--input.traj", str(s / "traj"), "--grid.n", "32"] + TRAIN,
            d["net"],
        )
        common = ["--input.data", str(s / "data"), "--input.traj", str(s / "traj"), "--grid.n", "32"]
        rcs["grid_i"] = _run(
            ["grid", "--input.net", str(d["net"] / "kernelnet"), "--input.dcf", str(d["dcf"] / "dcf")] + common,
            d["grid_i"],
        )
        rcs["grid_g"] = _run(["grid", "--method", "grog", "--input.grog", str(d["grog"] / "grog_kernels")] + common, d["grid_g"])
        maps = ["--input.maps", str(s / "maps"), "--recon.iters", "5"]
        rcs["recon_n"] = _run(
            ["recon", "--input.data", str(s / "data"), "--input.traj", str(s / "traj"), "--input.dcf", str(d["dcf"] / "dcf")]
            + maps,
            d["recon_n"],
        )
        rcs["recon_g"] = _run(
            ["recon", "--input.data", str(d["grid_i"] / "gridded"), "--input.coords", str(d["grid_i"] / "coords")] + maps,
            d["recon_g"],
        )
        rcs["fista"] = _run(
            ["recon", "--solver", "fista", "--recon.lam_reg", "0.01", "--input.data", str(d["grid_g"] / "gridded"),
             "--input.coords", str(d["grid_g"] / "coords")] + maps,
            d["fista"],
        )  # fmt: skip
        runs.append((rcs, d))
    return runs


def test_pipeline_exit_codes(pipeline):
    for rcs, _ in pipeline:
        assert all(rc == 0 for rc in rcs.values()), rcs


@pytest.mark.parametrize("step", ["sim", "dcf", "grog", "net", "grid_i", "grid_g", "recon_n", "recon_g", "fista"])
def test_pipeline_byte_identical(pipeline, step):
    (_, a), (_, b) = pipeline
    fa, fb = _files(a[step]), _files(b[step])
    assert fa.keys() == fb.keys() and fa
    for name in fa:
        assert fa[name] == fb[name], name


def test_manifest_contents(pipeline):
    _, d = pipeline[0]
    m = json.load(open(d["recon_n"] / "manifest.json"))
    assert m["command"] == "recon" and m["seed"] == 0
    assert set(m["inputs"]) >= {"data", "traj", "maps"}
    assert "image.carr" in m["outputs"] and "total_s" in m["timings"]
    assert m["config"]["recon"]["iters"] == 5


def test_recon_image_close_to_phantom(pipeline):
    _, d = pipeline[0]
    img = read_array(str(d["recon_n"] / "image"))
    ph = read_array(str(d["sim"] / "phantom"))
    mask = ph != 0
    assert np.linalg.norm((img - ph)[mask]) / np.linalg.norm(ph[mask]) < 0.3


def test_window_level_flags(pipeline, tmp_path):
    _, d = pipeline[0]
    s = d["sim"]
    base = ["recon", "--input.data", str(s / "data"), "--input.traj", str(s / "traj"), "--input.maps", str(s / "maps"),
            "--recon.iters", "2"]  # fmt: skip
    assert _run(base, tmp_path / "a") == 0
    assert _run(base + ["--window", "0.2", "--level", "0.1"], tmp_path / "b") == 0
    m = json.load(open(tmp_path / "b" / "manifest.json"))
    assert m["config"]["image"] == {"window": 0.2, "level": 0.1}
    assert (tmp_path / "a" / "image.png").read_bytes() != (tmp_path / "b" / "image.png").read_bytes()


def test_export_image_window():
    from PIL import Image

    img = np.linspace(0, 1, 64).reshape(8, 8)
    path = os.path.join(os.environ.get("TMPDIR", "/tmp"), "igrog_export_test.png")
    cli.export_image(path, img, window=0.5, level=0.25)
    px = np.asarray(Image.open(path))
    assert px.min() == 0 and px.max() == 255
    assert np.all(px[img <= 0.0] == 0) and np.all(px[img >= 0.5] == 255)
    os.remove(path)


def test_missing_input_exit_code(tmp_path):
    assert _run(["dcf"], tmp_path) == 2
    assert _run(["dcf", "--input.traj", str(tmp_path / "nope")], tmp_path) == 2


def test_unknown_key_exit_code(tmp_path):
    assert _run(["simulate", "--grid.bogus", "3"], tmp_path) == 2
    assert _run(["nonsense"], tmp_path) == 2


def test_config_file_and_override(tmp_path):
    cfgfile = tmp_path / "c.json"
    cfgfile.write_text(json.dumps({"grid": {"n": 16}, "coils": {"n": 2}}))
    cfg = cli.load_config("simulate", str(cfgfile), [("coils.n", 3)])
    assert cfg["grid"]["n"] == 16 and cfg["coils"]["n"] == 3
    assert cfg["traj"]["shots"] == cli.DEFAULTS["simulate"]["traj"]["shots"]
    cfgfile.write_text(json.dumps({"grid": {"size": 16}}))
    with pytest.raises(cli.ConfigError):
        cli.load_config("simulate", str(cfgfile), [])


def test_numeric_failure_exit_code(tmp_path, monkeypatch):
    def boom(cfg, seed, out):
        raise FloatingPointError("diverged")

    monkeypatch.setitem(cli.COMMANDS, "bench", boom)
    assert _run(["bench"], tmp_path) == 3


def test_experiment_commands_deterministic(tmp_path):
    small_train = TRAIN
    cmds = {
        "coil-sweep": ["coil-sweep"] + COILSIM + ["--ncoils", "[4]", "--grog_lams", "[0.001]", "--iters", "3"],
        "gfactor": ["gfactor"] + COILSIM + ["--ncoil", "4", "--replicas", "10", "--iters", "3"],
        "tseg-sweep": [
            "tseg-sweep", "--n", "32", "--ncoil", "4", "--shots", "2", "--samples_per_shot", "300",
            "--duration", "0.02", "--n_cal", "24", "--nseg", "[1, 2]", "--corrected", "[2]", "--iters", "3",
        ],
    }  # fmt: skip
    for name, args in cmds.items():
        outs = []
        for rep in range(2):
            d = tmp_path / f"{name}{rep}"
            assert _run(args + small_train, d) == 0, name
            outs.append(_files(d))
        assert outs[0] == outs[1] and outs[0], name


def test_bench_small(tmp_path):
    args = ["bench", "--n", "32", "--nsamples", "2000", "--ncoil", "2", "--repeats", "1"]
    assert _run(args, tmp_path) == 0
    m = json.load(open(tmp_path / "manifest.json"))
    assert m["info"]["ratio"] > 0
    assert (tmp_path / "bench.csv").exists()
