"""Command-line front end.

Every command reads a JSON config (``--config``), applies dotted overrides
(``--recon.iters 40``), writes its outputs under ``--out`` together with a
``manifest.json`` and exits with 0 on success, 2 on a configuration error
and 3 on a numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import platform
import sys
import time
from typing import Optional

__all__ = ["main", "ConfigError", "DEFAULTS", "load_config"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    """Invalid or incomplete configuration."""


_TRAIN = {
    "lam": 1e-3,
    "lr": 1e-3,
    "lr_final": None,
    "decay_start": 0.0,
    "epochs": 5000,
    "batch": 1024,
    "hidden": [256, 256, 256, 256],
    "activation": "relu",
    "loss": "l1",
    "w_max": 2.0,
    "whiten": True,
    "snap_targets": False,
    "targets_per_orient": 1,
    "log_every": 100,
}

DEFAULTS = {
    "simulate": {
        "grid": {"n": 128},
        "phantom": {"modified": True},
        "coils": {"n": 12, "width": 0.3},
        "traj": {"shots": 16, "accel": 2.0, "samples_per_shot": 2000, "duration": 0.01, "density_power": 1.5},
        "cal": {"n": 32, "te": [0.0]},
        "field": {"coeffs": {}},
        "noise": {"sigma": 0.0},
    },
    "dcf": {"input": {"traj": None}, "grid": {"n": 128}, "iters": 30, "alpha": 2.0, "width": 6.0},
    "calibrate-grog": {"input": {"cal": None}, "lam": 1e-3},
    "train-igrog": {
        "input": {"cal": None, "traj": None},
        "grid": {"n": 128},
        "plan": {"nsrc": 3, "spacing": 0.5},
        "train": dict(_TRAIN),
    },
    "grid": {
        "input": {"data": None, "traj": None, "net": None, "grog": None, "dcf": None},
        "grid": {"n": 128},
        "method": "igrog",
        "plan": {"nsrc": 3, "spacing": 0.5},
    },
    "recon": {
        "input": {"data": None, "traj": None, "maps": None, "coords": None, "dcf": None},
        "solver": "cg",
        "recon": {"iters": 30, "lam_reg": 0.0},
        "nufft": {"alpha": 1.5, "width": 6.0},
        "image": {"window": None, "level": None},
    },
    "gfactor": {
        "sim": {"n": 128, "ncoil": 24, "shots": 16, "accel": 2.0, "samples_per_shot": 2000, "n_cal": 32},
        "ncoil": 12,
        "sigma_rel": 0.02,
        "replicas": 100,
        "grog_lam": 1e-2,
        "igrog_lam": 1e-1,
        "iters": 30,
        "train": dict(_TRAIN),
    },
    "coil-sweep": {
        "sim": {"n": 128, "ncoil": 24, "shots": 16, "accel": 2.0, "samples_per_shot": 2000, "n_cal": 32},
        "ncoils": [5, 8, 12, 19],
        "grog_lams": [1e-4, 1e-3, 1e-2, 1e-1],
        "iters": 30,
        "train": dict(_TRAIN),
    },
    "tseg-sweep": {
        "n": 64,
        "ncoil": 12,
        "shots": 4,
        "duration": 0.06,
        "samples_per_shot": 2400,
        "n_cal": 32,
        "coeffs": {"1": 10.0, "x2": 200.0, "y2": 200.0, "xy": 80.0},
        "nseg": list(range(1, 18)),
        "corrected": [2, 4],
        "iters": 30,
        "train": dict(_TRAIN),
    },
    "bench": {"n": 256, "nsamples": 200000, "ncoil": 12, "repeats": 5, "alpha": 1.5, "width": 6.0},
}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _merge_strict(base: dict, new: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in new.items():
        key = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"unknown config key '{key}'")
        if isinstance(base[k], dict) and base[k] and not _is_free_dict(key):
            if not isinstance(v, dict):
                raise ConfigError(f"config key '{key}' must be an object")
            out[k] = _merge_strict(base[k], v, key + ".")
        else:
            out[k] = v
    return out


def _is_free_dict(key: str) -> bool:
    # polynomial coefficient tables accept arbitrary term names
    return key.endswith("coeffs")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_override(cfg: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = cfg
    for i, p in enumerate(parts[:-1]):
        if not isinstance(node, dict) or p not in node:
            raise ConfigError(f"unknown config key '{'.'.join(parts[: i + 1])}'")
        node = node[p]
    last = parts[-1]
    if not isinstance(node, dict) or (last not in node and not _is_free_dict(".".join(parts[:-1]))):
        raise ConfigError(f"unknown config key '{dotted}'")
    node[last] = value


def load_config(command: str, path: Optional[str], overrides: list) -> dict:
    cfg = copy.deepcopy(DEFAULTS[command])
    if path:
        try:
            with open(path) as f:
                user = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        cfg = _merge_strict(cfg, user)
    for key, val in overrides:
        _apply_override(cfg, key, val)
    return cfg


def _split_overrides(extra: list) -> list:
    out = []
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) <= 2:
            raise ConfigError(f"unexpected argument '{tok}'")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"override '{tok}' needs a value")
            val = extra[i + 1]
            i += 2
        out.append((key, _parse_value(val)))
    return out


def _require(cfg: dict, key: str) -> str:
    node = cfg
    for p in key.split("."):
        node = node.get(p) if isinstance(node, dict) else None
    if node is None:
        raise ConfigError(f"missing required input '{key}'")
    return node


# ---------------------------------------------------------------------------
# IO helpers
# ---------------------------------------------------------------------------


def _input_path(cfg: dict, key: str) -> str:
    path = _require(cfg, key)
    base = path[:-5] if path.endswith(".carr") else path
    if not (os.path.exists(base + ".carr") or os.path.exists(base + ".arch.json")):
        raise ConfigError(f"input '{key}' not found: {path}")
    return base


def _hash_inputs(cfg: dict) -> dict:
    hashes = {}
    for k, v in (cfg.get("input") or {}).items():
        if not v:
            continue
        h = hashlib.sha256()
        for suffix in (".carr", ".json", ".arch.json"):
            p = v[:-5] + suffix if v.endswith(".carr") else v + suffix
            if os.path.exists(p):
                with open(p, "rb") as f:
                    h.update(f.read())
        hashes[k] = h.hexdigest()
    return hashes


def _save_traj(path, traj):
    import numpy as np

    from .core import write_array

    arr = np.concatenate([traj.coords, traj.times[:, None], traj.readout_id[:, None]], axis=1)
    write_array(path, arr, meta={"dim": traj.dim, "accel": traj.accel, "columns": "coords,time,readout"})


def _load_traj(path):
    from .core import Trajectory, read_array

    arr, meta = read_array(path, with_meta=True)
    arr = arr.real
    d = int(meta.get("dim", arr.shape[1] - 2))
    return Trajectory(arr[:, :d].copy(), arr[:, d].copy(), arr[:, d + 1].astype(int), meta.get("accel", 1.0))


def _load_cal(path):
    import numpy as np

    from .core import Calibration, Grid, read_array

    arr, meta = read_array(path, with_meta=True)
    dim = arr.ndim - 2
    return Calibration(Grid(dim, arr.shape[-1], meta.get("fov", 1.0)), arr, np.asarray(meta.get("te", [0.0])))


def export_image(path: str, img, window=None, level=None) -> None:
    """8-bit magnitude image; ``.png`` or ``.pgm`` chosen by the extension.

    Without ``window``/``level`` the display range is ``[0, p99]`` of the
    magnitude.
    """
    import numpy as np
    from PIL import Image

    mag = np.abs(np.asarray(img))
    if mag.ndim == 3:
        mag = mag[mag.shape[0] // 2]
    if window is None or level is None:
        lo, hi = 0.0, float(np.percentile(mag, 99)) or 1.0
    else:
        lo, hi = level - window / 2.0, level + window / 2.0
    u8 = np.clip(np.round(255 * (mag - lo) / max(hi - lo, 1e-30)), 0, 255).astype(np.uint8)
    Image.fromarray(u8, mode="L").save(path)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _train_cfg(d: dict):
    from .implicit import TrainConfig

    d = dict(d)
    d["hidden"] = tuple(d["hidden"])
    return TrainConfig(**d)


def cmd_simulate(cfg, seed, out):
    import numpy as np

    from . import sim
    from .core import Grid, write_array

    grid = Grid(2, int(cfg["grid"]["n"]))
    img = sim.shepp_logan(grid, modified=bool(cfg["phantom"]["modified"])).image
    maps = sim.synth_coil_maps(grid, int(cfg["coils"]["n"]), seed=seed, width=float(cfg["coils"]["width"]))
    t = cfg["traj"]
    traj = sim.vds_spiral(
        grid,
        shots=int(t["shots"]),
        accel=float(t["accel"]),
        density_power=float(t["density_power"]),
        samples_per_shot=int(t["samples_per_shot"]),
        duration=float(t["duration"]),
    )
    field = sim.quadratic_field_map(grid, cfg["field"]["coeffs"]) if cfg["field"]["coeffs"] else None
    data = sim.brute_force_forward(img, maps, traj, field)
    data = sim.add_noise(data, float(cfg["noise"]["sigma"]), seed=seed)
    te = cfg["cal"]["te"]
    cal = sim.make_calibration(img, maps, int(cfg["cal"]["n"]), field=field, te=te)
    write_array(os.path.join(out, "phantom"), img)
    write_array(os.path.join(out, "maps"), maps.maps)
    write_array(os.path.join(out, "data"), data)
    write_array(os.path.join(out, "cal"), cal.kdata, meta={"te": list(map(float, te)), "fov": 1.0})
    _save_traj(os.path.join(out, "traj"), traj)
    if field is not None:
        write_array(os.path.join(out, "field"), field.basis)
    export_image(os.path.join(out, "phantom.png"), img)
    return {"samples": int(len(traj)), "ncoil": int(maps.ncoil)}


def cmd_dcf(cfg, seed, out):
    from . import dcf, nufft
    from .core import Grid, write_array

    traj = _load_traj(_input_path(cfg, "input.traj"))
    grid = Grid(traj.dim, int(cfg["grid"]["n"]))
    p = nufft.plan(grid, traj, alpha=float(cfg["alpha"]), width=float(cfg["width"]))
    w_raw = dcf.pipe_menon(p, iters=int(cfg["iters"]), normalize=False)
    write_array(os.path.join(out, "dcf"), w_raw / w_raw.max())
    return {"fixed_point_residual": dcf.fixed_point_residual(p, w_raw)}


def cmd_calibrate_grog(cfg, seed, out):
    import numpy as np

    from . import grog
    from .core import write_array

    cal = _load_cal(_input_path(cfg, "input.cal"))
    k = grog.calibrate_axis_kernels(cal, float(cfg["lam"]))
    write_array(os.path.join(out, "grog_kernels"), np.stack(k.G), meta={"lam": k.lam})
    return {"flagged": list(k.flagged)}


def cmd_train_igrog(cfg, seed, out):
    from . import implicit
    from .core import Grid

    cal = _load_cal(_input_path(cfg, "input.cal"))
    traj = _load_traj(_input_path(cfg, "input.traj"))
    grid = Grid(traj.dim, int(cfg["grid"]["n"]))
    plan = implicit.build_gridding_plan(traj, grid, nsrc=int(cfg["plan"]["nsrc"]), spacing=float(cfg["plan"]["spacing"]))
    tc = _train_cfg({**cfg["train"]})
    tc.seed = seed
    net = implicit.train_kernelnet(cal, plan, tc)
    net.save(os.path.join(out, "kernelnet"))
    return {"final_loss": net.history[-1][1] if net.history else None}


def cmd_grid(cfg, seed, out):
    from . import grog, implicit
    from .core import Grid, read_array, write_array

    data = read_array(_input_path(cfg, "input.data"))
    traj = _load_traj(_input_path(cfg, "input.traj"))
    grid = Grid(traj.dim, int(cfg["grid"]["n"]))
    w = read_array(_input_path(cfg, "input.dcf")).real if cfg["input"]["dcf"] else None
    method = cfg["method"]
    if method == "igrog":
        net = implicit.KernelNet.load(_input_path(cfg, "input.net"))
        plan = implicit.build_gridding_plan(traj, grid, nsrc=net.nsrc, spacing=float(cfg["plan"]["spacing"]))
        g, coords = implicit.igrog_grid(data, traj, net, plan, weights=w)
    elif method == "grog":
        G, meta = read_array(_input_path(cfg, "input.grog"), with_meta=True)
        kern = grog.AxisKernels.from_matrices(list(G), meta.get("lam", 0.0))
        plan = implicit.build_gridding_plan(traj, grid, nsrc=1)
        g, coords = implicit.grog_grid_along_readout(data, traj, kern, plan, weights=w)
    else:
        raise ConfigError(f"unknown gridding method '{method}'")
    write_array(os.path.join(out, "gridded"), g)
    write_array(os.path.join(out, "coords"), coords)
    return {"gridded_samples": int(coords.shape[0])}


def cmd_recon(cfg, seed, out):
    import numpy as np

    from . import nufft, recon
    from .core import Grid, read_array, write_array

    data = read_array(_input_path(cfg, "input.data"))
    maps = read_array(_input_path(cfg, "input.maps"))
    grid = Grid(maps.ndim - 1, maps.shape[-1])
    w = read_array(_input_path(cfg, "input.dcf")).real if cfg["input"]["dcf"] else None
    if cfg["input"]["coords"]:
        coords = read_array(_input_path(cfg, "input.coords")).real.astype(np.int64)
        op = recon.make_sense_op(maps, coords=coords)
    else:
        traj = _load_traj(_input_path(cfg, "input.traj"))
        p = nufft.plan(grid, traj, alpha=float(cfg["nufft"]["alpha"]), width=float(cfg["nufft"]["width"]))
        op = recon.make_sense_op(maps, plan=p, toeplitz_weights=w)
    it = int(cfg["recon"]["iters"])
    if cfg["solver"] == "cg":
        x, trace = recon.cg_sense(op, data, iters=it, weights=w, return_trace=True)
    elif cfg["solver"] == "fista":
        x, trace = recon.fista_l1(op, data, float(cfg["recon"]["lam_reg"]), iters=it, weights=w, return_trace=True)
    else:
        raise ConfigError(f"unknown solver '{cfg['solver']}'")
    write_array(os.path.join(out, "image"), x)
    trace.to_csv(os.path.join(out, "trace.csv"))
    export_image(os.path.join(out, "image.png"), x, cfg["image"]["window"], cfg["image"]["level"])
    return {"iterations": len(trace.residual)}


def _coil_sim(cfg, seed):
    from . import analysis

    s = cfg["sim"]
    return analysis.make_coil_sim(
        n=int(s["n"]),
        ncoil=int(s["ncoil"]),
        shots=int(s["shots"]),
        accel=float(s["accel"]),
        samples_per_shot=int(s["samples_per_shot"]),
        n_cal=int(s["n_cal"]),
        seed=seed,
    )


def cmd_gfactor(cfg, seed, out):
    from . import analysis
    from .core import write_array

    tc = {**cfg["train"], "hidden": tuple(cfg["train"]["hidden"]), "seed": seed}
    res = analysis.experiment_gfactor(
        _coil_sim(cfg, seed),
        n_virtual=int(cfg["ncoil"]),
        sigma_rel=float(cfg["sigma_rel"]),
        n_replicas=int(cfg["replicas"]),
        seed=seed,
        grog_lam=float(cfg["grog_lam"]),
        igrog_lam=float(cfg["igrog_lam"]),
        iters=int(cfg["iters"]),
        train=tc,
    )
    for name in ("grog", "igrog"):
        r = res[name]
        write_array(os.path.join(out, f"g_{name}"), r.g)
        write_array(os.path.join(out, f"bias_{name}"), r.bias)
        export_image(os.path.join(out, f"g_{name}.png"), r.g * r.mask, window=1.0, level=1.0)
    analysis.write_csv(
        os.path.join(out, "gfactor.csv"),
        ["method", "mean_g"],
        [["grog", res["mean_g_grog"]], ["igrog", res["mean_g_igrog"]]],
    )
    return {"mean_g_grog": res["mean_g_grog"], "mean_g_igrog": res["mean_g_igrog"]}


def cmd_coil_sweep(cfg, seed, out):
    from . import analysis

    tc = {**cfg["train"], "hidden": tuple(cfg["train"]["hidden"]), "seed": seed}
    rows = analysis.experiment_coil_sweep(
        _coil_sim(cfg, seed),
        n_virtual=[int(c) for c in cfg["ncoils"]],
        grog_lams=[float(x) for x in cfg["grog_lams"]],
        iters=int(cfg["iters"]),
        train=tc,
        csv_path=os.path.join(out, "coil_sweep.csv"),
    )
    return {"rows": [{k: v for k, v in r.items() if k != "seconds"} for r in rows]}


def cmd_tseg_sweep(cfg, seed, out):
    from .fieldcorr import tseg_sweep

    tc = {**cfg["train"], "hidden": tuple(cfg["train"]["hidden"]), "seed": seed}
    rows, _ = tseg_sweep(
        n=int(cfg["n"]),
        ncoil=int(cfg["ncoil"]),
        shots=int(cfg["shots"]),
        duration=float(cfg["duration"]),
        samples_per_shot=int(cfg["samples_per_shot"]),
        n_cal=int(cfg["n_cal"]),
        coeffs={k: float(v) for k, v in cfg["coeffs"].items()},
        nseg=[int(x) for x in cfg["nseg"]],
        corrected=[int(x) for x in cfg["corrected"]],
        iters=int(cfg["iters"]),
        train=tc,
        seed=seed,
        csv_path=os.path.join(out, "tseg_sweep.csv"),
    )
    return {"rows": rows}


def bench_iteration_times(n=256, nsamples=200000, ncoil=12, repeats=5, alpha=1.5, width=6.0, seed=0):
    """Median wall time of one CG-SENSE iteration, gridded vs NUFFT (Toeplitz).

    Samples are uniform random in k-space; the gridded operator uses their
    rounded coordinates. Returns ``(t_gridded, t_nufft)`` in seconds.
    """
    import numpy as np

    from . import nufft, recon, sim
    from .core import Grid

    rng = np.random.default_rng(seed)
    grid = Grid(2, n)
    coords = rng.uniform(-n / 2, n / 2 - 1, size=(nsamples, 2))
    maps = sim.synth_coil_maps(grid, ncoil, seed=seed)
    gcoords = np.unique(np.rint(coords).astype(np.int64), axis=0)
    w = np.ones(nsamples)
    wg = np.ones(gcoords.shape[0])
    op_n = recon.make_sense_op(maps, plan=nufft.plan(grid, coords, alpha=alpha, width=width), toeplitz_weights=w)
    op_g = recon.make_sense_op(maps, coords=gcoords)
    x = rng.standard_normal(grid.shape) + 0j
    times = {}
    for name, op, ww in (("gridded", op_g, wg), ("nufft", op_n, w)):
        op.normal(x, ww)  # warm caches (PSF, mask)
        ts = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            recon.cg_sense(op, op.apply(x), iters=1, weights=ww, lam_max=1.0)
            ts.append(time.perf_counter() - t0)
        times[name] = float(np.median(ts))
    return times["gridded"], times["nufft"]


def cmd_bench(cfg, seed, out):
    from . import analysis

    tg, tn = bench_iteration_times(
        n=int(cfg["n"]),
        nsamples=int(cfg["nsamples"]),
        ncoil=int(cfg["ncoil"]),
        repeats=int(cfg["repeats"]),
        alpha=float(cfg["alpha"]),
        width=float(cfg["width"]),
        seed=seed,
    )
    analysis.write_csv(
        os.path.join(out, "bench.csv"),
        ["n", "nsamples", "ncoil", "t_gridded_s", "t_nufft_s", "ratio"],
        [[cfg["n"], cfg["nsamples"], cfg["ncoil"], tg, tn, tg / tn]],
    )
    return {"ratio": tg / tn}


COMMANDS = {
    "simulate": cmd_simulate,
    "dcf": cmd_dcf,
    "calibrate-grog": cmd_calibrate_grog,
    "train-igrog": cmd_train_igrog,
    "grid": cmd_grid,
    "recon": cmd_recon,
    "gfactor": cmd_gfactor,
    "coil-sweep": cmd_coil_sweep,
    "tseg-sweep": cmd_tseg_sweep,
    "bench": cmd_bench,
}

# outputs whose content depends on wall-clock time
_TIMED = {"bench.csv", "trace.csv", "manifest.json"}


def _versions() -> dict:
    import numpy
    import scipy

    from . import __version__

    return {"python": platform.python_version(), "numpy": numpy.__version__, "scipy": scipy.__version__, "igrog": __version__}


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="igrog", description="Implicit GROG gridding and reconstruction tools.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="JSON config file")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--threads", type=int, default=None, help="cap BLAS/FFT threads")
    ap.add_argument("--window", type=float, default=None, help="display window for PNG/PGM export")
    ap.add_argument("--level", type=float, default=None, help="display level for PNG/PGM export")
    return ap


def main(argv: Optional[list] = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    ap = _build_parser()
    try:
        args, extra = ap.parse_known_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        overrides = _split_overrides(extra)
        if args.command == "recon":
            overrides += [(f"image.{k}", getattr(args, k)) for k in ("window", "level") if getattr(args, k) is not None]
        cfg = load_config(args.command, args.config, overrides)
        os.makedirs(args.out, exist_ok=True)
        t0 = time.perf_counter()
        info = COMMANDS[args.command](cfg, args.seed, args.out)
        elapsed = time.perf_counter() - t0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except Exception as exc:  # noqa: BLE001
        import numpy as np

        if isinstance(exc, np.linalg.LinAlgError):
            print(f"numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        raise
    outputs = sorted(f for f in os.listdir(args.out) if f != "manifest.json")
    manifest = {
        "command": args.command,
        "seed": args.seed,
        "config": cfg,
        "inputs": _hash_inputs(cfg),
        "outputs": outputs,
        "versions": _versions(),
        "timings": {"total_s": elapsed},
        "info": info,
    }
    with open(os.path.join(args.out, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, default=_json_default)
    return EXIT_OK


def _json_default(o):
    import numpy as np

    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.bool_,)):
        return bool(o)
    raise TypeError(f"not serializable: {type(o)}")


if __name__ == "__main__":
    sys.exit(main())
