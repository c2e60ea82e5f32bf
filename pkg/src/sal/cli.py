"""Command-line interface: ``sal recon | verify | chamfer | shapespace``.

Exit codes: 0 success, 1 verification failure, 2 input error, 3 numerical
abort.  Option precedence is command-line flag, then ``--config`` JSON file,
then ``--preset``, then built-in default; the resolved values are written to
``manifest.json`` next to every output.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .checkpoint import CheckpointError, load_mlp, save_mlp
from .contouring import evaluate_grid, extract_zero_set, mlp_field, write_levelset_svg
from .estimator import SALReconstructor
from .evaluation import chamfer_report, format_table, mesh_to_eval_cloud, to_csv
from .geometry import TriangleSoup
from .io import InputError, read_geometry, write_ply
from .sampling import SamplerConfig, build_training_set, load_training_set, save_training_set
from .shapespace import LatentCode, LatentTable, ShapeDataset, fit_latent, interpolate_latent, train_shapespace
from .mlp import MlpConfig
from .loss import LossConfig
from .training import NumericalAbort, TrainConfig, write_loss_trace
from . import verify as V

EXIT_OK, EXIT_VERIFY, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3

PAPER = "paper default"
TOOL = "tool default"

# Desk-scale overrides selected by --preset ci
PRESETS = {
    "ci": {
        "recon": {"layers": 5, "width": 256, "resolution": 64, "epochs": 1000},
        "shapespace train": {"layers": 5, "width": 256, "epochs": 2000, "latent": 8},
        "shapespace contour": {"resolution": 48},
        "shapespace interpolate": {"resolution": 48},
        "verify gradcheck": {"trials": 20},
        "verify plane": {"samples": 200_000},
    },
    "paper": {},
}


class _Formatter(argparse.ArgumentDefaultsHelpFormatter, argparse.RawDescriptionHelpFormatter):
    pass


def _common(p):
    p.add_argument("--seed", type=int, default=0, help=f"random seed for every stochastic step ({TOOL})")
    p.add_argument("--threads", type=int, default=1, help=f"cap on BLAS threads; 1 is the reproducible mode ({TOOL})")
    p.add_argument("--preset", choices=sorted(PRESETS), default="paper",
                   help=f"'ci' selects the desk-scale network, grid and epochs ({TOOL})")
    p.add_argument("--config", default=None, help=f"JSON file of option defaults, keyed by option name ({TOOL})")
    p.add_argument("--out", default="sal_out", help=f"output directory ({TOOL})")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sal", description=__doc__, formatter_class=_Formatter)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("recon", help="reconstruct a surface from one raw point cloud or triangle soup", formatter_class=_Formatter)
    r.add_argument("input", help="XYZ, PLY or OBJ file")
    r.add_argument("--loss", choices=["l2", "l0"], default="l0", help=f"distance used by the loss ({PAPER} for raw scans: l0)")
    r.add_argument("--ell", type=float, default=1.0, help=f"exponent of the unsigned similarity ({PAPER})")
    r.add_argument("--knn", type=int, default=50, help=f"neighbour rank setting the near splat width ({PAPER})")
    r.add_argument("--second-sigma", default="farthest", help=f"far splat width: 'farthest' or a number ({PAPER})")
    r.add_argument("--samples-per-point", default="auto", help=f"splat pairs per base point, or 'auto' ({TOOL})")
    r.add_argument("--lr", type=float, default=1e-4, help=f"Adam learning rate ({PAPER})")
    r.add_argument("--epochs", type=int, default=5000, help=f"training epochs ({PAPER})")
    r.add_argument("--batch-size", type=int, default=5000, help=f"samples per step ({TOOL})")
    r.add_argument("--layers", type=int, default=8, help=f"layers including the output layer ({PAPER})")
    r.add_argument("--width", type=int, default=512, help=f"hidden width ({PAPER})")
    r.add_argument("--phi", choices=["identity", "tanh_linear"], default="identity", help=f"output nonlinearity ({TOOL})")
    r.add_argument("--gamma", type=float, default=0.5, help=f"slope of the tanh_linear nonlinearity ({TOOL})")
    r.add_argument("--init-radius", default="auto", help=f"initial sphere radius in normalized units or 'auto' ({TOOL})")
    r.add_argument("--resolution", type=int, default=None, help=f"contouring grid per axis; 512 in 2D, 128 in 3D ({TOOL})")
    r.add_argument("--levels", default="-0.2,-0.1,0.1,0.2", help=f"extra iso-lines in the 2D plot ({TOOL})")
    r.add_argument("--checkpoint-every", type=int, default=0, help=f"epochs between checkpoints, 0 for final only ({TOOL})")
    r.add_argument("--resample", action="store_true", help=f"redraw splats every epoch instead of a fixed set ({TOOL})")
    _common(r)

    v = sub.add_parser("verify", help="numerical verification suites", formatter_class=_Formatter)
    vs = v.add_subparsers(dest="suite", required=True)
    vi = vs.add_parser("init", help="initial-sphere error versus width", formatter_class=_Formatter)
    vi.add_argument("--widths", default="100,200,2000", help=f"comma separated hidden widths ({PAPER})")
    vi.add_argument("--radius", type=float, default=1.0, help=f"sphere radius ({PAPER})")
    vi.add_argument("--dim", type=int, default=2, choices=[2, 3], help=f"input dimension ({PAPER})")
    vi.add_argument("--layers", type=int, default=8, help=f"layers including the output layer ({PAPER})")
    vi.add_argument("--seeds", type=int, default=5, help=f"network seeds per width ({TOOL})")
    vi.add_argument("--samples", type=int, default=10_000, help=f"uniform samples in the box ({TOOL})")
    _common(vi)
    vp = vs.add_parser("plane", help="critical point of the linear model on planar data", formatter_class=_Formatter)
    vp.add_argument("--dim", type=int, default=2, choices=[2, 3], help=f"ambient dimension ({TOOL})")
    vp.add_argument("--sigma", type=float, default=0.3, help=f"Gaussian band width ({TOOL})")
    vp.add_argument("--samples", type=int, default=1_000_000, help=f"Monte Carlo samples ({TOOL})")
    _common(vp)
    vg = vs.add_parser("gradcheck", help="reverse mode against central differences", formatter_class=_Formatter)
    vg.add_argument("--trials", type=int, default=100, help=f"random draws of parameters and points ({TOOL})")
    vg.add_argument("--h", type=float, default=1e-5, help=f"finite-difference step ({TOOL})")
    vg.add_argument("--tol", type=float, default=1e-5, help=f"maximum relative error ({TOOL})")
    vg.add_argument("--width", type=int, default=64, help=f"hidden width of the 8-layer network ({TOOL})")
    _common(vg)
    vc = vs.add_parser("contour", help="analytic circle and sphere contouring", formatter_class=_Formatter)
    vc.add_argument("--resolutions", default="32,64,128", help=f"2D grid sizes ({TOOL})")
    vc.add_argument("--resolutions-3d", default="16,32,64", help=f"3D grid sizes ({TOOL})")
    _common(vc)

    c = sub.add_parser("chamfer", help="Chamfer distance between two geometry files", formatter_class=_Formatter)
    c.add_argument("a", help="first file (reconstruction)")
    c.add_argument("b", help="second file (reference)")
    c.add_argument("--mode", choices=["symmetric", "one-sided"], default="symmetric", help=f"reported value ({TOOL})")
    c.add_argument("--n", type=int, default=30_000, help=f"surface samples per mesh ({PAPER})")
    c.add_argument("--scale", type=float, default=1e3, help=f"report multiplier ({PAPER})")
    _common(c)

    s = sub.add_parser("shapespace", help="latent shape space over a dataset", formatter_class=_Formatter)
    ss = s.add_subparsers(dest="action", required=True)
    st = ss.add_parser("train", help="train decoder and latent table", formatter_class=_Formatter)
    st.add_argument("dataset", help='JSON manifest {"shapes": [{"id": ..., "path": ...}]}; paths are geometry or training-set files')
    st.add_argument("--latent", type=int, default=8, help=f"latent dimension; 256 at full scale ({TOOL})")
    st.add_argument("--lambda", dest="lam", type=float, default=1e-3, help=f"weight of the latent 1-norm ({PAPER})")
    st.add_argument("--lr", type=float, default=5e-4, help=f"initial Adam learning rate ({PAPER})")
    st.add_argument("--latent-lr", type=float, default=1e-2, help=f"learning rate of the latent table ({TOOL})")
    st.add_argument("--halve-every", type=int, default=500, help=f"epochs between learning-rate halvings ({PAPER})")
    st.add_argument("--epochs", type=int, default=2000, help=f"training epochs ({PAPER})")
    st.add_argument("--batch-size", type=int, default=64, help=f"shapes per step ({PAPER})")
    st.add_argument("--points-per-shape", type=int, default=1000, help=f"samples per shape and step ({TOOL})")
    st.add_argument("--layers", type=int, default=8, help=f"layers including the output layer ({PAPER})")
    st.add_argument("--width", type=int, default=512, help=f"hidden width ({PAPER})")
    st.add_argument("--second-sigma", type=float, default=0.2, help=f"far splat width for geometry inputs ({PAPER})")
    _common(st)
    sf = ss.add_parser("fit-latent", help="optimize a latent code for a new shape", formatter_class=_Formatter)
    sf.add_argument("model", help="directory written by 'shapespace train'")
    sf.add_argument("input", help="geometry or training-set file")
    sf.add_argument("--iters", type=int, default=800, help=f"Adam iterations on the latent mean ({PAPER})")
    sf.add_argument("--lr", type=float, default=1e-2, help=f"learning rate ({TOOL})")
    sf.add_argument("--second-sigma", type=float, default=0.2, help=f"far splat width for geometry inputs ({PAPER})")
    _common(sf)
    si = ss.add_parser("interpolate", help="meshes along the segment between two codes", formatter_class=_Formatter)
    si.add_argument("model", help="directory written by 'shapespace train'")
    si.add_argument("a", help="shape id or latent JSON file")
    si.add_argument("b", help="shape id or latent JSON file")
    si.add_argument("--steps", type=int, default=11, help=f"number of meshes, t = 0..1 ({TOOL})")
    si.add_argument("--resolution", type=int, default=128, help=f"grid per axis ({TOOL})")
    si.add_argument("--extent", type=float, default=1.5, help=f"half-width of the contouring box ({TOOL})")
    _common(si)
    sc = ss.add_parser("contour", help="mesh of one latent code", formatter_class=_Formatter)
    sc.add_argument("model", help="directory written by 'shapespace train'")
    sc.add_argument("code", help="shape id or latent JSON file")
    sc.add_argument("--resolution", type=int, default=128, help=f"grid per axis ({TOOL})")
    sc.add_argument("--extent", type=float, default=1.5, help=f"half-width of the contouring box ({TOOL})")
    _common(sc)
    return ap


def _command_key(ns) -> str:
    for attr in ("suite", "action"):
        if getattr(ns, attr, None):
            return f"{ns.command} {getattr(ns, attr)}"
    return ns.command


def _subparser(ap, key):
    p = ap
    for name in key.split():
        action = next(a for a in p._actions if isinstance(a, argparse._SubParsersAction))
        p = action.choices[name]
    return p


def parse_args(argv=None):
    """Parse with precedence flag > config file > preset > built-in default."""
    ap = build_parser()
    ns = ap.parse_args(argv)
    key = _command_key(ns)
    overrides = dict(PRESETS[ns.preset].get(key, {}))
    if ns.config:
        try:
            with open(ns.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise InputError(f"{ns.config}: unreadable config ({e})") from None
        overrides.update({k.replace("-", "_"): v for k, v in cfg.items()})
    if overrides:
        sp = _subparser(ap, key)
        known = {a.dest for a in sp._actions}
        unknown = set(overrides) - known
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        sp.set_defaults(**overrides)
        ns = ap.parse_args(argv)
    return ns


def _file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out, ns, inputs=(), extra=None):
    resolved = {k: v for k, v in vars(ns).items() if k not in ("func",)}
    doc = {
        "tool": "sal",
        "version": __version__,
        "command": _command_key(ns),
        "seed": ns.seed,
        "config": resolved,
        "inputs": {str(p): _file_hash(p) for p in inputs},
    }
    if extra:
        doc.update(extra)
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=str)
    return doc


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def _cache_dir():
    d = os.environ.get("SAL_CACHE_DIR")
    if d:
        os.makedirs(d, exist_ok=True)
    return d


def _training_set_for(path, sampler_cfg: SamplerConfig):
    """Training set for a geometry or training-set file, cached under SAL_CACHE_DIR."""
    if path.endswith(".bin") or path.endswith(".salsmpl"):
        return load_training_set(path)[0]
    cache = _cache_dir()
    key = hashlib.sha256(bytes.fromhex(_file_hash(path)) + sampler_cfg.digest()).hexdigest()
    cpath = os.path.join(cache, key + ".salsmpl") if cache else None
    if cpath and os.path.exists(cpath):
        return load_training_set(cpath)[0]
    samples = build_training_set(read_geometry(path), sampler_cfg)
    if cpath:
        save_training_set(cpath, samples, sampler_cfg.digest())
    return samples


# --- commands ---------------------------------------------------------------


def cmd_recon(ns) -> int:
    data = read_geometry(ns.input)
    second = ns.second_sigma if ns.second_sigma == "farthest" else float(ns.second_sigma)
    spp = ns.samples_per_point if ns.samples_per_point == "auto" else int(ns.samples_per_point)
    radius = ns.init_radius if ns.init_radius == "auto" else float(ns.init_radius)
    est = SALReconstructor(
        loss=ns.loss, ell=ns.ell, n_layers=ns.layers, width=ns.width, phi=ns.phi, gamma=ns.gamma,
        knn_k=ns.knn, second_sigma=second, samples_per_point=spp, epochs=ns.epochs, lr=ns.lr,
        batch_size=ns.batch_size, init_radius=radius, resample=ns.resample, random_state=ns.seed,
    )
    out = ns.out
    ckpt = os.path.join(out, "model.ckpt")

    def progress(epoch, loss, params):
        if epoch == 1 or epoch % max(1, ns.epochs // 20) == 0:
            _log(f"epoch {epoch:6d}  loss {loss:.6f}")
        if ns.checkpoint_every and epoch % ns.checkpoint_every == 0:
            save_mlp(ckpt, params, est.mlp_config_, {"epoch": epoch})

    est.fit(data, callback=progress)
    meta = {"center": est.center_.tolist(), "scale": est.scale_, "init_radius": est.init_radius_, "epoch": ns.epochs}
    save_mlp(ckpt, est.params_, est.mlp_config_, meta)
    write_loss_trace(os.path.join(out, "loss.csv"), est.loss_trace_)
    surface = est.extract_surface(ns.resolution)
    outputs = ["model.ckpt", "loss.csv"]
    if data.dim == 2:
        grid = est.evaluate_grid(ns.resolution)
        levels = [float(x) for x in ns.levels.split(",") if x.strip()] if ns.levels else []
        pts = data.points
        write_levelset_svg(os.path.join(out, "recon.svg"), grid, pts, levels, est._field())
        with open(os.path.join(out, "recon_segments.json"), "w") as fh:
            json.dump({"vertices": surface.vertices.tolist(), "segments": surface.segments.tolist()}, fh)
        outputs += ["recon.svg", "recon_segments.json"]
    else:
        write_ply(os.path.join(out, "recon.ply"), surface)
        outputs.append("recon.ply")
    write_manifest(out, ns, [ns.input], {
        "resolved": {
            "mlp": est.mlp_config_.to_dict(), "sampler": est.sampler_config_.to_dict(), "train": est.train_config_.to_dict(),
        },
        "outputs": outputs,
    })
    _log(f"wrote {', '.join(outputs)} to {out}")
    return EXIT_OK


def _report(ns, report) -> int:
    path = os.path.join(ns.out, f"verify_{report['suite']}.json")
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2)
    print(json.dumps(report, indent=2))
    print(f"{report['suite']}: {'PASS' if report['passed'] else 'FAIL'}")
    write_manifest(ns.out, ns)
    return EXIT_OK if report["passed"] else EXIT_VERIFY


def _ints(s):
    return tuple(int(x) for x in str(s).split(",") if x.strip())


def cmd_verify(ns) -> int:
    if ns.suite == "init":
        rep = V.verify_init(_ints(ns.widths), ns.radius, ns.dim, ns.layers, range(ns.seed, ns.seed + ns.seeds), ns.samples)
    elif ns.suite == "plane":
        rep = V.verify_plane(ns.dim, ns.sigma, ns.samples, seed=ns.seed)
    elif ns.suite == "gradcheck":
        rep = V.verify_gradcheck(ns.trials, ns.h, ns.tol, width=ns.width, seed=ns.seed)
        print(f"max relative error {rep['max_rel_err']:.3e} (threshold {ns.tol:g})")
    else:
        rep = V.verify_contour(_ints(ns.resolutions), _ints(ns.resolutions_3d))
    return _report(ns, rep)


def _eval_points(path, n, seed):
    g = read_geometry(path)
    if isinstance(g, TriangleSoup):
        return mesh_to_eval_cloud(g, n, seed).points
    return g.points


def cmd_chamfer(ns) -> int:
    a = _eval_points(ns.a, ns.n, ns.seed)
    b = _eval_points(ns.b, ns.n, ns.seed + 1)
    if a.shape[1] != b.shape[1]:
        raise InputError("inputs have different dimensions")
    rep = chamfer_report(a, b)
    value = rep.symmetric if ns.mode == "symmetric" else rep.one_sided_a_to_b
    row = {"a": ns.a, "b": ns.b, "a_to_b": rep.one_sided_a_to_b * ns.scale, "b_to_a": rep.one_sided_b_to_a * ns.scale,
           "symmetric": rep.symmetric * ns.scale, "reported": value * ns.scale, "scale": ns.scale}
    with open(os.path.join(ns.out, "chamfer.csv"), "w") as fh:
        fh.write(to_csv([row]))
    print(format_table([row]))
    write_manifest(ns.out, ns, [ns.a, ns.b])
    return EXIT_OK


def _load_model(model_dir):
    try:
        params, cfg, meta = load_mlp(os.path.join(model_dir, "decoder.ckpt"))
        table = LatentTable.load(os.path.join(model_dir, "latents.ckpt"))
    except FileNotFoundError as e:
        raise InputError(f"{model_dir}: missing model file ({e.filename})") from None
    return params, cfg, table


def _code(table, spec):
    if os.path.exists(spec):
        with open(spec) as fh:
            return np.asarray(json.load(fh)["mu"], dtype=np.float64)
    try:
        return table[spec].mu
    except KeyError as e:
        raise InputError(str(e)) from None


def _box(extent, d):
    return (np.full(d, -extent), np.full(d, extent))


def cmd_shapespace(ns) -> int:
    out = ns.out
    if ns.action == "train":
        ds = ShapeDataset.from_manifest(ns.dataset)
        scfg = SamplerConfig(second_sigma=ns.second_sigma, include_surface=False, seed=ns.seed)
        sets = []
        for sid, path in zip(ds.ids, ds.sources):
            if not os.path.exists(path):
                raise InputError(f"shape {sid!r}: {path} not found")
            sets.append(_training_set_for(path, scfg))
        mcfg = MlpConfig.standard(sets[0].dim, ns.layers, ns.width, True, ns.latent)
        tcfg = TrainConfig.shape_space(epochs=ns.epochs, lr=ns.lr, halve_every=ns.halve_every, batch_size=ns.batch_size,
                                       seed=ns.seed, loss=LossConfig("l2", 1.0, ns.lam))
        res = train_shapespace(sets, mcfg, tcfg, points_per_shape=ns.points_per_shape, latent_lr=ns.latent_lr,
                               callback=lambda e, l: _log(f"epoch {e:6d}  loss {l:.6f}") if e == 1 or e % max(1, ns.epochs // 20) == 0 else None)
        res.table.ids = ds.ids
        save_mlp(os.path.join(out, "decoder.ckpt"), res.params, mcfg, {"epochs": ns.epochs})
        res.table.save(os.path.join(out, "latents.ckpt"))
        write_loss_trace(os.path.join(out, "loss.csv"), res.trace)
        write_manifest(out, ns, [ns.dataset] + list(ds.sources), {"resolved": {"mlp": mcfg.to_dict(), "train": tcfg.to_dict()}})
        _log(f"wrote decoder.ckpt, latents.ckpt, loss.csv to {out}")
        return EXIT_OK

    params, cfg, table = _load_model(ns.model)
    d = cfg.input_dim
    if ns.action == "fit-latent":
        samples = _training_set_for(ns.input, SamplerConfig(second_sigma=ns.second_sigma, include_surface=False, seed=ns.seed))
        res = fit_latent(params, cfg, samples, ns.iters, ns.lr, seed=ns.seed)
        doc = {"mu": res.code.mu.tolist(), "eta": res.code.eta.tolist(), "loss": res.loss, "loss_at_origin": res.loss_at_origin}
        with open(os.path.join(out, "latent.json"), "w") as fh:
            json.dump(doc, fh, indent=2)
        print(f"loss_R {res.loss:.6f} (at origin {res.loss_at_origin:.6f})")
        write_manifest(out, ns, [ns.input])
        return EXIT_OK
    if ns.action == "interpolate":
        a, b = LatentCode(_code(table, ns.a), -np.ones(cfg.latent_dim)), LatentCode(_code(table, ns.b), -np.ones(cfg.latent_dim))
        if ns.steps < 2:
            raise InputError("--steps must be >= 2")
        names = []
        for i, t in enumerate(np.linspace(0.0, 1.0, ns.steps)):
            code = interpolate_latent(a, b, float(t))
            grid = evaluate_grid(mlp_field(params, cfg, code.mu), _box(ns.extent, d), ns.resolution)
            name = f"interp_{i:02d}.ply"
            write_ply(os.path.join(out, name), extract_zero_set(grid, mlp_field(params, cfg, code.mu) if d == 2 else None))
            names.append(name)
        write_manifest(out, ns, extra={"outputs": names})
        _log(f"wrote {len(names)} meshes to {out}")
        return EXIT_OK
    mu = _code(table, ns.code)
    field = mlp_field(params, cfg, mu)
    surface = extract_zero_set(evaluate_grid(field, _box(ns.extent, d), ns.resolution), field if d == 2 else None)
    write_ply(os.path.join(out, "contour.ply"), surface)
    write_manifest(out, ns, extra={"outputs": ["contour.ply"]})
    return EXIT_OK


COMMANDS = {"recon": cmd_recon, "verify": cmd_verify, "chamfer": cmd_chamfer, "shapespace": cmd_shapespace}


def main(argv=None) -> int:
    try:
        ns = parse_args(argv)
    except InputError as e:
        _log(f"error: {e}")
        return EXIT_INPUT
    os.makedirs(ns.out, exist_ok=True)
    try:
        with threadpool_limits(ns.threads):
            return COMMANDS[ns.command](ns)
    except (InputError, CheckpointError) as e:
        _log(f"input error: {e}")
        return EXIT_INPUT
    except NumericalAbort as e:
        _log(f"numerical abort: {e}")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
