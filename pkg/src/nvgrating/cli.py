"""Command-line entry point: ``nvgrating <subcommand> ...``.

Every run writes a manifest (input digests, seed, version, outputs). Usage
errors exit with 2, data and validation errors with 1 and a one-line JSON
message on stderr.
"""

import argparse
import hashlib
import io as io_
import json
import sys
from pathlib import Path

import numpy as np

from . import TWO_PI, __version__
from . import io as fio
from ._parallel import set_threads
from .bloch import dephase_profile, excitation_profile
from .fieldmodel import (PSEUDOPOLE, MONOPOLE, SensorGeometry, ScanGrid, TipFieldModel,
                         field_map, fit_tip_model)
from .grape import GrapeConfig, GratingSpec, TargetProfile, initial_guess, make_grating_target, \
    optimize
from .imaging import ReconstructionConfig, assign_fringes, build_response, reconstruct, \
    simulate_scan, subtract_bias
from .sensitivity import SensitivityParams, contrast, eta, optimal_spacing
from . import recipes


class DataError(ValueError):
    pass


class Run:
    """Collects input digests and output paths for the manifest."""

    def __init__(self, name, args):
        self.name = name
        self.seed = args.seed
        self.inputs = {}
        self.outputs = []
        self.stdout = None

    def read(self, label, path):
        if path is None:
            return None
        p = Path(path)
        if not p.exists():
            raise DataError(f"{label}: file not found: {path}")
        self.inputs[label] = {"path": str(path), "sha256": fio.sha256(p)}
        side = fio.sidecar(p)
        if side.exists():
            self.inputs[label + ".sidecar"] = {"path": str(side), "sha256": fio.sha256(side)}
        return p

    def wrote(self, *paths):
        for p in paths:
            self.outputs.append(str(p))
            side = fio.sidecar(p)
            if side.exists() and str(side) not in self.outputs and not str(p).endswith(".json"):
                self.outputs.append(str(side))

    def emit(self, out, writer):
        """Run ``writer`` on ``out``, or on stdout when no output path is given."""
        if out:
            writer(out)
            self.wrote(out)
            return
        buf = io_.StringIO()
        writer(buf)
        text = buf.getvalue()
        sys.stdout.write(text)
        self.stdout = hashlib.sha256(text.encode()).hexdigest()

    def manifest(self):
        outputs = [{"path": p, "sha256": fio.sha256(p)} for p in self.outputs]
        if self.stdout is not None:
            outputs.append({"path": "-", "sha256": self.stdout})
        return {"subcommand": self.name, "version": __version__, "seed": self.seed,
                "inputs": self.inputs, "outputs": outputs}


# ---------------------------------------------------------------- loaders

def _target(d):
    if "grating" in d:
        spec = GratingSpec.from_dict(d["grating"])
        return make_grating_target(spec, fio.grid_from_dict(d["grid"]))
    w = d.get("weights")
    return TargetProfile(TWO_PI * np.asarray(d["grid_hz"], dtype=float),
                         np.asarray(d["target_mz"], dtype=float),
                         None if w is None else np.asarray(w, dtype=float))


def _params(run, path):
    if path is None:
        return SensitivityParams()
    return SensitivityParams.from_dict(fio.read_json(run.read("params", path)))


def _geometry(d):
    return SensorGeometry.from_dict(d) if d else SensorGeometry()


# ---------------------------------------------------------------- subcommands

def cmd_optimize(args, run):
    target = _target(fio.read_json(run.read("target", args.target)))
    cfg_dict = fio.read_json(run.read("config", args.config)) if args.config else {}
    config = GrapeConfig.from_dict({**cfg_dict, "rng_seed": args.seed})
    if args.init:
        start = fio.load_pulse(run.read("init", args.init))
    else:
        p = cfg_dict.get("pulse", {})
        start = initial_guess(target, float(p.get("omega_max_rad_s", recipes.DESK_OMEGA_MAX)),
                              float(p.get("duration_s", recipes.DESK_DURATION)),
                              int(p.get("n_steps", recipes.DESK_STEPS)))
    pulse, trace = optimize(start, target, config)
    fio.save_pulse(args.out, pulse)
    run.wrote(args.out)
    if args.trace:
        fio.write_trace(args.trace, trace)
        run.wrote(args.trace)
    print(f"infidelity={trace.infidelity[-1]:.6g} iterations={trace.accepted} "
          f"converged={trace.converged} stalled={trace.stalled}")


def cmd_profile(args, run):
    pulse = fio.load_pulse(run.read("pulse", args.pulse))
    grid = fio.grid_from_dict(fio.read_json(run.read("grid", args.grid)))
    prof = excitation_profile(pulse, grid, args.scale)
    if args.t2_star is not None:
        prof = dephase_profile(prof, args.t2_star)
    run.emit(args.out, lambda f: fio.write_profile(f, prof))


def _parse_sweep(text):
    try:
        lo, hi, n = text.split(":")
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError:
        raise DataError(f"--sweep must be min_hz:max_hz:n, got {text!r}") from None
    if not (0 < lo < hi) or n < 2:
        raise DataError("--sweep needs 0 < min_hz < max_hz and n >= 2")
    return lo, hi, n


def cmd_sensitivity(args, run):
    params = _params(run, args.params)
    lo, hi, n = _parse_sweep(args.sweep)
    d = np.geomspace(lo, hi, n)
    c, e = contrast(d, params), eta(d, params)
    d_opt = optimal_spacing(params)
    e_opt = float(eta(d_opt, params))
    summary = (f"delta_opt_hz={d_opt:.6g} eta_opt_uT_sqrtHz={e_opt * 1e6:.2f} "
               f"sweep_argmin_hz={d[np.argmin(e)]:.6g}")
    if args.out:
        print(summary)
    run.emit(args.out, lambda f: fio.write_rows(
        f, ["delta_hz", "contrast", "eta_T_per_sqrtHz"], zip(d, c, e), trailer=[summary]))


def cmd_fieldmap(args, run):
    md = fio.read_json(run.read("model", args.model))
    model = TipFieldModel.from_dict(md)
    geometry = _geometry(md.get("geometry"))
    if args.geometry:
        geometry = _geometry(fio.read_json(run.read("geometry", args.geometry)))
    grid = ScanGrid.from_dict(fio.read_json(run.read("grid", args.grid)))
    fmap = field_map(model, geometry, grid)
    fio.write_field_map(args.out, fmap, {"geometry": geometry.to_dict(), "model": model.to_dict()})
    run.wrote(args.out)


def _response(run, pulse_path, params, cfg):
    pulse = fio.load_pulse(run.read("pulse", pulse_path))
    if "response_grid" not in cfg:
        raise DataError("config needs a 'response_grid' {min_hz, max_hz, n}")
    prof = excitation_profile(pulse, fio.grid_from_dict(cfg["response_grid"]))
    return build_response(prof, params.t2_star, params.c0, cfg.get("spacing_hz"), params.gamma)


def cmd_simulate_scan(args, run):
    fmap, side = fio.read_field_map(run.read("map", args.map))
    params = _params(run, args.params)
    cfg = fio.read_json(run.read("config", args.config))
    response = _response(run, args.pulse, params, cfg)
    config = ReconstructionConfig.from_dict(cfg)
    image = simulate_scan(fmap, response, config, args.seed)
    fio.write_image(args.out, image, {"params": params.to_dict(), "config": cfg,
                                      "geometry": side.get("geometry"), "seed": args.seed})
    run.wrote(args.out)


def cmd_reconstruct(args, run):
    image, side = fio.read_image(run.read("image", args.image))
    params = (_params(run, args.params) if args.params
              else SensitivityParams.from_dict(side.get("params", {})))
    cfg = fio.read_json(run.read("config", args.config)) if args.config else dict(side.get("config", {}))
    response = _response(run, args.pulse, params, cfg)
    anchors = fio.read_anchors(run.read("anchors", args.anchors))
    cfg = {k: v for k, v in cfg.items() if k not in ("seed_anchors", "noise_model")}
    config = ReconstructionConfig.from_dict({**cfg, "seed_anchors": anchors})
    initial = assign_fringes(image, response, config)
    result = reconstruct(image, response, initial, config)
    out = result if args.subtract_bias is None else subtract_bias(result, args.subtract_bias)
    fio.write_field_map(args.out, out, {"unanchored_regions": initial.info["unanchored_regions"],
                                        "converged": result.info["converged"],
                                        "bias_subtracted_T": args.subtract_bias or 0.0})
    run.wrote(args.out)
    if args.diagnostics:
        fio.write_diagnostics(args.diagnostics, result)
        run.wrote(args.diagnostics)


def cmd_fit_tip(args, run):
    fmap, side = fio.read_field_map(run.read("map", args.map))
    geometry = _geometry(side.get("geometry"))
    if args.geometry:
        geometry = _geometry(fio.read_json(run.read("geometry", args.geometry)))
    if args.init:
        d = fio.read_json(run.read("init", args.init))
        init, bias = TipFieldModel.from_dict(d), d.get("bias_T")
    else:
        init, bias = recipes.linear_start(fmap, args.family, geometry,
                                          np.array([0.0, 0.0, args.offset_guess]))
    fit = fit_tip_model(fmap, args.family, geometry, init, bias)
    result = {"model": fit.model.to_dict(), "bias_T": fit.bias,
              "rms_residual_T": fit.rms_residual, "converged": fit.converged,
              "evaluations": fit.n_evaluations}
    if args.out:
        print(f"family={args.family} rms_residual_T={fit.rms_residual:.6g} "
              f"converged={fit.converged}")
    run.emit(args.out, lambda f: fio.write_json(f, result))


# ---------------------------------------------------------------- reproduce

def _reproduce_fig2(out, run, seed):
    from .plotting import plot_fig2

    pulse, trace, target, cols, infid = recipes.fig2_data(seed)
    keys = list(cols)
    fio.write_rows(out / "fig2_profile.csv", keys, zip(*(cols[k] for k in keys)))
    fio.save_pulse(out / "fig2_pulse.json", pulse)
    fio.write_trace(out / "fig2_trace.csv", trace)
    fio.write_rows(out / "fig2_waveform.csv", ["t_s", "omega_x_hz", "omega_y_hz"],
                   zip(pulse.times, pulse.steps[:, 0] / TWO_PI, pulse.steps[:, 1] / TWO_PI))
    fio.write_rows(out / "fig2_members.csv", ["amplitude_scale", "infidelity"],
                   zip(recipes.DESK_ENSEMBLE, infid))
    plot_fig2(cols, pulse, trace, out / "fig2.png")
    run.wrote(*(out / n for n in ("fig2_profile.csv", "fig2_pulse.json", "fig2_trace.csv",
                                  "fig2_waveform.csv", "fig2_members.csv", "fig2.png")))


def _reproduce_fig3(out, run, seed, pulse_path):
    from .plotting import plot_fig3

    if pulse_path:
        pulse = fio.load_pulse(run.read("pulse", pulse_path))
    else:
        pulse = recipes.grating_pulse(seed=seed)[0]
    _, data = recipes.fig3_data(pulse)
    rows, panels = [], {}
    for name, (rt, field, n_fringes) in data.items():
        meta = {"lift_m": rt.truth.grid.lift_height, "geometry": recipes.scene_geometry().to_dict()}
        fio.write_image(out / f"fringes_{name}.csv", rt.image, meta)
        fio.write_field_map(out / f"field_{name}.csv", field,
                            {**meta, "bias_subtracted_T": recipes.PAPER_BIAS})
        run.wrote(out / f"fringes_{name}.csv", out / f"field_{name}.csv")
        informative = rt.result.mask & ~rt.result.info["low_information"]
        err = rt.result.b_parallel - rt.truth.b_parallel
        rows.append((name, rt.truth.grid.lift_height, n_fringes,
                     recipes.max_gradient(field, informative),
                     float(np.sqrt(np.mean(err[rt.result.mask] ** 2))),
                     float(np.sqrt(np.mean(err[informative] ** 2)))))
        g = rt.truth.grid
        extent = [g.x[0] * 1e6, g.x[-1] * 1e6, g.y[0] * 1e6, g.y[-1] * 1e6]
        panels[name] = (np.where(rt.image.mask, rt.image.fluorescence, np.nan),
                        np.where(field.mask, field.b_parallel * 1e3, np.nan), extent)
    fio.write_rows(out / "fig3_summary.csv",
                   ["label", "lift_m", "fringes", "max_gradient_T_per_m", "rms_error_T",
                    "rms_error_informative_T"], rows)
    plot_fig3(panels, out / "fig3.png")
    run.wrote(out / "fig3_summary.csv", out / "fig3.png")


def _reproduce_fig4(out, run, seed):
    from .plotting import plot_fig4

    points, fid, curve, fits, d_opt = recipes.fig4_data(seed)
    fio.write_rows(out / "fig4_contrast.csv",
                   ["delta_hz", "delta_t2star", "contrast_sim", "contrast_model", "infidelity"],
                   [(p.spacing_hz, p.ratio, p.contrast_sim, p.contrast_model, p.infidelity)
                    for p in points])
    fio.write_rows(out / "fig4_fid.csv", ["t_s", "contrast"], zip(*fid))
    fio.write_rows(out / "fig4_sensitivity.csv", ["delta_hz", "contrast", "eta_T_per_sqrtHz"],
                   zip(*curve), comments=[f"delta_opt_hz={d_opt:.6g}"])
    fio.write_rows(out / "fig4_tipfit.csv",
                   ["family", "rms_residual_T", "strength", "offset_x_m", "offset_y_m",
                    "offset_z_m", "bias_T", "converged"],
                   [(name, f.rms_residual, f.model.strength, *f.model.tip_offset, f.bias,
                     int(f.converged)) for name, f in fits.items()])
    plot_fig4(points, fid, curve, fits, out / "fig4.png")
    run.wrote(*(out / n for n in ("fig4_contrast.csv", "fig4_fid.csv", "fig4_sensitivity.csv",
                                  "fig4_tipfit.csv", "fig4.png")))


def cmd_reproduce(args, run):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.figure == "fig2":
        _reproduce_fig2(out, run, args.seed)
    elif args.figure == "fig3":
        _reproduce_fig3(out, run, args.seed, args.pulse)
    else:
        _reproduce_fig4(out, run, args.seed)
    print("\n".join(run.outputs))


# ---------------------------------------------------------------- parser

def _common(p, suppress):
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=default(0), help="random seed (default 0)")
    p.add_argument("--threads", type=int, default=default(1), help="worker threads")
    p.add_argument("--manifest", default=default(None),
                   help="manifest path (default: <out>.manifest.json)")


def build_parser():
    parser = argparse.ArgumentParser(prog="nvgrating", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    _common(parser, False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        _common(p, True)
        p.set_defaults(func=func)
        return p

    p = add("optimize", cmd_optimize, "optimise a grating pulse")
    p.add_argument("--target", required=True)
    p.add_argument("--config")
    p.add_argument("--init", help="starting pulse JSON (default: analytic multi-tone guess)")
    p.add_argument("--out", required=True)
    p.add_argument("--trace")

    p = add("profile", cmd_profile, "excitation profile of a pulse")
    p.add_argument("--pulse", required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--scale", type=float, default=1.0, help="Rabi amplitude scale")
    p.add_argument("--t2-star", type=float, help="apply Gaussian dephasing (s)")
    p.add_argument("--out", help="output CSV (default: stdout)")

    p = add("sensitivity", cmd_sensitivity, "sensitivity versus grating spacing")
    p.add_argument("--params")
    p.add_argument("--sweep", required=True, help="min_hz:max_hz:n (log spaced)")
    p.add_argument("--out", help="output CSV (default: stdout)")

    p = add("fieldmap", cmd_fieldmap, "tip field map over a scan grid")
    p.add_argument("--model", required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--geometry")
    p.add_argument("--out", required=True)

    p = add("simulate-scan", cmd_simulate_scan, "fringe image of a field map")
    p.add_argument("--map", required=True)
    p.add_argument("--pulse", required=True)
    p.add_argument("--params")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = add("reconstruct", cmd_reconstruct, "field map from a fringe image")
    p.add_argument("--image", required=True)
    p.add_argument("--pulse", required=True)
    p.add_argument("--anchors", required=True)
    p.add_argument("--params")
    p.add_argument("--config")
    p.add_argument("--subtract-bias", type=float, help="bias field to remove (T)")
    p.add_argument("--out", required=True)
    p.add_argument("--diagnostics")

    p = add("fit-tip", cmd_fit_tip, "fit a tip model to a field map")
    p.add_argument("--map", required=True)
    p.add_argument("--family", required=True, choices=[PSEUDOPOLE, MONOPOLE])
    p.add_argument("--geometry")
    p.add_argument("--init")
    p.add_argument("--offset-guess", type=float, default=100e-9,
                   help="starting pole height above the apex (m)")
    p.add_argument("--out", help="output JSON (default: stdout)")

    p = add("reproduce", cmd_reproduce, "desk-scale figure recipes")
    p.add_argument("figure", choices=["fig2", "fig3", "fig4"])
    p.add_argument("--pulse", help="reuse a grating pulse (fig3)")
    p.add_argument("--out", required=True, help="output directory")
    return parser


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        set_threads(args.threads)
        r = Run(args.command, args)
        args.func(args, r)
        if args.command == "reproduce":
            default = Path(args.out) / "manifest.json"
        elif args.out:
            default = Path(str(args.out) + ".manifest.json")
        else:
            default = Path(f"{args.command}.manifest.json")
        fio.write_json(args.manifest or default, r.manifest())
    except (ValueError, KeyError, TypeError, OSError, json.JSONDecodeError) as exc:
        kind = type(exc).__name__
        msg = f"missing field {exc}" if isinstance(exc, KeyError) else str(exc)
        print(json.dumps({"error": kind, "message": msg}), file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
